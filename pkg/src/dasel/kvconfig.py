"""Flat ``key = value`` text configs (``#`` starts a comment)."""

from __future__ import annotations


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source="<config>") -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        out[key] = value
    return out


def read_kv(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_kv(fh.read(), str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def format_kv(values: dict, header=None) -> str:
    lines = [f"# {h}" for h in (header or [])]
    for k, v in values.items():
        s = str(v)
        if "\n" in s or "#" in s:
            raise ConfigError(f"value for {k!r} cannot hold newlines or '#'")
        lines.append(f"{k} = {s}")
    return "\n".join(lines) + "\n"


def write_kv(path, values: dict, header=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_kv(values, header))


def get(cfg, key, default=None, cast=str):
    if key not in cfg or cfg[key] == "":
        return default
    try:
        if cast is bool:
            return cfg[key].strip().lower() in ("1", "true", "yes", "on")
        return cast(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {cfg[key]!r}") from exc


def indexed(cfg, prefix) -> dict:
    """``{index: {field: value}}`` for keys like ``room.3.name``."""
    out = {}
    for k, v in cfg.items():
        parts = k.split(".")
        if len(parts) == 3 and parts[0] == prefix:
            try:
                i = int(parts[1])
            except ValueError as exc:
                raise ConfigError(f"bad index in {k}") from exc
            out.setdefault(i, {})[parts[2]] = v
    return dict(sorted(out.items()))
