"""Command line: ``dasel <subcommand> [options]``.

Every option can also come from a flat ``key = value`` file given with
``--config`` (keys are option names with underscores); flags win over the
file, the file wins over defaults. Each run writes ``manifest.txt`` next to
its outputs, and that manifest is itself a valid ``--config``.

Exit codes: 0 success, 1 usage, 2 data, 3 numerical.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kvconfig
from .ingest import DataError
from .nn import kernels
from .nn.archive import ArchiveError, load_model, save_model
from .nn.model import NumericalError
from .nn.train import TrainConfig, TrainingError

log = logging.getLogger("dasel")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# option name -> (type, default, help); shared by flags and config keys
OPTIONS = {
    "simulate": {
        "preset": (str, None, "built-in facility (benchmark, small) used when no --config is given"),
        "seed": (int, None, "override the simulation seed"),
        "days": (int, None, "override the number of days"),
        "out": (str, None, "output directory"),
    },
    "prepare": {
        "raw": (str, None, "directory with ble_*.csv, labels.csv and macmap.csv"),
        "observer": (int, 97, "annotation observer id to keep"),
        "labeled_csv": (bool, True, "also write labeled.csv (per-reading labels)"),
        "out": (str, None, "output directory"),
    },
    "train": {
        "frames": (str, None, "prepared frame directory"),
        "days": (str, "", "comma-separated YYYY-MM-DD days to train on (default all)"),
        "seeds": (str, "42,1042,2042,3042,4042", "comma-separated seeds, one model each"),
        "epochs": (int, 30, "training epochs"),
        "batch": (int, 32, "mini-batch size"),
        "lr": (float, 1e-3, "Adam learning rate"),
        "out": (str, None, "output directory for model archives"),
        "jobs": (int, 0, "worker processes (0 = available cores)"),
    },
    "predict": {
        "frames": (str, None, "prepared frame directory"),
        "models": (str, None, "directory of model archives"),
        "days": (str, "", "comma-separated days to predict (default all)"),
        "directions": (str, "all", "'all' or comma-separated direction names"),
        "smoothing": (bool, True, "apply temporal smoothing"),
        "out": (str, None, "prediction CSV path"),
        "jobs": (int, 0, "worker processes (0 = available cores)"),
    },
    "evaluate": {
        "truth": (str, None, "prepared frame directory holding ground truth"),
        "predictions": (str, None, "prediction CSV to score"),
        "label": (str, "smoothed", "which predicted label to score: smoothed or final"),
        "cv": (str, None, "prepared frame directory for day-held-out cross-validation"),
        "pipeline": (str, "baseline,dasel", "comma-separated pipelines for --cv"),
        "seeds": (str, "42,1042,2042,3042,4042", "seeds for the ensemble pipelines"),
        "epochs": (int, 30, "training epochs for the ensemble pipelines"),
        "batch": (int, 32, "mini-batch size"),
        "lr": (float, 1e-3, "Adam learning rate"),
        "baseline_epochs": (int, 10, "epochs for the baseline"),
        "out": (str, None, "output directory for report CSVs"),
        "jobs": (int, 0, "worker processes (0 = available cores)"),
    },
    "gradcheck": {
        "models": (int, 5, "number of random toy models"),
        "seed": (int, 0, "base seed"),
        "epsilon": (float, 1e-5, "finite-difference step"),
        "coords": (int, 200, "coordinates checked per model"),
        "tolerance": (float, 1e-4, "maximum accepted relative error"),
        "out": (str, None, "optional output directory for the manifest and report"),
    },
}


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def build_parser():
    p = _Parser(prog="dasel", description="Room-level BLE localization pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, opts in OPTIONS.items():
        sp = sub.add_parser(name, help=f"{name} stage")
        sp.add_argument("--config", help="flat key = value file (a previous manifest works)")
        for opt, (typ, default, help_) in opts.items():
            flag = "--" + opt.replace("_", "-")
            if typ is bool:
                sp.add_argument(flag, dest=opt, type=_bool, default=None, metavar="BOOL",
                                help=f"{help_} (default {default})")
                if default:
                    sp.add_argument("--no-" + opt.replace("_", "-"), dest=opt,
                                    action="store_const", const=False, help=argparse.SUPPRESS)
            else:
                sp.add_argument(flag, dest=opt, type=typ, default=None,
                                help=help_ + (f" (default {default})" if default not in (None, "") else ""))
    return p


def resolve_options(command, ns):
    """Merge flags > config file > defaults; returns (options, raw config)."""
    opts = OPTIONS[command]
    cfg = {}
    if ns.config:
        if not Path(ns.config).is_file():
            raise UsageError(f"config file {ns.config} not found")
        cfg = kvconfig.read_kv(ns.config)
        if cfg.get("command", command) != command:
            raise UsageError(f"config was written by '{cfg['command']}', not '{command}'")
    out = {}
    for key, (typ, default, _) in opts.items():
        flag = getattr(ns, key, None)
        if flag is not None:
            out[key] = flag
        elif key in cfg:
            try:
                out[key] = _bool(cfg[key]) if typ is bool else typ(cfg[key])
            except ValueError as exc:
                raise UsageError(f"bad config value for {key}: {cfg[key]!r}") from exc
        else:
            out[key] = default
    return out, cfg


def _require(opts, *names):
    missing = [n for n in names if opts.get(n) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _jobs(opts):
    from .parallel import default_jobs
    j = opts.get("jobs") or 0
    return default_jobs() if j <= 0 else j


def _seeds(text):
    try:
        seeds = [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise UsageError("at least one seed is required")
    return seeds


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command, opts, argv, inputs, outputs, started, extra=None):
    values = {"command": command}
    values.update({k: ("" if v is None else v) for k, v in opts.items()})
    values.update(extra or {})
    values["manifest.argv"] = " ".join(argv)
    values["manifest.version"] = __version__
    values["manifest.kernels"] = kernels.BACKEND
    values["manifest.python"] = platform.python_version()
    values["manifest.numpy"] = np.__version__
    for p in inputs:
        values[f"manifest.input.{Path(p).name}"] = sha256_file(p)
    for p in outputs:
        values[f"manifest.output.{Path(p).name}"] = sha256_file(p)
    values["manifest.seconds"] = f"{time.perf_counter() - started:.3f}"
    kvconfig.write_kv(path, values, [f"dasel {command} run manifest"])


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_simulate(opts, cfg, argv, started):
    from .simulator import FacilityConfig, load_preset, write_dataset
    _require(opts, "out")
    over = {k: opts[k] for k in ("seed", "days") if opts[k] is not None}
    has_layout = any(k.startswith(("room.", "beacon.")) for k in cfg)
    base = {}
    if opts["preset"] or not has_layout:
        base = {k: str(v) for k, v in load_preset(opts["preset"] or "small").to_kv().items()}
    base.update({k: v for k, v in cfg.items() if k != "preset"})
    facility = FacilityConfig.from_kv(base, **over)
    out = Path(opts["out"])
    digests = write_dataset(facility, out)
    write_manifest(out / "manifest.txt", "simulate", {"out": opts["out"]}, argv, [],
                   [out / f for f in digests], started, facility.to_kv())
    print(f"wrote {len(digests)} files to {out}")


def cmd_prepare(opts, cfg, argv, started):
    from .pipeline import prepare, raw_files, write_prepared
    _require(opts, "raw", "out")
    prep = prepare(opts["raw"], opts["observer"])
    out = Path(opts["out"])
    files = write_prepared(prep, out, opts["labeled_csv"])
    ble, labels, macs = raw_files(opts["raw"])
    write_manifest(out / "manifest.txt", "prepare", opts, argv, ble + [labels, macs],
                   [out / f for f in files], started)
    errors = sum(len(r.errors) for r in prep.reports)
    print(f"frames {len(prep.table)}  coverage {prep.coverage:.6f}  "
          f"rejected seconds {prep.rejected_seconds}  row errors {errors}")


def cmd_train(opts, cfg, argv, started):
    from .pipeline import load_frames, select_days, train_models
    _require(opts, "frames", "out")
    seeds = _seeds(opts["seeds"])
    table = select_days(load_frames(opts["frames"], need_stats=False), opts["days"])
    config = TrainConfig(epochs=opts["epochs"], batch_size=opts["batch"], learning_rate=opts["lr"])
    models, seg = train_models(table, config, seeds, _jobs(opts))
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for m in models:
        p = out / f"model_seed{m.seed}.dsl"
        save_model(m, p)
        paths.append(p)
    extra = {f"manifest.final_loss.{m.seed}": f"{m.loss_log[-1]:.9f}" for m in models}
    extra.update({"manifest.sequences": len(seg.sequences), "manifest.discarded_runs": seg.discarded,
                  "manifest.truncated_runs": seg.truncated,
                  "manifest.adam_beta1": config.adam_beta1, "manifest.adam_beta2": config.adam_beta2,
                  "manifest.adam_epsilon": config.adam_epsilon})
    frames_dir = Path(opts["frames"])
    write_manifest(out / "manifest.txt", "train", opts, argv, [frames_dir / "frames.csv"], paths,
                   started, extra)
    print(f"trained {len(models)} model(s) on {len(seg.sequences)} sequences -> {out}")


def _load_models(models_dir):
    d = Path(models_dir)
    paths = sorted(d.glob("*.dsl"))
    if not paths:
        raise DataError(f"no model archives (*.dsl) in {d}")
    return [load_model(p) for p in paths], paths


def cmd_predict(opts, cfg, argv, started):
    from .ensemble import write_predictions_csv
    from .pipeline import load_frames, predict_frames, select_days
    _require(opts, "frames", "models", "out")
    table = select_days(load_frames(opts["frames"], need_stats=False), opts["days"])
    models, paths = _load_models(opts["models"])
    pred = predict_frames(table, models, opts["directions"], opts["smoothing"], _jobs(opts))
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions_csv(out, pred)
    write_manifest(out.with_name(out.stem + ".manifest.txt"), "predict", opts, argv,
                   [Path(opts["frames"]) / "frames.csv"] + paths, [out], started)
    print(f"predicted {len(pred)} frames with {len(models)} model(s) -> {out}")


def cmd_evaluate(opts, cfg, argv, started):
    if opts["cv"]:
        return _evaluate_cv(opts, argv, started)
    from .ensemble import read_predictions_csv
    from .evaluation import macro_f1
    from .pipeline import load_frames
    _require(opts, "truth", "predictions", "out")
    if opts["label"] not in ("smoothed", "final"):
        raise UsageError("--label must be 'smoothed' or 'final'")
    truth = load_frames(opts["truth"], need_stats=False)
    if truth.room is None:
        raise DataError("truth frames carry no room labels")
    pred = read_predictions_csv(opts["predictions"])
    pos = np.minimum(np.searchsorted(pred.timestamp, truth.timestamp), max(len(pred) - 1, 0))
    hit = pred.timestamp[pos] == truth.timestamp if len(pred) else np.zeros(len(truth), dtype=bool)
    if not np.all(hit):
        raise DataError(f"{int((~hit).sum())} truth frames have no prediction")
    labels = pred.labels(opts["label"] == "smoothed")[pos]
    rep = macro_f1(truth.room, labels)
    rep.unknown_classes = [c for c in rep.per_class_f1 if c not in pred.classes]
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    lines = ["class,f1"] + [f"{c},{v:.6f}" for c, v in rep.per_class_f1.items()]
    lines.append(f"macro,{rep.macro_f1:.6f}")
    (out / "scores.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(out / "manifest.txt", "evaluate", opts, argv,
                   [Path(opts["truth"]) / "frames.csv", Path(opts["predictions"])],
                   [out / "scores.csv"], started,
                   {"manifest.unknown_classes": ";".join(rep.unknown_classes)})
    print(f"macro F1 {rep.macro_f1:.6f} over {len(rep.per_class_f1)} classes")
    if rep.unknown_classes:
        print("classes absent from the model's class table: " + ", ".join(rep.unknown_classes))


def _evaluate_cv(opts, argv, started):
    from .ensemble import write_predictions_csv
    from .evaluation import write_folds_csv, write_per_class_csv, write_results_csv
    from .pipeline import APPROACH_LABELS, cross_validate_pipelines, load_frames, resolve_pipelines
    _require(opts, "out")
    try:
        pipelines = resolve_pipelines(opts["pipeline"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    table = load_frames(opts["cv"])
    config = TrainConfig(epochs=opts["epochs"], batch_size=opts["batch"], learning_rate=opts["lr"])
    res = cross_validate_pipelines(table, pipelines, config, _seeds(opts["seeds"]), _jobs(opts),
                                   baseline_epochs=opts["baseline_epochs"],
                                   progress=lambda m: log.info("%s", m))
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "folds.csv", out / "results.csv", out / "per_class.csv"]
    write_folds_csv(outputs[0], res.folds)
    labelled = {APPROACH_LABELS[p]: res.reports[p] for p in pipelines}
    write_results_csv(outputs[1], labelled)
    write_per_class_csv(outputs[2], labelled)
    for p, per_fold in res.tables.items():
        for fid, tab in per_fold.items():
            path = out / f"predictions_{p}_fold{fid}.csv"
            write_predictions_csv(path, tab)
            outputs.append(path)
    cv_dir = Path(opts["cv"])
    write_manifest(out / "manifest.txt", "evaluate", opts, argv,
                   [cv_dir / "frames.csv", cv_dir / "stats.csv"], outputs, started)
    for p in pipelines:
        r = res.reports[p]
        flag = f"  (untrained classes: {', '.join(r.unknown_classes)})" if r.unknown_classes else ""
        print(f"{APPROACH_LABELS[p]:45s} mean {r.mean:.4f}  std {r.std:.4f}{flag}")


def cmd_gradcheck(opts, cfg, argv, started):
    from .nn.gradcheck import toy_check
    results = toy_check(opts["models"], opts["seed"], opts["epsilon"], opts["coords"])
    worst = max(r.max_rel_error for r in results)
    for i, r in enumerate(results):
        name, idx, a, n, e = r.worst
        print(f"model {i}: max rel error {r.max_rel_error:.3e} at {name}[{idx}]")
    if opts["out"]:
        out = Path(opts["out"])
        out.mkdir(parents=True, exist_ok=True)
        rep = out / "gradcheck.csv"
        rep.write_text("model,max_rel_error\n" + "".join(
            f"{i},{r.max_rel_error:.6e}\n" for i, r in enumerate(results)), encoding="utf-8")
        write_manifest(out / "manifest.txt", "gradcheck", opts, argv, [], [rep], started)
    if worst > opts["tolerance"]:
        raise NumericalError(f"gradient check failed: {worst:.3e} > {opts['tolerance']:.1e}")
    print(f"ok: worst relative error {worst:.3e}")


COMMANDS = {
    "simulate": cmd_simulate,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.INFO,
                            format="%(levelname)s %(message)s")
        if not ns.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        opts, cfg = resolve_options(ns.command, ns)
        COMMANDS[ns.command](opts, cfg, ["dasel"] + argv, time.perf_counter())
        return EXIT_OK
    except UsageError as exc:
        print(f"dasel: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"dasel: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, ArchiveError, TrainingError, kvconfig.ConfigError, OSError, ValueError) as exc:
        print(f"dasel: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
