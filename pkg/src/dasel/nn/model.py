"""Masked BiGRU -> BiGRU -> attention pooling -> dense -> softmax classifier.

Arrays are time-major: inputs are (T, B, D) with a boolean mask (T, B).
All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

INPUT_DIM = 23
HIDDEN1 = 128
HIDDEN2 = 64
DENSE = 32
DROPOUT = (0.3, 0.3, 0.2)


class NumericalError(ArithmeticError):
    """A non-finite value appeared in a forward or backward pass."""


def _check(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {name}")


@dataclass
class ModelParams:
    tensors: dict
    classes: list
    input_dim: int = INPUT_DIM
    hidden1: int = HIDDEN1
    hidden2: int = HIDDEN2
    dense: int = DENSE
    dropout_rates: tuple = DROPOUT
    seed: int = 0
    loss_log: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValueError("a classifier needs at least two classes")
        expected = tensor_shapes(self.input_dim, self.hidden1, self.hidden2, self.dense,
                                 len(self.classes))
        if list(self.tensors) != list(expected):
            raise ValueError("tensor names do not match the architecture")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")

    @property
    def n_classes(self):
        return len(self.classes)

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.tensors.items()}, list(self.classes),
                           self.input_dim, self.hidden1, self.hidden2, self.dense,
                           tuple(self.dropout_rates), self.seed, list(self.loss_log))

    def quantized(self):
        """Copy with every tensor rounded to float32 precision (archive precision)."""
        out = self.copy()
        for k, v in out.tensors.items():
            out.tensors[k] = v.astype(np.float32).astype(np.float64)
        return out

    def n_parameters(self):
        return sum(v.size for v in self.tensors.values())


def tensor_shapes(input_dim, h1, h2, dense, n_classes):
    shapes = {}
    for layer, d_in, h in (("gru1", input_dim, h1), ("gru2", 2 * h1, h2)):
        for direction in ("fwd", "bwd"):
            p = f"{layer}.{direction}"
            shapes[f"{p}.Wx"] = (d_in, 3 * h)
            shapes[f"{p}.Uh"] = (h, 3 * h)
            shapes[f"{p}.bx"] = (3 * h,)
            shapes[f"{p}.bh"] = (3 * h,)
    shapes["attn.W"] = (2 * h2,)
    shapes["attn.b"] = ()
    shapes["dense.W"] = (2 * h2, dense)
    shapes["dense.b"] = (dense,)
    shapes["out.W"] = (dense, n_classes)
    shapes["out.b"] = (n_classes,)
    return shapes


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_params(classes, seed, input_dim=INPUT_DIM, hidden1=HIDDEN1, hidden2=HIDDEN2,
                dense=DENSE, dropout_rates=DROPOUT, rng=None) -> ModelParams:
    """Glorot-uniform input/dense weights, orthogonal recurrent blocks, zero biases."""
    rng = rng if rng is not None else np.random.default_rng([int(seed), 0])
    shapes = tensor_shapes(input_dim, hidden1, hidden2, dense, len(classes))
    t = {}
    for name, shape in shapes.items():
        kind = name.rsplit(".", 1)[1]
        if kind in ("bx", "bh", "b"):
            t[name] = np.zeros(shape)
        elif kind == "Uh":
            h = shape[0]
            t[name] = np.concatenate([_orthogonal(rng, h) for _ in range(3)], axis=1)
        elif name == "attn.W":
            t[name] = _glorot(rng, shape[0], 1, shape)
        else:
            t[name] = _glorot(rng, shape[0], shape[1], shape)
    return ModelParams(t, list(classes), input_dim, hidden1, hidden2, dense,
                       tuple(dropout_rates), int(seed))


def zero_params(classes, **dims) -> ModelParams:
    p = init_params(classes, 0, **dims)
    for v in p.tensors.values():
        v[...] = 0.0
    return p


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


def sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def gru_cell_forward(x, h_prev, Wx, Uh, bx, bh, active=True):
    """Single GRU step for one sample (reference definition, used in tests).

    Gate blocks are ordered [update, reset, candidate]; the reset gate scales
    the recurrent candidate projection.
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if not active:
        return h_prev.copy()
    H = h_prev.shape[0]
    gx = x @ Wx + bx
    gh = h_prev @ Uh + bh
    z = sigmoid(gx[:H] + gh[:H])
    r = sigmoid(gx[H:2 * H] + gh[H:2 * H])
    n = np.tanh(gx[2 * H:] + r * gh[2 * H:])
    h = (1.0 - z) * h_prev + z * n
    _check("gru cell", h)
    return h


def _project(X, M, W, b):
    # Input projection on real timesteps only; padded rows stay zero.
    T, B, D = X.shape
    if M.all():
        return (X.reshape(T * B, D) @ W + b).reshape(T, B, -1)
    out = np.zeros((T, B, W.shape[1]))
    out[M] = X[M] @ W + b
    return out


def bigru_forward(X, M, t, prefix, keep_cache=True, backend=None):
    """Bidirectional masked GRU layer. Returns (outputs (T, B, 2H), cache)."""
    cache = {"X": X}
    outs = []
    Mu = M.astype(np.uint8)
    dense = bool(M.all())
    for direction in ("fwd", "bwd"):
        p = f"{prefix}.{direction}"
        gx = _project(X, M, t[p + ".Wx"], t[p + ".bx"])
        mk = Mu
        if direction == "bwd":
            gx = gx[::-1]
            mk = Mu[::-1]
        hs, z, r, n, ghn = kernels.forward(gx, t[p + ".Uh"], t[p + ".bh"], mk, keep_cache, backend)
        out = hs[1:] if dense else hs[1:] * mk[..., None]
        if direction == "bwd":
            out = out[::-1]
        _check(p, out)
        outs.append(out)
        if keep_cache:
            cache[direction] = (hs, z, r, n, ghn)
    return np.concatenate(outs, axis=-1), cache


def bigru_backward(dY, M, t, prefix, cache, grads, backend=None):
    X = cache["X"]
    H = t[prefix + ".fwd.Uh"].shape[0]
    dX = np.zeros_like(X)
    Mu = M.astype(np.uint8)
    for k, direction in enumerate(("fwd", "bwd")):
        p = f"{prefix}.{direction}"
        hs, z, r, n, ghn = cache[direction]
        dout = dY[..., k * H:(k + 1) * H] * M[..., None]
        mk = Mu
        if direction == "bwd":
            dout = dout[::-1]
            mk = Mu[::-1]
        dgx, dgh = kernels.backward(dout, hs, z, r, n, ghn, t[p + ".Uh"], mk, backend)
        if direction == "bwd":
            dgx = dgx[::-1]
        G = 3 * H
        grads[p + ".Uh"] = hs[:-1].reshape(-1, H).T @ dgh.reshape(-1, G)
        grads[p + ".bh"] = dgh.reshape(-1, G).sum(axis=0)
        g = dgx[M]
        grads[p + ".Wx"] = X[M].T @ g
        grads[p + ".bx"] = g.sum(axis=0)
        dX[M] += g @ t[p + ".Wx"].T
    return dX


def attention_pool(S, M, W, b):
    """Additive attention over time.

    scores = tanh(S @ W + b); weights = softmax over unmasked steps (exactly 0
    on masked ones); context = sum_t weights_t * S_t.
    """
    if not np.all(M.any(axis=0)):
        raise ValueError("attention needs at least one unmasked timestep per sample")
    s = np.tanh(S @ W + b)
    smax = np.where(M, s, -np.inf).max(axis=0)
    e = np.where(M, np.exp(s - smax), 0.0)
    alpha = e / e.sum(axis=0)
    ctx = (alpha[..., None] * S).sum(axis=0)
    return ctx, alpha, s


def attention_backward(dctx, S, alpha, s, W):
    dalpha = np.einsum("tbf,bf->tb", S, dctx)
    dS = alpha[..., None] * dctx[None]
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=0))
    da = ds * (1.0 - s * s)
    dW = np.einsum("tb,tbf->f", da, S)
    db = np.asarray(da.sum())
    dS += da[..., None] * W
    return dS, dW, db


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def dropout_mask(rng, shape, rate):
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if rate <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


# --------------------------------------------------------------------------
# full model
# --------------------------------------------------------------------------


def _forward(params, X, M, rng=None, keep_cache=False, backend=None, real_slice=False):
    t = params.tensors
    train = rng is not None
    r1, r2, r3 = params.dropout_rates
    c = {}
    O1, c["gru1"] = bigru_forward(X, M, t, "gru1", keep_cache, backend)
    D1 = dropout_mask(rng, O1.shape, r1) if train else None
    O1d = O1 * D1 if train else O1
    O2, c["gru2"] = bigru_forward(O1d, M, t, "gru2", keep_cache, backend)
    D2 = dropout_mask(rng, O2.shape, r2) if train else None
    O2d = O2 * D2 if train else O2
    if real_slice:
        # single left-padded sample: attend over the real suffix only
        L = int(M[:, 0].sum())
        S, Ms = O2d[len(M) - L:], M[len(M) - L:]
    else:
        S, Ms = O2d, M
    ctx, alpha, s = attention_pool(S, Ms, t["attn.W"], t["attn.b"])
    u = ctx @ t["dense.W"] + t["dense.b"]
    d = np.maximum(u, 0.0)
    D3 = dropout_mask(rng, d.shape, r3) if train else None
    dd = d * D3 if train else d
    logits = dd @ t["out.W"] + t["out.b"]
    _check("output logits", logits)
    if keep_cache:
        c.update(D1=D1, D2=D2, D3=D3, S=S, alpha=alpha, s=s, ctx=ctx, u=u, dd=dd)
    return logits, c


def forward_batch(params, X, M, backend=None):
    """Inference-mode class probabilities for a time-major batch."""
    logits, _ = _forward(params, X, M.astype(bool), None, False, backend)
    return softmax(logits)


def model_forward(seq, params, mode="infer", dropout_seed=None, backend=None):
    """Class probabilities for one padded :class:`~dasel.sequencing.Sequence`.

    ``mode="train"`` applies inverted dropout drawn from ``dropout_seed``.
    """
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    X = np.asarray(seq.values, dtype=np.float64)[:, None, :]
    M = np.asarray(seq.mask, dtype=bool)[:, None]
    if not M.any():
        raise ValueError("sequence has no real frames")
    rng = np.random.default_rng(dropout_seed) if mode == "train" else None
    logits, _ = _forward(params, X, M, rng, False, backend, real_slice=True)
    return softmax(logits)[0]


def batch_arrays(seqs, trim=True):
    """Stack padded sequences into time-major (T, B, D) values and (T, B) mask."""
    values = np.stack([s.values for s in seqs], axis=1)
    mask = np.stack([np.asarray(s.mask, dtype=bool) for s in seqs], axis=1)
    if trim:
        first = int(np.argmax(mask.any(axis=1)))
        values, mask = values[first:], mask[first:]
    return np.ascontiguousarray(values), np.ascontiguousarray(mask)


def loss_and_grads(params, X, M, y, sample_weight, rng=None, backend=None, need_grads=True):
    """Weighted cross-entropy and its gradient for every tensor.

    loss = mean_b sample_weight[b] * -log p[b, y[b]]; ``rng`` enables dropout.
    """
    M = M.astype(bool)
    y = np.asarray(y, dtype=np.int64)
    w = np.asarray(sample_weight, dtype=np.float64)
    B = len(y)
    if np.any(y < 0) or np.any(y >= params.n_classes):
        raise ValueError("class index out of range")
    logits, c = _forward(params, X, M, rng, need_grads, backend)
    logp = log_softmax(logits)
    loss = float(np.sum(w * -logp[np.arange(B), y]) / B)
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    if not need_grads:
        return loss, None
    t = params.tensors
    g = {}
    p = np.exp(logp)
    dlogits = p
    dlogits[np.arange(B), y] -= 1.0
    dlogits *= (w / B)[:, None]
    g["out.W"] = c["dd"].T @ dlogits
    g["out.b"] = dlogits.sum(axis=0)
    ddd = dlogits @ t["out.W"].T
    if c["D3"] is not None:
        ddd = ddd * c["D3"]
    du = ddd * (c["u"] > 0)
    g["dense.W"] = c["ctx"].T @ du
    g["dense.b"] = du.sum(axis=0)
    dctx = du @ t["dense.W"].T
    dS, g["attn.W"], g["attn.b"] = attention_backward(dctx, c["S"], c["alpha"], c["s"], t["attn.W"])
    dO2 = dS * c["D2"] if c["D2"] is not None else dS
    dO1d = bigru_backward(dO2, M, t, "gru2", c["gru2"], g, backend)
    dO1 = dO1d * c["D1"] if c["D1"] is not None else dO1d
    bigru_backward(dO1, M, t, "gru1", c["gru1"], g, backend)
    grads = {k: g[k] for k in t}
    for k, v in grads.items():
        _check(f"gradient of {k}", v)
    return loss, grads


def loss_and_grads_seqs(batch, params, class_weights, rng=None, backend=None):
    """Convenience form over a list of ``(Sequence, class_index)`` pairs."""
    seqs = [s for s, _ in batch]
    y = np.array([k for _, k in batch], dtype=np.int64)
    X, M = batch_arrays(seqs)
    w = np.array([class_weights[params.classes[k]] for k in y], dtype=np.float64)
    return loss_and_grads(params, X, M, y, w, rng, backend)
