"""Training loop: balanced class weights, mini-batch Adam, seeded dropout."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..parallel import single_thread_blas
from .model import DENSE, DROPOUT, HIDDEN1, HIDDEN2, INPUT_DIM, init_params, loss_and_grads

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    class_weights: dict | None = None
    shuffle_seed: int | None = None
    dims: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("epochs", "batch_size", "learning_rate", "adam_epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


class TrainingError(Exception):
    pass


def class_weights(labels) -> dict:
    """Balanced weights N / (K * n_c)."""
    counts = Counter(labels)
    if not counts:
        raise ValueError("no labels")
    n, k = sum(counts.values()), len(counts)
    return {c: n / (k * m) for c, m in sorted(counts.items())}


class Adam:
    def __init__(self, tensors, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.t = 0

    def step(self, tensors, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            tensors[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(sequences, config: TrainConfig, seed: int, classes=None, backend=None, progress=None):
    """Fit a classifier on labelled padded sequences.

    Everything random (initialization, shuffling, dropout) derives from
    ``seed``, so equal inputs give bit-identical parameters. The returned
    parameters are rounded to float32 precision to round-trip through the
    archive format unchanged.
    """
    labels = [s.room for s in sequences]
    if any(lab is None for lab in labels):
        raise TrainingError("every training sequence needs a room label")
    present = set(labels)
    if classes is None:
        classes = sorted(present)
    missing = [c for c in classes if c not in present]
    if missing:
        raise TrainingError(f"no training sequences for class(es): {', '.join(missing)}")
    unknown = present - set(classes)
    if unknown:
        raise TrainingError(f"labels outside the class table: {sorted(unknown)}")
    weights = config.class_weights or class_weights(labels)
    if any(c not in weights or weights[c] <= 0 for c in classes):
        raise TrainingError("class weights must be positive and cover every class")

    dims = dict(input_dim=INPUT_DIM, hidden1=HIDDEN1, hidden2=HIDDEN2, dense=DENSE)
    dims.update(config.dims)
    params = init_params(classes, seed, dropout_rates=DROPOUT, **dims)
    index = {c: i for i, c in enumerate(classes)}
    values = np.stack([s.values for s in sequences])  # (N, 50, D)
    masks = np.stack([np.asarray(s.mask, dtype=bool) for s in sequences])
    y = np.array([index[c] for c in labels], dtype=np.int64)
    w = np.array([weights[c] for c in labels], dtype=np.float64)
    first_real = np.argmax(masks, axis=1)

    shuffle_rng = np.random.default_rng(
        [int(seed), 1] if config.shuffle_seed is None else [int(config.shuffle_seed), 1])
    dropout_rng = np.random.default_rng([int(seed), 2])
    opt = Adam(params.tensors, config.learning_rate, config.adam_beta1, config.adam_beta2,
               config.adam_epsilon)
    n = len(sequences)
    with single_thread_blas():
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(n)
            total = 0.0
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                t0 = int(first_real[idx].min())
                X = np.ascontiguousarray(values[idx, t0:].transpose(1, 0, 2))
                M = np.ascontiguousarray(masks[idx, t0:].T)
                loss, grads = loss_and_grads(params, X, M, y[idx], w[idx], dropout_rng, backend)
                opt.step(params.tensors, grads)
                total += loss * len(idx)
            params.loss_log.append(total / n)
            log.debug("seed %s epoch %d loss %.5f", seed, epoch + 1, total / n)
            if progress is not None:
                progress(epoch + 1, total / n)
    out = params.quantized()
    out.loss_log = list(params.loss_log)
    return out
