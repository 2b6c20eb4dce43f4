"""Independent-window baseline: each second classified from its own statistics.

A multinomial softmax regression with balanced sample weights, trained with
Adam. Stands in for a gradient-boosted tree model; the property that matters
here is that no temporal context is used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import N_DOMINANT, STAT_DIM
from .ingest import N_BEACONS
from .nn.train import Adam, TrainingError, class_weights

BASELINE_LABEL = "baseline (substituted)"


def feature_matrix(table, dominant=False) -> np.ndarray:
    """75 per-beacon stats, plus the 3 dominant-beacon ids when ``dominant``."""
    X = np.asarray(table.stats, dtype=np.float64)
    if X.shape[1] != STAT_DIM:
        raise ValueError(f"expected {STAT_DIM} stat features, got {X.shape[1]}")
    if dominant:
        X = np.concatenate([X, np.asarray(table.dominant, dtype=np.float64)], axis=1)
    return X


@dataclass
class SoftmaxRegression:
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 1e-2
    l2: float = 1e-4
    seed: int = 0
    categorical: int = 0  # trailing columns holding beacon ids (one-hot encoded)

    def _encode(self, X):
        num = X[:, :X.shape[1] - self.categorical]
        Z = (num - self.mu_) / self.sd_
        if self.categorical:
            ids = X[:, X.shape[1] - self.categorical:].astype(np.int64)
            if np.any((ids < 0) | (ids > N_BEACONS)):
                raise ValueError("dominant-beacon ids out of range")
            hot = np.zeros((len(X), self.categorical * (N_BEACONS + 1)))
            cols = ids + np.arange(self.categorical) * (N_BEACONS + 1)
            np.put_along_axis(hot, cols, 1.0, axis=1)
            Z = np.concatenate([Z, hot], axis=1)
        return Z

    def fit(self, X, y):
        y = np.asarray(y, dtype=object)
        self.classes_ = sorted(set(y.tolist()))
        if len(self.classes_) < 2:
            raise TrainingError("baseline training data holds a single class")
        num = X[:, :X.shape[1] - self.categorical]
        self.mu_ = num.mean(axis=0)
        sd = num.std(axis=0)
        self.sd_ = np.where(sd > 0, sd, 1.0)
        Z = self._encode(X)
        index = {c: i for i, c in enumerate(self.classes_)}
        yi = np.array([index[c] for c in y.tolist()], dtype=np.int64)
        cw = class_weights(y.tolist())
        w = np.array([cw[c] for c in self.classes_])[yi]
        C, D = len(self.classes_), Z.shape[1]
        params = {"W": np.zeros((D, C)), "b": np.zeros(C)}
        opt = Adam(params, self.learning_rate)
        rng = np.random.default_rng([int(self.seed), 1])
        n = len(yi)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for s in range(0, n, self.batch_size):
                idx = order[s:s + self.batch_size]
                Zb = Z[idx]
                logits = Zb @ params["W"] + params["b"]
                logits -= logits.max(axis=1, keepdims=True)
                p = np.exp(logits)
                p /= p.sum(axis=1, keepdims=True)
                p[np.arange(len(idx)), yi[idx]] -= 1.0
                g = p * (w[idx] / len(idx))[:, None]
                opt.step(params, {"W": Zb.T @ g + self.l2 * params["W"], "b": g.sum(axis=0)})
        self.W_, self.b_ = params["W"], params["b"]
        return self

    def predict_proba(self, X):
        logits = self._encode(X) @ self.W_ + self.b_
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        cls = np.array(self.classes_, dtype=object)
        return cls[np.argmax(self.predict_proba(X), axis=1)]


@dataclass
class BaselineFitPredict:
    """``fit_predict`` callable for :func:`dasel.evaluation.run_cv`."""

    dominant: bool = False
    epochs: int = 10
    seed: int = 0

    def __call__(self, train, test):
        model = SoftmaxRegression(epochs=self.epochs, seed=self.seed,
                                  categorical=N_DOMINANT if self.dominant else 0)
        model.fit(feature_matrix(train, self.dominant), train.room)
        return model.predict(feature_matrix(test, self.dominant))


def baseline_train_predict(train, test, dominant=False, epochs=10, seed=0):
    return BaselineFitPredict(dominant, epochs, seed)(train, test)
