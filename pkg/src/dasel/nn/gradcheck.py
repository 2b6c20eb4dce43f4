"""Central finite-difference verification of :func:`loss_and_grads`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import batch_arrays, loss_and_grads


@dataclass
class GradCheckResult:
    max_rel_error: float
    coordinates: list  # (tensor name, flat index, analytic, numeric, rel error)

    @property
    def worst(self):
        return max(self.coordinates, key=lambda c: c[4])


def rel_error(a, n):
    return abs(a - n) / max(abs(a) + abs(n), 1e-12)


def grad_check(params, batch, epsilon=1e-5, n_coords=200, seed=0, class_weights=None,
               corrupt=None, backend=None) -> GradCheckResult:
    """Compare analytic gradients with (f(θ+ε) - f(θ-ε)) / 2ε.

    Dropout is off. At least one coordinate is drawn from every tensor and
    ``n_coords`` in total. ``corrupt=(name, flat_index)`` doubles that analytic
    component (and always samples it), for negative controls.
    """
    if not 1e-7 <= epsilon <= 1e-4:
        raise ValueError("epsilon must lie in [1e-7, 1e-4]")
    seqs = [s for s, _ in batch]
    y = np.array([k for _, k in batch], dtype=np.int64)
    X, M = batch_arrays(seqs)
    if class_weights is None:
        w = np.ones(len(y))
    else:
        w = np.array([class_weights[params.classes[k]] for k in y], dtype=np.float64)
    work = params.copy()
    _, grads = loss_and_grads(work, X, M, y, w, None, backend)
    if corrupt is not None:
        name, idx = corrupt
        grads[name].reshape(-1)[idx] *= 2.0

    rng = np.random.default_rng(seed)
    names = list(work.tensors)
    sizes = np.array([work.tensors[k].size for k in names])
    picks = [(k, int(rng.integers(work.tensors[k].size))) for k in names]
    extra = max(0, n_coords - len(picks))
    flat = rng.integers(sizes.sum(), size=extra)
    offsets = np.cumsum(sizes) - sizes
    for f in flat.tolist():
        j = int(np.searchsorted(offsets, f, side="right") - 1)
        picks.append((names[j], int(f - offsets[j])))
    if corrupt is not None:
        picks.append((corrupt[0], int(corrupt[1])))

    def f():
        return loss_and_grads(work, X, M, y, w, None, backend, need_grads=False)[0]

    coords = []
    for name, idx in picks:
        view = work.tensors[name].reshape(-1)
        old = view[idx]
        view[idx] = old + epsilon
        fp = f()
        view[idx] = old - epsilon
        fm = f()
        view[idx] = old
        num = (fp - fm) / (2.0 * epsilon)
        ana = float(grads[name].reshape(-1)[idx])
        coords.append((name, idx, ana, num, rel_error(ana, num)))
    return GradCheckResult(max(c[4] for c in coords), coords)


TOY_DIMS = dict(input_dim=5, hidden1=6, hidden2=4, dense=5)


def toy_problem(seed, n_classes=3, batch=4, max_len=10, weight_scale=0.3):
    """A random small model and batch of short labelled sequences."""
    from ..sequencing import pad_and_mask
    from .model import init_params

    rng = np.random.default_rng([int(seed), 7])
    classes = [f"c{i}" for i in range(n_classes)]
    params = init_params(classes, seed, **TOY_DIMS)
    for v in params.tensors.values():
        v += rng.normal(0.0, weight_scale, size=v.shape)
    items = []
    for _ in range(batch):
        L = int(rng.integers(1, max_len + 1))
        frames = rng.dirichlet(np.ones(TOY_DIMS["input_dim"]), size=L)
        items.append((pad_and_mask(frames), int(rng.integers(n_classes))))
    return params, items


def toy_check(n_models=5, seed=0, epsilon=1e-5, n_coords=200, backend=None):
    out = []
    for k in range(n_models):
        params, batch = toy_problem(seed + k)
        out.append(grad_check(params, batch, epsilon, n_coords, seed=seed + k, backend=backend))
    return out
