"""Backend selection for the GRU recurrence.

The compiled extension is used when it imports cleanly; setting
``DASEL_KERNELS=python`` forces the numpy fallback.  Both backends share one
signature, see :func:`forward` and :func:`backward`.
"""

import os

import numpy as np

from . import _gru_py

_ext = None
if os.environ.get("DASEL_KERNELS", "").lower() != "python":
    try:
        from . import _gru_ext as _ext
    except ImportError:  # pragma: no cover - depends on the build
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
_impl = _ext if _ext is not None else _gru_py


def get_backend(name=None):
    """Return the kernel module for ``name`` ("cython", "python" or None)."""
    if name is None:
        return _impl
    if name == "python":
        return _gru_py
    if name == "cython":
        if _ext is None:
            raise ImportError("compiled GRU kernel is not built")
        return _ext
    raise ValueError(f"unknown kernel backend {name!r}")


def forward(gx, U, bh, mask, keep_cache=True, backend=None):
    """Run the masked GRU recurrence over precomputed input projections.

    Args:
        gx: (T, B, 3H) input pre-activations ``x @ Wx + bx``.
        U: (H, 3H) recurrent weights.
        bh: (3H,) recurrent bias.
        mask: (T, B) array, nonzero where the timestep is real.

    Returns:
        ``(hs, z, r, n, ghn)`` where ``hs[t + 1]`` is the state after step t.
    """
    impl = get_backend(backend)
    return impl.forward(
        np.ascontiguousarray(gx, dtype=np.float64),
        np.ascontiguousarray(U, dtype=np.float64),
        np.ascontiguousarray(bh, dtype=np.float64),
        np.ascontiguousarray(mask, dtype=np.uint8),
        keep_cache,
    )


def backward(dout, hs, z, r, n, ghn, U, mask, backend=None):
    """Gradients of the recurrence; returns ``(dgx, dgh)``."""
    impl = get_backend(backend)
    c = np.ascontiguousarray
    return impl.backward(
        c(dout, dtype=np.float64), c(hs), c(z), c(r), c(n), c(ghn),
        c(U, dtype=np.float64), c(mask, dtype=np.uint8),
    )
