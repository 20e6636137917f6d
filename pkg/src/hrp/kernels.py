"""Backend selection for the hot numerical kernels.

The compiled extension is preferred; set ``HRP_KERNELS=python`` to force
the numpy fallback (useful for debugging and for the benchmark).
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("HRP_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def _resolve(impl):
    """``impl`` may be None (active backend), a backend name or a module."""
    if impl is None:
        return _impl
    if isinstance(impl, str):
        backends = available_backends()
        if impl not in backends:
            raise ValueError(f"unknown kernel backend {impl!r}; have {sorted(backends)}")
        return backends[impl]
    return impl


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def lstm_forward(X, W, b, impl=None):
    impl = _resolve(impl)
    return impl.lstm_forward(_f64(X), _f64(W), _f64(b))


def lstm_backward(dh_final, W, cache, impl=None):
    impl = _resolve(impl)
    Z, G, C, TC = cache
    return impl.lstm_backward(_f64(dh_final), _f64(W), Z, G, C, TC)


def se_kernel_matrix(A, B, tau, eta, impl=None):
    impl = _resolve(impl)
    return impl.se_kernel_matrix(_f64(A), _f64(B), float(tau), float(eta))


def available_backends():
    """Kernel modules importable in this environment, keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
