"""Numeric kernels with two interchangeable backends.

The hot row-wise inner loops (softmax, layernorm, silu) exist twice: a
numba ``@njit`` version and a pure-numpy version.  ``LONGSTREAM_NUMBA=0`` selects numpy at import time;
:func:`set_backend` flips at runtime (the bench uses this to compare
both).  Both backends agree to ~1e-14; all verification tolerances in
the test suite are far looser than that.
"""

import math
import os

import numpy as np

_HAS_NUMBA = False
if os.environ.get("LONGSTREAM_NUMBA", "1") != "0":
    try:
        from numba import njit

        _HAS_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
        _HAS_NUMBA = False

_backend = "numba" if _HAS_NUMBA else "numpy"


def backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    """Select 'numba' or 'numpy'. Raises if numba was requested but unavailable."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAS_NUMBA:
        raise RuntimeError("numba backend unavailable (LONGSTREAM_NUMBA=0 or numba missing)")
    _backend = name


def available_backends() -> tuple:
    return ("numba", "numpy") if _HAS_NUMBA else ("numpy",)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _softmax_rows_np(x):
    # max-subtraction keeps exp() finite; -inf sentinels map to exactly 0
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def _layernorm_rows_np(x, gain, bias, eps):
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.mean((x - mu) ** 2, axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def _silu_np(x):
    # stable sigmoid: never exponentiates a large positive argument
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return x * s


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if _HAS_NUMBA:

    @njit(cache=True)
    def _softmax_rows_nb(x):
        out = np.empty_like(x)
        n, d = x.shape
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            z = 0.0
            for j in range(d):
                e = math.exp(x[i, j] - m)
                out[i, j] = e
                z += e
            inv = 1.0 / z
            for j in range(d):
                out[i, j] *= inv
        return out

    @njit(cache=True)
    def _layernorm_rows_nb(x, gain, bias, eps):
        out = np.empty_like(x)
        n, d = x.shape
        for i in range(n):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                t = x[i, j] - mu
                var += t * t
            var /= d
            inv = 1.0 / math.sqrt(var + eps)
            for j in range(d):
                out[i, j] = (x[i, j] - mu) * inv * gain[j] + bias[j]
        return out

    @njit(cache=True)
    def _silu_nb(x):
        out = np.empty_like(x)
        n = x.size
        flat = x.reshape(n)
        oflat = out.reshape(n)
        for i in range(n):
            xi = flat[i]
            if xi >= 0:
                s = 1.0 / (1.0 + math.exp(-xi))
            else:
                e = math.exp(xi)
                s = e / (1.0 + e)
            oflat[i] = xi * s
        return out

# ---------------------------------------------------------------------------
# dispatchers
# ---------------------------------------------------------------------------

def softmax_rows(x):
    """Row-wise softmax over the last axis of a 2-D array."""
    if _backend == "numba":
        return _softmax_rows_nb(np.ascontiguousarray(x))
    return _softmax_rows_np(x)


def layernorm_rows(x, gain, bias, eps=1e-5):
    """Layer norm over the last axis of a 2-D array, with affine params."""
    if _backend == "numba":
        return _layernorm_rows_nb(np.ascontiguousarray(x), gain, bias, eps)
    return _layernorm_rows_np(x, gain, bias, eps)


def silu(x):
    if _backend == "numba":
        return _silu_nb(np.ascontiguousarray(x))
    return _silu_np(x)


def warmup():
    """Trigger JIT compilation of the numba kernels (no-op on numpy)."""
    if _backend != "numba":
        return
    x = np.random.default_rng(0).standard_normal((4, 8))
    g = np.ones(8)
    b = np.zeros(8)
    softmax_rows(x)
    layernorm_rows(x, g, b)
    silu(x)
