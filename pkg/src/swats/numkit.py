"""Dense float64 vector helpers, seeded RNG streams, finite differences.

Parameter vectors are plain 1-D ``numpy.float64`` arrays throughout the
package; every helper here validates shape and keeps the 64-bit dtype.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np


class DimensionMismatchError(ValueError):
    """Operands of a vector operation have different lengths."""


class NonFiniteError(FloatingPointError):
    """A function evaluation produced NaN or infinity."""


def param_vector(values) -> np.ndarray:
    """Coerce ``values`` to a contiguous 1-D float64 array."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    if v.ndim != 1:
        v = v.reshape(-1)
    return v


def _check_same_len(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}"
        )


def dot(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product sum_i a_i b_i."""
    _check_same_len(a, b)
    return float(np.dot(a, b))


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """alpha * x + y, elementwise."""
    _check_same_len(x, y)
    return alpha * x + y


def ew_mul(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Elementwise product."""
    _check_same_len(x, y)
    return x * y


def div_eps(x: np.ndarray, y: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """Elementwise x_i / (y_i + eps); eps must be nonnegative."""
    _check_same_len(x, y)
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")
    return x / (y + eps)


def ew_sqrt(x: np.ndarray) -> np.ndarray:
    """Elementwise square root."""
    return np.sqrt(x)


def ew_square(x: np.ndarray) -> np.ndarray:
    """Elementwise square."""
    return x * x


def clip(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Elementwise min(max(x_i, lo), hi). Requires lo <= hi."""
    if lo > hi:
        raise ValueError(f"clip bounds out of order: lo={lo} > hi={hi}")
    return np.clip(x, lo, hi)


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Deterministic PCG64 generator for (seed, stream_id).

    Equal (seed, stream_id) pairs replay bit-identical draw sequences;
    distinct stream_ids give statistically independent streams (numpy
    SeedSequence spawn keys).
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id,))
    return np.random.Generator(np.random.PCG64(ss))


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    w: np.ndarray,
    h: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    Perturbs one coordinate at a time: (f(w + h e_i) - f(w - h e_i)) / (2h).
    The default h balances truncation against float64 roundoff.
    """
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    w = param_vector(w)
    grad = np.empty_like(w)
    probe = w.copy()
    for i in range(w.shape[0]):
        wi = w[i]
        probe[i] = wi + h
        f_plus = f(probe)
        probe[i] = wi - h
        f_minus = f(probe)
        probe[i] = wi
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NonFiniteError(f"non-finite evaluation at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad
