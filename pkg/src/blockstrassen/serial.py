"""Single-node multiplication: the triple-loop kernel and recursive Strassen."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .blockmat import is_power_of_two


@numba.njit(nogil=True, cache=True)
def _ikj_accumulate(a, b, out):
    n, m = a.shape
    p = b.shape[1]
    for i in range(n):
        for k in range(m):
            aik = a[i, k]
            for j in range(p):
                out[i, j] += aik * b[k, j]


def naive_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop product.

    Every ``C[i, j]`` is accumulated as ``((a[i,0]*b[0,j] + a[i,1]*b[1,j]) + ...)``
    in ascending ``k``, so the result is reproducible bit for bit. The
    compiled loop releases the GIL, letting worker threads overlap.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply shapes {a.shape} and {b.shape}")
    if a.shape[0] != a.shape[1] or b.shape[0] != b.shape[1]:
        raise ValueError(f"expected square operands, got {a.shape} and {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    _ikj_accumulate(a, b, out)
    return out


@dataclass
class StrassenCounter:
    base_multiplies: int = 0
    block_additions: int = 0
    flops: int = 0


def serial_strassen(
    a: np.ndarray,
    b: np.ndarray,
    threshold: int = 64,
    counter: StrassenCounter | None = None,
) -> np.ndarray:
    """Recursive Strassen product, falling back to :func:`naive_multiply` at ``threshold``.

    Each split performs 7 half-size products and 18 half-size additions;
    ``counter`` (if given) accumulates both, plus the base-case multiply-adds.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected equal square operands, got {a.shape} and {b.shape}")
    n = a.shape[0]
    if not is_power_of_two(n):
        raise ValueError(f"dimension must be a power of two, got {n}")
    if not is_power_of_two(threshold) or threshold > n:
        raise ValueError(f"threshold must be a power of two <= {n}, got {threshold}")
    if counter is None:
        counter = StrassenCounter()
    return _strassen(a, b, threshold, counter)


def _strassen(a, b, threshold, counter):
    n = a.shape[0]
    if n <= threshold:
        counter.base_multiplies += 1
        counter.flops += n ** 3
        return naive_multiply(a, b)
    h = n // 2
    a11, a12, a21, a22 = a[:h, :h], a[:h, h:], a[h:, :h], a[h:, h:]
    b11, b12, b21, b22 = b[:h, :h], b[:h, h:], b[h:, :h], b[h:, h:]

    m1 = _strassen(a11 + a22, b11 + b22, threshold, counter)
    m2 = _strassen(a21 + a22, b11, threshold, counter)
    m3 = _strassen(a11, b12 - b22, threshold, counter)
    m4 = _strassen(a22, b21 - b11, threshold, counter)
    m5 = _strassen(a11 + a12, b22, threshold, counter)
    m6 = _strassen(a21 - a11, b11 + b12, threshold, counter)
    m7 = _strassen(a12 - a22, b21 + b22, threshold, counter)

    c = np.empty((n, n), dtype=np.float64)
    c[:h, :h] = m1 + m4 - m5 + m7
    c[:h, h:] = m3 + m5
    c[h:, :h] = m2 + m4
    c[h:, h:] = m1 - m2 + m3 + m6
    # 10 operand additions above, 8 in the result quadrants
    counter.block_additions += 18
    return c
