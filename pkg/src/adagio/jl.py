"""Rademacher Johnson-Lindenstrauss matrices and target-dimension sizing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._runtime import check_seed


@dataclass(frozen=True)
class JlMatrix:
    entries: np.ndarray
    seed: int

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def d(self) -> int:
        return self.entries.shape[1]


def _row_signs(seed: int, row: int, d: int) -> np.ndarray:
    # Philox is counter-based: row i owns the counter block [0, i, 0, 0], and
    # column j reads the j-th 64-bit word of that block, so the sign of entry
    # (i, j) is a function of (seed, i, j) only.
    bits = np.random.Philox(key=seed, counter=[0, row, 0, 0]).random_raw(d)
    return (bits >> np.uint64(63)).astype(np.int8) * 2 - 1


def sample_jl(k: int, d: int, seed: int) -> JlMatrix:
    """k x d matrix with i.i.d. entries uniform on {-1/sqrt(k), +1/sqrt(k)}."""
    if k < 1 or d < 1:
        raise ValueError(f"JL matrix needs k >= 1 and d >= 1, got k={k}, d={d}")
    seed = check_seed(seed)
    scale = 1.0 / math.sqrt(k)
    entries = np.empty((k, d), dtype=np.float64)
    for i in range(k):
        entries[i] = _row_signs(seed, i, d) * scale
    entries.setflags(write=False)
    return JlMatrix(entries, seed)


def jl_dimension(n_points: int, epsilon: float, gamma: float, multiplier: float = 1.0) -> int:
    """Rows needed so all pairwise squared distances survive within (1 +/- epsilon).

    Union bound over the n^2 ordered pairs with the Achlioptas tail exponent:
    ``k = ceil(multiplier * 4 ln(n^2 / gamma) / (eps^2/2 - eps^3/3))``.
    ``multiplier`` < 1 trades the guarantee for a smaller, practical k.
    """
    if n_points < 2:
        raise ValueError("need at least 2 points")
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    if multiplier <= 0:
        raise ValueError("multiplier must be positive")
    denom = epsilon**2 / 2 - epsilon**3 / 3
    k = multiplier * 4.0 * math.log(n_points**2 / gamma) / denom
    return max(1, math.ceil(k))
