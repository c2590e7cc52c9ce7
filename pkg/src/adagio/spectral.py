"""Top-s orthonormal bases from exact or randomized SVD, plus spectral diagnostics.

Note on stable rank: this module uses ``(sum sigma)^2 / sum sigma^2``, which
differs from the more common ``||A||_F^2 / ||A||_2^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._runtime import check_seed, generator
from .dataset import PointCloud
from .errors import NumericalError

ORTHONORMAL_TOL = 1e-8
DEFAULT_OVERSAMPLING = 10
DEFAULT_POWER_ITERS = 2


@dataclass(frozen=True)
class OrthonormalBasis:
    """s x d matrix with orthonormal rows; ``rows.T @ rows`` is the projector."""

    rows: np.ndarray

    @property
    def s(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def projector(self) -> np.ndarray:
        return self.rows.T @ self.rows

    def orthonormality_error(self) -> float:
        if self.s == 0:
            return 0.0
        return float(np.max(np.abs(self.rows @ self.rows.T - np.eye(self.s))))

    def project(self, data: np.ndarray) -> np.ndarray:
        """Coordinates of each row of ``data`` in the basis (n x s)."""
        return np.asarray(data) @ self.rows.T


@dataclass(frozen=True)
class SpectralSummary:
    singular_values: np.ndarray
    # True when only a truncated, approximate spectrum is available
    approximate: bool = False


def canonical_signs(rows: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    rows = np.array(rows, dtype=np.float64, copy=True)
    if rows.size == 0:
        return rows
    pivot = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(rows.shape[0]), pivot])
    signs[signs == 0] = 1.0
    return rows * signs[:, None]


def _check_rank(s: int, data: np.ndarray) -> None:
    limit = min(data.shape)
    if not 1 <= s <= limit:
        raise ValueError(f"target rank must be in [1, {limit}], got {s}")


def _as_matrix(cloud) -> np.ndarray:
    return cloud.data if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)


def exact_top_svd(cloud, s: int) -> tuple[OrthonormalBasis, SpectralSummary]:
    """Top-s right singular vectors of the (centered) n x d data matrix.

    The summary carries all min(n, d) singular values.
    """
    data = _as_matrix(cloud)
    _check_rank(s, data)
    if not np.all(np.isfinite(data)):
        raise NumericalError("SVD input contains non-finite values")
    try:
        _, sigma, vt = np.linalg.svd(data, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from exc
    basis = OrthonormalBasis(canonical_signs(vt[:s]))
    return basis, SpectralSummary(sigma)


def randomized_top_svd(
    cloud,
    s: int,
    oversampling: int = DEFAULT_OVERSAMPLING,
    power_iters: int = DEFAULT_POWER_ITERS,
    seed: int = 0,
) -> tuple[OrthonormalBasis, SpectralSummary]:
    """Range-finder approximation of the top-s right singular subspace.

    A Gaussian test matrix of width ``s + oversampling`` sketches the column
    space of ``X``; ``power_iters`` rounds of subspace iteration (with QR
    re-orthonormalization after every multiply) sharpen it, and the exact
    SVD of the small projected matrix ``Q^T X`` yields the basis.
    """
    data = _as_matrix(cloud)
    if s < 1 or oversampling < 0 or power_iters < 0:
        raise ValueError("need s >= 1, oversampling >= 0, power_iters >= 0")
    width = s + oversampling
    if width > min(data.shape):
        raise ValueError(
            f"s + oversampling = {width} exceeds min(n, d) = {min(data.shape)}"
        )
    check_seed(seed)
    if not np.all(np.isfinite(data)):
        raise NumericalError("SVD input contains non-finite values")

    omega = generator(seed).standard_normal((data.shape[1], width))
    try:
        q, _ = np.linalg.qr(data @ omega)
        for _ in range(power_iters):
            z, _ = np.linalg.qr(data.T @ q)
            q, _ = np.linalg.qr(data @ z)
        _, sigma, vt = np.linalg.svd(q.T @ data, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"randomized SVD failed: {exc}") from exc
    basis = OrthonormalBasis(canonical_signs(vt[:s]))
    return basis, SpectralSummary(sigma[:s], approximate=True)


def stable_rank(summary: SpectralSummary | np.ndarray) -> float:
    """(sum sigma)^2 / sum sigma^2 over the given singular values."""
    sigma = summary.singular_values if isinstance(summary, SpectralSummary) else summary
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0 or not np.any(sigma > 0):
        raise ValueError("stable rank is undefined for an all-zero spectrum")
    if np.any(sigma < 0):
        raise ValueError("singular values must be non-negative")
    return float(np.sum(sigma) ** 2 / np.sum(sigma**2))


def pca_pair_distortion_bound(sigma_next: float, pair_distance: float) -> float:
    """Upper bound min(2 sigma_{s+1} / |x - y|, 1) on a PCA pair distortion."""
    if sigma_next < 0:
        raise ValueError("sigma_next must be non-negative")
    if pair_distance <= 0:
        raise ValueError("pair distance must be positive")
    return min(2.0 * sigma_next / pair_distance, 1.0)


def captured_variance(data: np.ndarray, basis: OrthonormalBasis) -> float:
    """Fraction of the squared Frobenius norm retained by projecting onto ``basis``."""
    total = float(np.sum(np.asarray(data) ** 2))
    if total == 0.0:
        return 1.0
    return float(np.sum(basis.project(data) ** 2)) / total
