"""The ADAGIO map w -> (P w, S (w - P^T P w)) and its binary model format."""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._runtime import check_seed, derive_seed
from .dataset import PointCloud, center
from .errors import ModelFormatError
from .jl import sample_jl
from .spectral import (
    DEFAULT_OVERSAMPLING,
    DEFAULT_POWER_ITERS,
    exact_top_svd,
    randomized_top_svd,
)

BACKENDS = ("exact", "randomized")
MODEL_MAGIC = b"ADG1"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIIIIBQ")


@dataclass(frozen=True, eq=False)
class AdagioModel:
    """A fitted map from R^d to R^(s+k).

    ``P`` holds s orthonormal rows, ``S`` a k x d Rademacher matrix, and
    ``mean`` the centering vector subtracted from every input.
    """

    mean: np.ndarray
    P: np.ndarray
    S: np.ndarray
    seed: int
    backend: str = "exact"

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        d = self.mean.shape[0]
        if self.P.ndim != 2 or self.P.shape[1] != d or self.S.ndim != 2 or self.S.shape[1] != d:
            raise ValueError(
                f"inconsistent shapes: mean {self.mean.shape}, P {self.P.shape}, S {self.S.shape}"
            )
        if self.S.shape[0] < 1:
            raise ValueError("model needs at least one JL row")

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def s(self) -> int:
        return self.P.shape[0]

    @property
    def k(self) -> int:
        return self.S.shape[0]

    @property
    def r(self) -> int:
        return self.s + self.k

    def same_as(self, other: "AdagioModel") -> bool:
        """Bit-level equality of every field."""
        return (
            self.seed == other.seed
            and self.backend == other.backend
            and all(
                a.shape == b.shape and a.tobytes() == b.tobytes()
                for a, b in ((self.mean, other.mean), (self.P, other.P), (self.S, other.S))
            )
        )


def split_dimension(r: int) -> tuple[int, int]:
    """floor(r/2) principal components, ceil(r/2) JL rows."""
    return r // 2, r - r // 2


def adagio_map(centered: np.ndarray, P: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Rows ``w`` of ``centered`` mapped to ``(P w, S (w - P^T P w))``.

    ``S`` may be any matrix acting on the residual, not only a JL sketch.
    """
    coords = centered @ P.T
    residual = centered - coords @ P
    return np.hstack([coords, residual @ S.T])


def _principal_rows(centered: PointCloud, s: int, backend: str, seed: int) -> np.ndarray:
    if s == 0:
        return np.zeros((0, centered.d))
    if backend == "exact":
        basis, _ = exact_top_svd(centered, s)
    elif backend == "randomized":
        # clamp the oversampling so the sketch never exceeds min(n, d)
        oversampling = max(0, min(DEFAULT_OVERSAMPLING, min(centered.n, centered.d) - s))
        basis, _ = randomized_top_svd(
            centered, s, oversampling, DEFAULT_POWER_ITERS, derive_seed(seed, "range_finder")
        )
    else:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    return basis.rows


def fit_with_split(cloud: PointCloud, s: int, k: int, backend: str = "exact", seed: int = 0) -> AdagioModel:
    """Fit with an explicit split: s principal rows and k JL rows."""
    if s < 0:
        raise ValueError(f"s must be >= 0, got {s}")
    if k < 1:
        raise ValueError(
            "k must be >= 1; dropping the residual silently loses information "
            "(use the 'pca' sweep method for a pure projection)"
        )
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    seed = check_seed(seed)
    if s + k > cloud.d:
        warnings.warn(
            f"output dimension s + k = {s + k} exceeds the ambient dimension {cloud.d}",
            stacklevel=2,
        )
    centered, info = center(cloud)
    P = _principal_rows(centered, s, backend, seed)
    S = sample_jl(k, cloud.d, seed).entries
    return AdagioModel(info.mean, P, S, seed, backend)


def fit(cloud: PointCloud, r: int, backend: str = "exact", seed: int = 0) -> AdagioModel:
    """Fit a target dimension ``r`` with the default floor/ceil split."""
    if not 2 <= r <= cloud.d:
        raise ValueError(f"target dimension must be in [2, {cloud.d}], got {r}")
    if cloud.n < 2:
        raise ValueError("need at least 2 points to fit")
    s, k = split_dimension(r)
    return fit_with_split(cloud, s, k, backend, seed)


def transform_all(model: AdagioModel, cloud: PointCloud | np.ndarray) -> PointCloud:
    data = cloud.data if isinstance(cloud, PointCloud) else np.atleast_2d(np.asarray(cloud, dtype=np.float64))
    if data.shape[1] != model.d:
        raise ValueError(f"dimension mismatch: model expects d={model.d}, got {data.shape[1]}")
    out = adagio_map(data - model.mean, model.P, model.S)
    labels = cloud.labels if isinstance(cloud, PointCloud) else None
    return PointCloud(out, labels)


def transform(model: AdagioModel, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != model.d:
        raise ValueError(f"dimension mismatch: model expects a vector of length {model.d}, got shape {w.shape}")
    return transform_all(model, w[None, :]).data[0]


def save_model(model: AdagioModel, path) -> None:
    header = _HEADER.pack(
        MODEL_MAGIC, MODEL_VERSION, model.d, model.s, model.k,
        BACKENDS.index(model.backend), model.seed,
    )
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (model.mean, model.P, model.S)
    )
    Path(path).write_bytes(header + body)


def load_model(path) -> AdagioModel:
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {blob[:4]!r}; not an ADAGIO model file")
    if len(blob) < _HEADER.size:
        raise ModelFormatError(f"truncated model header: {len(blob)} of {_HEADER.size} bytes")
    _, version, d, s, k, tag, seed = _HEADER.unpack_from(blob)
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}, expected {MODEL_VERSION}")
    if tag >= len(BACKENDS):
        raise ModelFormatError(f"unknown backend tag {tag}")
    n_doubles = d + s * d + k * d
    expected = _HEADER.size + 8 * n_doubles
    if len(blob) < expected:
        raise ModelFormatError(f"truncated model file: {len(blob)} of {expected} bytes")
    if len(blob) > expected:
        raise ModelFormatError(f"model file has {len(blob) - expected} trailing bytes")
    values = np.frombuffer(blob, dtype="<f8", count=n_doubles, offset=_HEADER.size).astype(np.float64)
    mean = values[:d]
    P = values[d:d + s * d].reshape(s, d)
    S = values[d + s * d:].reshape(k, d)
    return AdagioModel(mean, P, S, seed, BACKENDS[tag])
