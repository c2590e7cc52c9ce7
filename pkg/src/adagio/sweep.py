"""Dimension vs. distortion sweeps and minimal-dimension searches across methods."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import PointCloud, center
from .distortion import AllPairs, all_pair_distances, default_mode, evaluate
from .embed import fit, fit_with_split, transform_all
from .spectral import exact_top_svd

METHODS = ("adagio_exact", "adagio_randomized", "pca", "jl", "external")
CSV_HEADER = ["method", "target_dim", "seed", "max_distortion", "fit_seconds", "eval_seconds"]


@dataclass(frozen=True)
class SweepRow:
    method: str
    target_dim: int
    max_distortion: float
    fit_seconds: float
    eval_seconds: float
    seed: int

    def csv_fields(self) -> list[str]:
        return [
            self.method, str(self.target_dim), str(self.seed), repr(self.max_distortion),
            repr(self.fit_seconds), repr(self.eval_seconds),
        ]


@dataclass
class MinDimResult:
    method: str
    delta: float
    seed: int
    target_dim: int | None
    max_distortion: float | None
    achieved: bool
    probes: dict[int, float] = field(default_factory=dict)
    non_monotone: bool = False
    fit_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "delta": self.delta,
            "seed": self.seed,
            "target_dim": self.target_dim,
            "max_distortion": self.max_distortion,
            "achieved": self.achieved,
            "non_monotone": self.non_monotone,
            "probes": [{"target_dim": r, "max_distortion": v} for r, v in sorted(self.probes.items())],
        }


def load_external_matrix(path) -> np.ndarray:
    """An r x d embedding matrix stored as .npy or as CSV rows."""
    path = Path(path)
    if path.suffix == ".npy":
        matrix = np.load(path)
    else:
        matrix = np.loadtxt(path, delimiter=",", ndmin=2)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"external embedding must be a 2-d matrix, got shape {matrix.shape}")
    return matrix


def embed_with(
    method: str,
    cloud: PointCloud,
    r: int,
    seed: int,
    external: np.ndarray | None = None,
) -> np.ndarray:
    """Embedded coordinates (n x r) of ``cloud`` under one of :data:`METHODS`."""
    if method == "pca":
        if not 1 <= r <= cloud.d:
            raise ValueError(f"target dimension must be in [1, {cloud.d}], got {r}")
        centered, _ = center(cloud)
        # beyond min(n, d) the extra directions carry no data; the full basis is already exact
        basis, _ = exact_top_svd(centered, min(r, cloud.n, cloud.d))
        return basis.project(centered.data)
    if method == "jl":
        if not 1 <= r <= cloud.d:
            raise ValueError(f"target dimension must be in [1, {cloud.d}], got {r}")
        return transform_all(fit_with_split(cloud, 0, r, "exact", seed), cloud).data
    if method in ("adagio_exact", "adagio_randomized"):
        backend = method.split("_", 1)[1]
        return transform_all(fit(cloud, r, backend, seed), cloud).data
    if method == "external":
        if external is None:
            raise ValueError("method 'external' needs an embedding matrix")
        if external.shape[1] != cloud.d:
            raise ValueError(f"external matrix has {external.shape[1]} columns, cloud has d={cloud.d}")
        return cloud.data @ external.T
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def tradeoff(
    cloud: PointCloud,
    dims: list[int],
    methods: list[str],
    seeds: list[int],
    eval_mode=None,
    external: np.ndarray | None = None,
    threads: int | None = None,
) -> list[SweepRow]:
    """One row per (method, dim, seed); 'external' contributes one row per seed at its own r."""
    if not dims:
        raise ValueError("dims must be non-empty")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    for r in dims:
        if not 1 <= r <= cloud.d:
            raise ValueError(f"target dimension {r} outside [1, {cloud.d}]")
    mode = eval_mode or default_mode(cloud.n)
    cached = all_pair_distances(cloud, threads) if isinstance(mode, AllPairs) else None

    rows = []
    for method in methods:
        method_dims = [external.shape[0]] if method == "external" and external is not None else dims
        for r in method_dims:
            for seed in seeds:
                t0 = time.perf_counter()
                embedded = embed_with(method, cloud, r, seed, external)
                t1 = time.perf_counter()
                report = evaluate(cloud, embedded, mode, threads=threads, original_distances=cached)
                t2 = time.perf_counter()
                rows.append(SweepRow(method, r, report.max, t1 - t0, t2 - t1, seed))
    return rows


def rows_to_csv(rows: list[SweepRow], timing: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = CSV_HEADER if timing else CSV_HEADER[:4]
    writer.writerow(header)
    for row in rows:
        writer.writerow(row.csv_fields()[: len(header)])
    return buf.getvalue()


def min_dim_for_distortion(
    cloud: PointCloud,
    method: str,
    delta: float,
    seed: int = 0,
    r_min: int | None = None,
    r_max: int | None = None,
    eval_mode=None,
    threads: int | None = None,
    original_distances: np.ndarray | None = None,
) -> MinDimResult:
    """Smallest r in [r_min, r_max] whose map (fixed seed) reaches max distortion <= delta.

    Probes r_min, r_min + 1, r_min + 2, r_min + 4, ... until a probe succeeds,
    then bisects between the last failure and the first success. This
    assumes distortion is non-increasing in r; the randomized methods only
    satisfy that in expectation, so any probe sequence that violates it sets
    ``non_monotone`` on the result.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if method not in METHODS or method == "external":
        raise ValueError(f"cannot search dimensions for method {method!r}")
    lowest = 2 if method.startswith("adagio") else 1
    r_min = lowest if r_min is None else r_min
    r_max = cloud.d if r_max is None else r_max
    if not lowest <= r_min <= r_max <= cloud.d:
        raise ValueError(f"need {lowest} <= r_min <= r_max <= {cloud.d}, got [{r_min}, {r_max}]")

    mode = eval_mode or default_mode(cloud.n)
    if original_distances is None and isinstance(mode, AllPairs):
        original_distances = all_pair_distances(cloud, threads)
    result = MinDimResult(method, delta, seed, None, None, False)

    def probe(r: int) -> bool:
        if r not in result.probes:
            t0 = time.perf_counter()
            embedded = embed_with(method, cloud, r, seed)
            result.fit_seconds += time.perf_counter() - t0
            report = evaluate(cloud, embedded, mode, threads=threads, original_distances=original_distances)
            result.probes[r] = report.max
        return result.probes[r] <= delta

    if probe(r_min):
        hi = r_min
    else:
        lo, step, hi = r_min, 1, None
        while hi is None:
            r = min(r_min + step, r_max)
            if probe(r):
                hi = r
            elif r == r_max:
                break
            else:
                lo, step = r, step * 2
        if hi is not None:
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if probe(mid):
                    hi = mid
                else:
                    lo = mid

    ordered = [result.probes[r] for r in sorted(result.probes)]
    result.non_monotone = any(b > a for a, b in zip(ordered, ordered[1:]))
    if hi is not None:
        result.target_dim = hi
        result.max_distortion = result.probes[hi]
        result.achieved = True
    else:
        result.max_distortion = result.probes[r_max]
    return result
