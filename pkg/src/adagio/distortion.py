"""Pairwise distortion |‖f(x) - f(y)‖ / ‖x - y‖ - 1| between a cloud and its embedding.

Pairs are addressed by their condensed index (the ``scipy.spatial.distance.pdist``
order: (0,1), (0,2), ..., (1,2), ...) and processed in fixed-size pair blocks.
Blocks are independent, so they can be farmed out to a thread pool; every
reduction is order-independent (max, integer counts, exactly rounded ``fsum``),
so reports are identical for any number of workers.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._runtime import check_seed, generator, thread_count
from .dataset import PointCloud

DEFAULT_BINS = 50
DEFAULT_HIST_MAX = 1.0
ALL_PAIRS_LIMIT = 5000
DEFAULT_SAMPLE_PAIRS = 1_000_000
# one block holds about this many float64 coordinate differences (~16 MB)
BLOCK_ELEMENTS = 2**21


@dataclass(frozen=True)
class AllPairs:
    pass


@dataclass(frozen=True)
class SamplePairs:
    m: int
    seed: int = 0


def parse_mode(text: str, seed: int = 0) -> AllPairs | SamplePairs:
    """'all' or 'sample:M'."""
    text = text.strip().lower()
    if text == "all":
        return AllPairs()
    if text.startswith("sample:"):
        try:
            m = int(text.split(":", 1)[1])
        except ValueError:
            raise ValueError(f"bad sample size in mode {text!r}") from None
        return SamplePairs(m, seed)
    raise ValueError(f"mode must be 'all' or 'sample:M', got {text!r}")


def default_mode(n: int, seed: int = 0) -> AllPairs | SamplePairs:
    if n <= ALL_PAIRS_LIMIT:
        return AllPairs()
    return SamplePairs(min(DEFAULT_SAMPLE_PAIRS, n_pairs(n)), seed)


@dataclass(frozen=True)
class DistortionReport:
    max: float
    mean: float
    bin_edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    overflow: int
    n_pairs_evaluated: int
    n_zero_pairs: int
    n_points: int
    sampled: bool
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "max": self.max,
            "mean": self.mean,
            "n_points": self.n_points,
            "n_pairs_evaluated": self.n_pairs_evaluated,
            "n_zero_pairs": self.n_zero_pairs,
            "sampled": self.sampled,
            "seed": self.seed,
            "histogram": {
                "bin_edges": [float(e) for e in self.bin_edges],
                "counts": [int(c) for c in self.counts],
                "overflow": self.overflow,
            },
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bin_left", "bin_right", "count"])
        for left, right, count in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            writer.writerow([repr(float(left)), repr(float(right)), int(count)])
        writer.writerow([repr(float(self.bin_edges[-1])), "inf", self.overflow])
        return buf.getvalue()


def pair_distortion(x, y, fx, fy) -> float:
    x, y, fx, fy = (np.asarray(v, dtype=np.float64) for v in (x, y, fx, fy))
    original = math.sqrt(float(np.sum((y - x) ** 2)))
    if original == 0.0:
        raise ValueError("distortion is undefined for coincident points")
    embedded = math.sqrt(float(np.sum((fy - fx) ** 2)))
    return abs(embedded / original - 1.0)


def n_pairs(n: int) -> int:
    return n * (n - 1) // 2


def condensed_to_pairs(index: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map condensed pair indices to (i, j) with i < j."""
    k = np.asarray(index, dtype=np.int64)
    # row i starts at offset i*n - i*(i+1)/2; invert with a float estimate, then fix up
    disc = (2 * n - 1) ** 2 - 8 * k.astype(np.float64)
    i = np.floor(((2 * n - 1) - np.sqrt(np.maximum(disc, 0.0))) / 2).astype(np.int64)
    i = np.clip(i, 0, n - 2)

    def start(row):
        return row * n - row * (row + 1) // 2

    for _ in range(3):
        too_far = start(i) > k
        i -= too_far
        too_short = start(i + 1) <= k
        i += too_short
    j = k - start(i) + i + 1
    return i, j


def pair_distances(data: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Euclidean distances of the listed pairs, from explicit coordinate differences."""
    diff = data[j] - data[i]
    return np.sqrt((diff * diff).sum(axis=1))


def all_pair_distances(cloud: PointCloud | np.ndarray, threads: int | None = None) -> np.ndarray:
    """Condensed vector of all n(n-1)/2 distances, same kernel as :func:`evaluate`."""
    data = cloud.data if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    n = data.shape[0]
    blocks = _blocks(None, n_pairs(n), _block_size(data.shape[1]))

    def work(block):
        i, j = condensed_to_pairs(_block_indices(block), n)
        return pair_distances(data, i, j)

    parts = _run(work, blocks, threads)
    return np.concatenate(parts) if parts else np.zeros(0)


def _block_size(d: int) -> int:
    return max(256, BLOCK_ELEMENTS // max(d, 1))


def _blocks(sample: np.ndarray | None, total: int, size: int) -> list:
    if sample is None:
        return [(lo, min(lo + size, total)) for lo in range(0, total, size)]
    return [sample[lo:lo + size] for lo in range(0, sample.shape[0], size)]


def _block_indices(block) -> np.ndarray:
    if isinstance(block, tuple):
        return np.arange(block[0], block[1], dtype=np.int64)
    return block


def _run(work, blocks, threads):
    workers = thread_count() if threads is None else threads
    if workers < 1:
        raise ValueError("thread count must be >= 1")
    if workers == 1 or len(blocks) <= 1:
        return [work(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, blocks))


def _block_distortions(orig, emb, idx, n, original_distances):
    i, j = condensed_to_pairs(idx, n)
    if original_distances is None:
        d_orig = pair_distances(orig, i, j)
    else:
        d_orig = original_distances[idx]
    d_emb = pair_distances(emb, i, j)
    nonzero = d_orig > 0
    values = np.abs(d_emb[nonzero] / d_orig[nonzero] - 1.0)
    return values, int(nonzero.size - np.count_nonzero(nonzero))


def _select_pairs(mode, n: int) -> np.ndarray | None:
    if isinstance(mode, AllPairs):
        return None
    if isinstance(mode, SamplePairs):
        total = n_pairs(n)
        if not 1 <= mode.m <= total:
            raise ValueError(f"sample size must be in [1, {total}], got {mode.m}")
        chosen = generator(check_seed(mode.seed)).choice(total, size=mode.m, replace=False)
        return np.sort(chosen.astype(np.int64))
    raise TypeError(f"unknown evaluation mode {mode!r}")


def evaluate(
    original: PointCloud | np.ndarray,
    embedded: PointCloud | np.ndarray,
    mode: AllPairs | SamplePairs | None = None,
    hist_bins: int = DEFAULT_BINS,
    hist_max: float = DEFAULT_HIST_MAX,
    threads: int | None = None,
    block_pairs: int | None = None,
    original_distances: np.ndarray | None = None,
) -> DistortionReport:
    """Distortion statistics over all pairs, or over m pairs sampled without replacement.

    Pairs whose original distance is zero are skipped and counted in
    ``n_zero_pairs``. The histogram has ``hist_bins`` equal bins over
    ``[0, hist_max]`` (last bin closed) plus an overflow count for larger
    values. ``original_distances`` may carry a precomputed condensed
    distance vector of ``original`` (see :func:`all_pair_distances`).
    """
    orig = original.data if isinstance(original, PointCloud) else np.asarray(original, dtype=np.float64)
    emb = embedded.data if isinstance(embedded, PointCloud) else np.asarray(embedded, dtype=np.float64)
    n = orig.shape[0]
    if emb.shape[0] != n:
        raise ValueError(f"point count mismatch: original n={n}, embedded n={emb.shape[0]}")
    if hist_bins < 1 or not hist_max > 0:
        raise ValueError("need hist_bins >= 1 and hist_max > 0")
    if original_distances is not None and original_distances.shape != (n_pairs(n),):
        raise ValueError("original_distances must be the condensed vector of all pairs")
    if mode is None:
        mode = default_mode(n)

    sample = _select_pairs(mode, n)
    size = block_pairs or _block_size(max(orig.shape[1], emb.shape[1]))
    blocks = _blocks(sample, n_pairs(n), size)

    def work(block):
        values, zeros = _block_distortions(orig, emb, _block_indices(block), n, original_distances)
        in_range = values <= hist_max
        bins = np.minimum((values[in_range] * (hist_bins / hist_max)).astype(np.int64), hist_bins - 1)
        counts = np.bincount(bins, minlength=hist_bins)
        peak = float(values.max()) if values.size else 0.0
        return values, zeros, counts, int(values.size - np.count_nonzero(in_range)), peak

    results = _run(work, blocks, threads)

    evaluated = sum(r[0].size for r in results)
    zeros = sum(r[1] for r in results)
    counts = np.zeros(hist_bins, dtype=np.int64)
    for r in results:
        counts += r[2]
    overflow = sum(r[3] for r in results)
    peak = max((r[4] for r in results), default=0.0)
    total = math.fsum(itertools.chain.from_iterable(r[0] for r in results))
    mean = total / evaluated if evaluated else 0.0

    sampled = isinstance(mode, SamplePairs)
    return DistortionReport(
        max=peak,
        mean=mean,
        bin_edges=np.linspace(0.0, hist_max, hist_bins + 1),
        counts=counts,
        overflow=overflow,
        n_pairs_evaluated=evaluated,
        n_zero_pairs=zeros,
        n_points=n,
        sampled=sampled,
        seed=mode.seed if sampled else None,
    )


def max_distortion(original, embedded, threads: int | None = None, original_distances=None) -> float:
    return evaluate(
        original, embedded, AllPairs(), threads=threads, original_distances=original_distances
    ).max


def pair_distortions(original, embedded, threads: int | None = None) -> np.ndarray:
    """Condensed vector of every pair's distortion; NaN where the original pair coincides."""
    d_orig = all_pair_distances(original, threads)
    d_emb = all_pair_distances(embedded, threads)
    out = np.full(d_orig.shape, np.nan)
    nz = d_orig > 0
    out[nz] = np.abs(d_emb[nz] / d_orig[nz] - 1.0)
    return out
