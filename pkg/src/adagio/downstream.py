"""Downstream evaluations of an embedding.

* brute-force k-NN retrieval with a pooled majority vote per query object;
* harmonic label propagation on a symmetrized k-NN graph (Zhu, Ghahramani
  and Lafferty's Gaussian-fields method), scored by stratified cross-validation.
"""
from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from ._runtime import derive_seed, generator
from .dataset import PointCloud
from .embed import AdagioModel, transform_all
from .errors import NumericalError

WEIGHTS = ("binary", "gaussian")
# bound on the number of distance-matrix entries held at once
_CHUNK_ENTRIES = 2**24


@dataclass
class ClassificationResult:
    predicted: np.ndarray
    accuracy: float | None = None
    error: float | None = None
    per_fold: list[float] | None = None
    confusion: dict[int, dict[str, int]] | None = None
    # per-class harmonic values (n x classes); NaN where no value was solved
    scores: np.ndarray | None = field(default=None, repr=False)
    # nodes assigned by the fallback because their component has no labeled node
    unreachable: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "error": self.error,
            "per_fold": self.per_fold,
            "n_points": int(self.predicted.shape[0]),
        }
        if self.confusion is not None:
            out["confusion"] = {str(c): counts for c, counts in sorted(self.confusion.items())}
        if self.unreachable is not None:
            out["n_unreachable"] = int(np.count_nonzero(self.unreachable))
        return out


def _select_nearest(dist_row: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest entries, ordered by (distance, index)."""
    n = dist_row.shape[0]
    if k < n:
        kth = np.partition(dist_row, k - 1)[k - 1]
        candidates = np.flatnonzero(dist_row <= kth)
    else:
        candidates = np.arange(n)
    order = np.lexsort((candidates, dist_row[candidates]))
    return candidates[order[:k]]


def knn_search(database: np.ndarray, queries: np.ndarray, k: int, exclude_self: bool = False):
    """k nearest database rows for every query row: (indices, distances), both q x k.

    With ``exclude_self`` the queries are the database itself and row i never
    returns i (duplicates of i are still eligible).
    """
    database = np.asarray(database, dtype=np.float64)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    n = database.shape[0]
    available = n - 1 if exclude_self else n
    if not 1 <= k <= available:
        raise ValueError(f"k must be in [1, {available}], got {k}")
    if queries.shape[1] != database.shape[1]:
        raise ValueError(f"query dimension {queries.shape[1]} != database dimension {database.shape[1]}")

    q = queries.shape[0]
    idx = np.empty((q, k), dtype=np.int64)
    dst = np.empty((q, k), dtype=np.float64)
    chunk = max(1, _CHUNK_ENTRIES // max(n, 1))
    for lo in range(0, q, chunk):
        hi = min(lo + chunk, q)
        block = cdist(queries[lo:hi], database)
        if exclude_self:
            block[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        for row in range(hi - lo):
            sel = _select_nearest(block[row], k)
            idx[lo + row] = sel
            dst[lo + row] = block[row, sel]
    return idx, dst


def knn_query(database: PointCloud, query, k: int) -> list[tuple[int, float]]:
    """k nearest database points to ``query`` by L2, ascending; ties go to the lower index."""
    if k > database.n:
        raise ValueError(f"k={k} exceeds database size {database.n}")
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1:
        raise ValueError("query must be a single vector")
    idx, dst = knn_search(database.data, query[None, :], k)
    return [(int(i), float(d)) for i, d in zip(idx[0], dst[0])]


def _vote(labels: np.ndarray, tie_seed: int) -> int:
    counts = Counter(int(v) for v in labels)
    top = max(counts.values())
    tied = sorted(c for c, v in counts.items() if v == top)
    if len(tied) == 1:
        return tied[0]
    return tied[int(generator(tie_seed).integers(len(tied)))]


def majority_classify(query_descriptors: PointCloud, database: PointCloud, k: int, tie_seed: int = 0) -> int:
    """Modal label over the pooled k-NN labels of every query descriptor.

    Ties between modal labels are broken uniformly at random with ``tie_seed``.
    """
    if database.labels is None:
        raise ValueError("database has no labels")
    idx, _ = knn_search(database.data, query_descriptors.data, k)
    return _vote(database.labels[idx.ravel()], tie_seed)


def retrieval_accuracy(
    database: PointCloud,
    queries: PointCloud,
    groups: np.ndarray,
    k: int = 10,
    tie_seed: int = 0,
) -> tuple[ClassificationResult, np.ndarray]:
    """Classify each query object (a group of descriptors) by majority vote.

    ``queries.labels`` holds each descriptor's true object label, which
    must be constant within a group. Returns the result over objects and
    the sorted group ids it refers to.
    """
    if queries.labels is None:
        raise ValueError("query descriptors need true labels")
    groups = np.asarray(groups)
    if groups.shape != (queries.n,):
        raise ValueError("need one group id per query descriptor")
    group_ids = np.unique(groups)
    predicted = np.empty(group_ids.shape[0], dtype=np.int64)
    truth = np.empty(group_ids.shape[0], dtype=np.int64)
    for pos, g in enumerate(group_ids):
        members = np.flatnonzero(groups == g)
        labels = np.unique(queries.labels[members])
        if labels.shape[0] != 1:
            raise ValueError(f"query group {g} mixes labels {labels.tolist()}")
        truth[pos] = labels[0]
        predicted[pos] = majority_classify(
            queries.take(members), database, k, derive_seed(tie_seed, f"group:{int(g)}")
        )
    correct = int(np.count_nonzero(predicted == truth))
    accuracy = correct / group_ids.shape[0]
    return ClassificationResult(predicted, accuracy=accuracy, error=1.0 - accuracy), group_ids


@dataclass(frozen=True)
class KnnGraph:
    """Undirected weighted graph as an edge list with u < v."""

    n: int
    k: int
    u: np.ndarray
    v: np.ndarray
    weight: np.ndarray

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(w)) for a, b, w in zip(self.u, self.v, self.weight)]

    def adjacency(self) -> np.ndarray:
        W = np.zeros((self.n, self.n))
        W[self.u, self.v] = self.weight
        W[self.v, self.u] = self.weight
        return W

    def laplacian(self) -> np.ndarray:
        W = self.adjacency()
        return np.diag(W.sum(axis=1)) - W


def graph_from_edges(n: int, edges, k: int = 0) -> KnnGraph:
    """Build a graph from (u, v, weight) triples; used for hand-made graphs."""
    seen = {}
    for a, b, w in edges:
        a, b = int(a), int(b)
        if a == b:
            raise ValueError("self-loops are not allowed")
        if not (0 <= a < n and 0 <= b < n):
            raise ValueError(f"edge ({a}, {b}) outside [0, {n})")
        if w <= 0:
            raise ValueError("edge weights must be positive")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ValueError(f"duplicate edge {key}")
        seen[key] = float(w)
    keys = sorted(seen)
    u = np.array([a for a, _ in keys], dtype=np.int64)
    v = np.array([b for _, b in keys], dtype=np.int64)
    w = np.array([seen[key] for key in keys], dtype=np.float64)
    return KnnGraph(n, k, u, v, w)


def build_knn_graph(cloud: PointCloud, k: int, weights: str = "binary") -> KnnGraph:
    """Symmetrized-union k-NN graph: u ~ v when either is among the other's k nearest.

    ``weights='gaussian'`` uses exp(-|x_u - x_v|^2 / sigma^2) with sigma the
    median k-NN distance instead of unit weights.
    """
    if weights not in WEIGHTS:
        raise ValueError(f"weights must be one of {WEIGHTS}, got {weights!r}")
    if not 1 <= k < cloud.n:
        raise ValueError(f"k must be in [1, n-1] = [1, {cloud.n - 1}], got {k}")
    idx, dst = knn_search(cloud.data, cloud.data, k, exclude_self=True)
    src = np.repeat(np.arange(cloud.n), k)
    dst_nodes = idx.ravel()
    lo = np.minimum(src, dst_nodes)
    hi = np.maximum(src, dst_nodes)
    key = lo * cloud.n + hi
    unique_keys, first = np.unique(key, return_index=True)
    u = unique_keys // cloud.n
    v = unique_keys % cloud.n
    dist = dst.ravel()[first]

    if weights == "binary":
        w = np.ones(u.shape[0])
    else:
        sigma = float(np.median(dst))
        if sigma == 0.0:
            positive = dst[dst > 0]
            sigma = float(positive.mean()) if positive.size else 1.0
        w = np.exp(-(dist**2) / sigma**2)
        # far pairs can underflow; keep every edge strictly positive
        w = np.maximum(w, np.finfo(np.float64).tiny)
    return KnnGraph(cloud.n, k, u.astype(np.int64), v.astype(np.int64), w)


def harmonic_propagate(
    graph: KnnGraph,
    labeled,
    labels,
    n_classes: int | None = None,
) -> ClassificationResult:
    """Minimize x^T L x with labeled values clamped, one-vs-rest per class.

    The unlabeled block solves ``L_UU x_U = -L_UL x_L`` with a symmetric
    LDL^T factorization (no square roots, so hand-checkable systems such as
    a path midpoint land exactly on 1/2). Two classes: class 1 wins iff
    x >= 1/2. More classes: argmax over the per-class solutions, lowest
    class id on ties.
    Unlabeled nodes whose component contains no labeled node get the most
    frequent labeled class and are flagged in ``unreachable``.
    """
    labeled = np.asarray(labeled, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if labeled.size == 0:
        raise ValueError("need at least one labeled node")
    if labeled.shape != labels.shape:
        raise ValueError("labeled nodes and labels must have the same length")
    if np.unique(labeled).size != labeled.size:
        raise ValueError("labeled node ids must be distinct")
    if labeled.min() < 0 or labeled.max() >= graph.n:
        raise ValueError("labeled node id out of range")
    if labels.min() < 0:
        raise ValueError("class ids must be non-negative")
    if n_classes is None:
        n_classes = max(2, int(labels.max()) + 1)
    if labels.max() >= n_classes:
        raise ValueError(f"class id {labels.max()} >= n_classes={n_classes}")

    n = graph.n
    is_labeled = np.zeros(n, dtype=bool)
    is_labeled[labeled] = True
    predicted = np.empty(n, dtype=np.int64)
    predicted[labeled] = labels
    scores = np.full((n, n_classes), np.nan)
    scores[labeled] = np.eye(n_classes)[labels]

    adjacency = coo_matrix((graph.weight, (graph.u, graph.v)), shape=(n, n))
    _, component = connected_components(adjacency, directed=False)
    anchored = np.zeros(component.max() + 1, dtype=bool)
    anchored[component[labeled]] = True
    unreachable = ~is_labeled & ~anchored[component]
    free = np.flatnonzero(~is_labeled & anchored[component])

    if free.size:
        L = graph.laplacian()
        boundary = np.eye(n_classes)[labels]
        rhs = -L[np.ix_(free, labeled)] @ boundary
        try:
            solution = scipy.linalg.solve(L[np.ix_(free, free)], rhs, assume_a="sym")
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"harmonic system could not be solved: {exc}") from exc
        scores[free] = solution
        if n_classes == 2:
            predicted[free] = (solution[:, 1] >= 0.5).astype(np.int64)
        else:
            predicted[free] = np.argmax(solution, axis=1)

    if unreachable.any():
        fallback = int(np.argmax(np.bincount(labels, minlength=n_classes)))
        predicted[unreachable] = fallback
    return ClassificationResult(predicted, scores=scores, unreachable=unreachable)


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold id per point; each class is shuffled and dealt round-robin across folds."""
    labels = np.asarray(labels)
    rng = generator(seed)
    assignment = np.empty(labels.shape[0], dtype=np.int64)
    dealt = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < folds:
            warnings.warn(
                f"class {int(c)} has {members.size} members, fewer than {folds} folds; "
                "stratification is best-effort",
                stacklevel=3,
            )
        members = members[rng.permutation(members.size)]
        assignment[members] = (dealt + np.arange(members.size)) % folds
        dealt += members.size
    return assignment


def confusion_counts(truth: np.ndarray, predicted: np.ndarray, n_classes: int) -> dict[int, dict[str, int]]:
    """One-vs-rest tp/tn/fp/fn for every class."""
    out = {}
    for c in range(n_classes):
        t = truth == c
        p = predicted == c
        out[c] = {
            "tp": int(np.count_nonzero(t & p)),
            "tn": int(np.count_nonzero(~t & ~p)),
            "fp": int(np.count_nonzero(~t & p)),
            "fn": int(np.count_nonzero(t & ~p)),
        }
    return out


def cross_validate(
    cloud: PointCloud,
    folds: int = 10,
    k: int = 30,
    embed_model: AdagioModel | None = None,
    seed: int = 0,
    weights: str = "binary",
) -> ClassificationResult:
    """Mean held-out error of harmonic propagation over stratified folds.

    The k-NN graph is built once over all points (after the optional
    embedding); each fold in turn is unlabeled and predicted from the rest.
    """
    if cloud.labels is None:
        raise ValueError("cross-validation needs a labeled cloud")
    if folds < 2 or folds > cloud.n:
        raise ValueError(f"folds must be in [2, {cloud.n}], got {folds}")
    if embed_model is not None:
        cloud = transform_all(embed_model, cloud)
    truth = cloud.labels
    n_classes = max(2, int(truth.max()) + 1)
    graph = build_knn_graph(cloud, k, weights)
    assignment = stratified_folds(truth, folds, seed)

    predicted = np.empty(cloud.n, dtype=np.int64)
    per_fold = []
    for f in range(folds):
        held = assignment == f
        if not held.any():
            continue
        train = np.flatnonzero(~held)
        result = harmonic_propagate(graph, train, truth[train], n_classes)
        predicted[held] = result.predicted[held]
        per_fold.append(float(np.mean(result.predicted[held] != truth[held])))

    error = float(np.mean(per_fold))
    return ClassificationResult(
        predicted,
        accuracy=1.0 - error,
        error=error,
        per_fold=per_fold,
        confusion=confusion_counts(truth, predicted, n_classes),
    )
