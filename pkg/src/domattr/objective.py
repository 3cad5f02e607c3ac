"""Neighbor graph and the four-term training objective.

The total objective is

    label + c1 * attr_fit + c2 * domain_match + c3 * neighbor

where the four terms are stored unweighted in the breakdown and combined
on read. The neighbor term follows the ordered double-sum convention: each
unordered neighbor pair is counted twice, which keeps the gradient
constants aligned with the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DomainDataset, MultiDomainDataset, one_hot
from .errors import ConfigError
from .features import ForwardCache, build_windows, forward_all

ATTR_SCOPE_ALL = "all"
ATTR_SCOPE_LABELED = "labeled-target"
ATTR_SCOPES = (ATTR_SCOPE_ALL, ATTR_SCOPE_LABELED)


# ---------------------------------------------------------------------------
# Hyperparameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Hyper:
    """All solver and objective knobs in one frozen bundle.

    c1/c2/c3 weight the attribute-fit, domain-matching, and neighborhood
    terms. tau is the coordinate-descent step, eta the outer iteration cap,
    eps the objective-change stopping threshold, ridge the regularizer added
    to every Gram solve, and k the neighbor count of the target graph.
    """

    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    alpha: int = 2
    m_attr: int = 8
    m_shared: int = 8
    m_domain: int = 8
    tau: float = 1e-2
    eta: int = 200
    eps: float = 1e-6
    ridge: float = 1e-6
    k: int = 5
    inner_steps: int = 1
    backtrack: bool = True
    attr_scope: str = ATTR_SCOPE_ALL
    freeze_trace: bool = False

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "tau", "eps", "ridge"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        for name in ("alpha", "m_attr", "m_shared", "m_domain", "k", "inner_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.attr_scope not in ATTR_SCOPES:
            raise ConfigError(
                f"attr_scope must be one of {ATTR_SCOPES}, got {self.attr_scope!r}"
            )


# ---------------------------------------------------------------------------
# Neighbor graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NeighborGraph:
    """Symmetric binary adjacency over target-domain points."""

    adjacency: np.ndarray  # (n, n) float64 in {0, 1}, zero diagonal
    k: int

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ConfigError(f"adjacency must be square, got {adj.shape}")
        if not np.array_equal(adj, adj.T):
            raise ConfigError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise ConfigError("adjacency diagonal must be zero")
        if not np.all((adj == 0) | (adj == 1)):
            raise ConfigError("adjacency entries must be 0 or 1")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)


def build_knn(target: DomainDataset, k: int) -> NeighborGraph:
    """Mutual-OR k-nearest-neighbor graph on mean-pooled instance vectors.

    Each point is summarized by the column mean of its instance matrix;
    neighbors are the k closest other points by Euclidean distance, ties
    broken toward the smaller index, and the directed graph is symmetrized
    with OR. The graph is built once and stays fixed during training.
    """
    n = len(target)
    if not 1 <= k < n:
        raise ConfigError(f"k must satisfy 1 <= k < n_T={n}, got {k}")
    reps = np.stack([p.instances.mean(axis=1) for p in target.points])
    diff = reps[:, None, :] - reps[None, :, :]
    d2 = np.einsum("ijd,ijd->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    adj = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        order = np.argsort(d2[i], kind="stable")  # stable -> smaller index on ties
        adj[i, order[:k]] = 1.0
    adj = np.maximum(adj, adj.T)
    return NeighborGraph(adjacency=adj, k=k)


# ---------------------------------------------------------------------------
# Static per-domain matrices
# ---------------------------------------------------------------------------


@dataclass
class DatasetMatrices:
    """Labels (one-hot, labeled prefix only) and attributes per domain."""

    labels: list[np.ndarray]  # (num_classes, labeled_count) per domain
    attrs: list[np.ndarray]  # (num_attributes, n_t) per domain


def build_matrices(ds: MultiDomainDataset) -> DatasetMatrices:
    labels = []
    attrs = []
    for dom in ds.domains:
        cnt = dom.labeled_count
        Y = np.zeros((ds.num_classes, cnt), dtype=np.float64)
        for i in range(cnt):
            Y[:, i] = one_hot(dom.points[i].label, ds.num_classes)
        A = np.stack([p.attributes for p in dom.points]).T.astype(np.float64)
        labels.append(Y)
        attrs.append(A)
    return DatasetMatrices(labels=labels, attrs=attrs)


def _ensure_cache(ds, params, cache, windows):
    if cache is not None:
        return cache
    if windows is None:
        windows = build_windows(ds, params.alpha)
    return forward_all(windows, params)


def domain_scores(cache: ForwardCache, params, t: int, cnt: int) -> np.ndarray:
    """Score matrix (num_classes, cnt) for the first cnt points of domain t."""
    return (
        params.shared_head.T @ cache.shared[t].out[:, :cnt]
        + params.domain_heads[t].T @ cache.domain[t].out[:, :cnt]
        + params.attr_head.T @ cache.attr[t].out[:, :cnt]
    )


def attr_scope_count(ds: MultiDomainDataset, t: int, scope: str) -> int:
    """How many leading points of domain t the attribute-fit term covers."""
    if scope == ATTR_SCOPE_ALL:
        return len(ds.domains[t])
    return ds.domains[t].labeled_count


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------


def label_loss(ds, params, *, cache=None, windows=None, mats=None) -> float:
    """Sum of squared score errors over every labeled point."""
    cache = _ensure_cache(ds, params, cache, windows)
    mats = mats or build_matrices(ds)
    total = 0.0
    for t, dom in enumerate(ds.domains):
        cnt = dom.labeled_count
        if cnt == 0:
            continue
        resid = domain_scores(cache, params, t, cnt) - mats.labels[t]
        total += float(np.sum(resid * resid))
    return total


def attr_fit_loss(
    ds, params, scope: str = ATTR_SCOPE_ALL, *, cache=None, windows=None, mats=None
) -> float:
    """Squared distance between attribute-branch outputs and mapped attributes."""
    if scope not in ATTR_SCOPES:
        raise ConfigError(f"unknown attribute-fit scope {scope!r}")
    cache = _ensure_cache(ds, params, cache, windows)
    mats = mats or build_matrices(ds)
    total = 0.0
    for t in range(ds.num_domains):
        cnt = attr_scope_count(ds, t, scope)
        if cnt == 0:
            continue
        resid = cache.attr[t].out[:, :cnt] - params.attr_map.T @ mats.attrs[t][:, :cnt]
        total += float(np.sum(resid * resid))
    return total


def domain_match_loss(ds, params, *, cache=None, windows=None) -> float:
    """Squared gaps between per-domain means of the shared branch."""
    cache = _ensure_cache(ds, params, cache, windows)
    means = [cache.shared[t].out.mean(axis=1) for t in range(ds.num_domains)]
    total = 0.0
    for t in range(ds.num_domains):
        for u in range(t + 1, ds.num_domains):
            gap = means[t] - means[u]
            total += float(gap @ gap)
    return total


def neighbor_loss(ds, params, graph: NeighborGraph, *, cache=None, windows=None) -> float:
    """Ordered double sum of squared representation gaps over target neighbors."""
    cache = _ensure_cache(ds, params, cache, windows)
    T = ds.target_index
    F = np.vstack([cache.shared[T].out, cache.domain[T].out, cache.attr[T].out])
    return pairwise_gap(F, graph)


def pairwise_gap(rows: np.ndarray, graph: NeighborGraph) -> float:
    """sum_{i,i'} M_{ii'} ||rows[:,i] - rows[:,i']||^2 via the graph Laplacian."""
    lap = np.diag(graph.degrees) - graph.adjacency
    return 2.0 * float(np.einsum("kn,nm,km->", rows, lap, rows))


@dataclass(frozen=True)
class ObjectiveBreakdown:
    """Total objective and its four unweighted term values."""

    total: float
    label: float
    attr: float
    match: float
    neighbor: float

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "label": self.label,
            "attr": self.attr,
            "match": self.match,
            "neighbor": self.neighbor,
        }

    def nonfinite_term(self) -> str | None:
        for name, value in self.as_dict().items():
            if name != "total" and not np.isfinite(value):
                return name
        return None if np.isfinite(self.total) else "total"


def objective(
    ds, params, graph: NeighborGraph, hyper: Hyper, *, cache=None, windows=None, mats=None
) -> ObjectiveBreakdown:
    """Evaluate all four terms and their weighted total."""
    cache = _ensure_cache(ds, params, cache, windows)
    mats = mats or build_matrices(ds)
    label = label_loss(ds, params, cache=cache, mats=mats)
    attr = attr_fit_loss(ds, params, hyper.attr_scope, cache=cache, mats=mats)
    match = domain_match_loss(ds, params, cache=cache)
    neighbor = neighbor_loss(ds, params, graph, cache=cache)
    total = label + hyper.c1 * attr + hyper.c2 * match + hyper.c3 * neighbor
    return ObjectiveBreakdown(
        total=total, label=label, attr=attr, match=match, neighbor=neighbor
    )
