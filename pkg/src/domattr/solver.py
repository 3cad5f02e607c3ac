"""Alternating training loop: filter sweeps plus closed-form head solves.

One outer iteration updates, in order: the attribute filters, the shared
filters, each auxiliary domain's filters, the target domain's filters (all
by coordinate gradient descent, one filter column at a time), then the
attribute head, the shared head, every domain head, and the attribute map
(all by regularized least squares). The loop stops when the objective
change drops to ``eps`` or after ``eta`` iterations.

Filters are swept sequentially and the forward cache is refreshed after
every accepted step, so each gradient sees all updates made so far. With
backtracking on, a step is halved until the family's own sub-objective does
not increase (at most 20 halvings, otherwise the step is rejected), which
makes the objective trace non-increasing across gradient sweeps.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .data import DomainDataset, MultiDomainDataset
from .errors import ConfigError, DataError, DivergenceError, InputError
from .features import (
    BranchForward,
    ForwardCache,
    build_windows,
    forward_all,
    predict,
    refresh_filter,
)
from .gradients import (
    FAMILY_ATTR,
    FAMILY_DOMAIN,
    FAMILY_SHARED,
    filter_gradient,
)
from .objective import (
    Hyper,
    NeighborGraph,
    ObjectiveBreakdown,
    attr_scope_count,
    build_knn,
    build_matrices,
    domain_match_loss,
    domain_scores,
    label_loss,
    attr_fit_loss,
    objective,
    pairwise_gap,
)

# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class ModelParams:
    """All learnable matrices plus the window length that shapes them.

    Filter matrices are (alpha*d, m); heads are (m, num_classes); the
    attribute map is (num_attributes, m_attr). ``domain_filters`` and
    ``domain_heads`` are ordered like the dataset's domains, target last.
    """

    alpha: int
    attr_filters: np.ndarray
    shared_filters: np.ndarray
    domain_filters: list[np.ndarray]
    attr_head: np.ndarray
    shared_head: np.ndarray
    domain_heads: list[np.ndarray]
    attr_map: np.ndarray

    def clone(self) -> "ModelParams":
        return ModelParams(
            alpha=self.alpha,
            attr_filters=self.attr_filters.copy(),
            shared_filters=self.shared_filters.copy(),
            domain_filters=[W.copy() for W in self.domain_filters],
            attr_head=self.attr_head.copy(),
            shared_head=self.shared_head.copy(),
            domain_heads=[U.copy() for U in self.domain_heads],
            attr_map=self.attr_map.copy(),
        )

    @property
    def num_domains(self) -> int:
        return len(self.domain_filters)


def init_params(ds: MultiDomainDataset, hyper: Hyper, seed: int) -> ModelParams:
    """Seeded start: filters uniform in [-s, s] with s = 1/sqrt(alpha*d);
    heads and the attribute map start at zero so the first closed-form
    solves define them from data."""
    rows = hyper.alpha * ds.dim
    scale = 1.0 / np.sqrt(rows)
    rng = np.random.default_rng(seed)
    attr_filters = rng.uniform(-scale, scale, size=(rows, hyper.m_attr))
    shared_filters = rng.uniform(-scale, scale, size=(rows, hyper.m_shared))
    domain_filters = [
        rng.uniform(-scale, scale, size=(rows, hyper.m_domain))
        for _ in range(ds.num_domains)
    ]
    return ModelParams(
        alpha=hyper.alpha,
        attr_filters=attr_filters,
        shared_filters=shared_filters,
        domain_filters=domain_filters,
        attr_head=np.zeros((hyper.m_attr, ds.num_classes)),
        shared_head=np.zeros((hyper.m_shared, ds.num_classes)),
        domain_heads=[
            np.zeros((hyper.m_domain, ds.num_classes)) for _ in range(ds.num_domains)
        ],
        attr_map=np.zeros((ds.num_attributes, hyper.m_attr)),
    )


# ---------------------------------------------------------------------------
# Closed-form head solves
# ---------------------------------------------------------------------------


def _prep(ds, params, cache, windows, mats):
    if windows is None:
        windows = build_windows(ds, params.alpha)
    if cache is None:
        cache = forward_all(windows, params)
    if mats is None:
        mats = build_matrices(ds)
    return cache, windows, mats


def attr_head_system(ds, params, *, cache=None, windows=None, mats=None):
    """Attribute-branch features F and residual targets over the labeled pool."""
    cache, windows, mats = _prep(ds, params, cache, windows, mats)
    feats, resids = [], []
    for t, dom in enumerate(ds.domains):
        cnt = dom.labeled_count
        if cnt == 0:
            continue
        feats.append(cache.attr[t].out[:, :cnt])
        resids.append(
            mats.labels[t]
            - params.shared_head.T @ cache.shared[t].out[:, :cnt]
            - params.domain_heads[t].T @ cache.domain[t].out[:, :cnt]
        )
    if not feats:
        raise DataError("labeled pool is empty; cannot solve the attribute head")
    return np.hstack(feats), np.hstack(resids)


def shared_head_system(ds, params, *, cache=None, windows=None, mats=None):
    """Shared-branch features and residual targets over the labeled pool."""
    cache, windows, mats = _prep(ds, params, cache, windows, mats)
    feats, resids = [], []
    for t, dom in enumerate(ds.domains):
        cnt = dom.labeled_count
        if cnt == 0:
            continue
        feats.append(cache.shared[t].out[:, :cnt])
        resids.append(
            mats.labels[t]
            - params.attr_head.T @ cache.attr[t].out[:, :cnt]
            - params.domain_heads[t].T @ cache.domain[t].out[:, :cnt]
        )
    if not feats:
        raise DataError("labeled pool is empty; cannot solve the shared head")
    return np.hstack(feats), np.hstack(resids)


def domain_head_system(ds, params, t: int, *, cache=None, windows=None, mats=None):
    """Domain-t branch features and residual targets (that domain only)."""
    cache, windows, mats = _prep(ds, params, cache, windows, mats)
    cnt = ds.domains[t].labeled_count
    if cnt == 0:
        raise DataError(f"domain {t} has no labeled points; cannot solve its head")
    F = cache.domain[t].out[:, :cnt]
    R = (
        mats.labels[t]
        - params.shared_head.T @ cache.shared[t].out[:, :cnt]
        - params.attr_head.T @ cache.attr[t].out[:, :cnt]
    )
    return F, R


def attr_map_system(ds, params, scope: str, *, cache=None, windows=None, mats=None):
    """Attribute columns A and attribute-branch features over the fit scope."""
    cache, windows, mats = _prep(ds, params, cache, windows, mats)
    attrs, feats = [], []
    for t in range(ds.num_domains):
        cnt = attr_scope_count(ds, t, scope)
        if cnt == 0:
            continue
        attrs.append(mats.attrs[t][:, :cnt])
        feats.append(cache.attr[t].out[:, :cnt])
    if not attrs:
        raise DataError("attribute-fit pool is empty; cannot solve the attribute map")
    return np.hstack(attrs), np.hstack(feats)


def _ridge_heads(F: np.ndarray, R: np.ndarray, lam: float) -> np.ndarray:
    """argmin_U ||R - U^T F||_F^2 + lam ||U||_F^2 via the normal equations."""
    return linalg.ridge_solve(F @ F.T, F @ R.T, lam)


def solve_attr_head(ds, params, hyper, *, cache=None, windows=None, mats=None):
    F, R = attr_head_system(ds, params, cache=cache, windows=windows, mats=mats)
    return _ridge_heads(F, R, hyper.ridge)


def solve_shared_head(ds, params, hyper, *, cache=None, windows=None, mats=None):
    F, R = shared_head_system(ds, params, cache=cache, windows=windows, mats=mats)
    return _ridge_heads(F, R, hyper.ridge)


def solve_domain_head(ds, params, hyper, t: int, *, cache=None, windows=None, mats=None):
    F, R = domain_head_system(ds, params, t, cache=cache, windows=windows, mats=mats)
    return _ridge_heads(F, R, hyper.ridge)


def solve_attr_map(ds, params, hyper, *, cache=None, windows=None, mats=None):
    A, F = attr_map_system(
        ds, params, hyper.attr_scope, cache=cache, windows=windows, mats=mats
    )
    return linalg.ridge_solve(A @ A.T, A @ F.T, hyper.ridge)


# ---------------------------------------------------------------------------
# Coordinate gradient sweeps
# ---------------------------------------------------------------------------

_MAX_HALVINGS = 20


def _domain_label_term(ds, params, cache, mats, t) -> float:
    cnt = ds.domains[t].labeled_count
    if cnt == 0:
        return 0.0
    r = domain_scores(cache, params, t, cnt) - mats.labels[t]
    return float(np.sum(r * r))


def _sub_objective(ds, params, graph, hyper, family, t, cache, mats) -> float:
    """Only the objective terms that depend on the given filter family."""
    T = ds.target_index
    if family == FAMILY_ATTR:
        value = label_loss(ds, params, cache=cache, mats=mats)
        value += hyper.c1 * attr_fit_loss(
            ds, params, hyper.attr_scope, cache=cache, mats=mats
        )
        value += hyper.c3 * pairwise_gap(cache.attr[T].out, graph)
        return value
    if family == FAMILY_SHARED:
        value = label_loss(ds, params, cache=cache, mats=mats)
        value += hyper.c2 * domain_match_loss(ds, params, cache=cache)
        value += hyper.c3 * pairwise_gap(cache.shared[T].out, graph)
        return value
    if t == T:
        return _domain_label_term(ds, params, cache, mats, t) + hyper.c3 * pairwise_gap(
            cache.domain[T].out, graph
        )
    return _domain_label_term(ds, params, cache, mats, t)


def sweep_filters(
    ds, params, graph, hyper, family: str, t: int | None = None,
    *, windows=None, cache=None, mats=None,
) -> np.ndarray:
    """One coordinate-descent pass over every filter column of a family.

    Returns the updated filter matrix without touching ``params``. When a
    shared forward cache is passed in it is kept in sync with the returned
    filters, which is how ``fit`` avoids recomputing forwards from scratch.

    With ``hyper.freeze_trace`` the pooling traces seen by the gradients are
    pinned at their sweep-start values; outputs, residuals, and backtracking
    always use the live forward values.
    """
    if family == FAMILY_DOMAIN:
        if t is None:
            raise ConfigError("sweeping domain filters requires the domain index")
        source = params.domain_filters[t]
    elif family == FAMILY_ATTR:
        source = params.attr_filters
    elif family == FAMILY_SHARED:
        source = params.shared_filters
    else:
        raise ConfigError(f"unknown filter family {family!r}")
    cache, windows, mats = _prep(ds, params, cache, windows, mats)

    W = source.copy()
    live = _family_branches(cache, family, t, ds)
    grad_cache = _frozen_view(cache, family, t, ds) if hyper.freeze_trace else cache

    def apply_column(k, col):
        W[:, k] = col
        for dom_idx, bf in live:
            refresh_filter(bf, col, windows[dom_idx], k)

    for k in range(W.shape[1]):
        for _ in range(hyper.inner_steps):
            if hyper.tau == 0.0:
                break
            g = filter_gradient(
                ds, params, graph, hyper, family, t, k,
                cache=grad_cache, windows=windows, mats=mats,
            )
            if not np.any(g):
                continue
            if not hyper.backtrack:
                apply_column(k, W[:, k] - hyper.tau * g)
                continue
            base = _sub_objective(ds, params, graph, hyper, family, t, cache, mats)
            w0 = W[:, k].copy()
            step = hyper.tau
            accepted = False
            for _ in range(_MAX_HALVINGS + 1):
                apply_column(k, w0 - step * g)
                if _sub_objective(ds, params, graph, hyper, family, t, cache, mats) <= base:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                apply_column(k, w0)
    return W


def _family_branches(cache: ForwardCache, family, t, ds):
    """(domain index, BranchForward) pairs this family's filters feed into."""
    if family == FAMILY_ATTR:
        return [(u, cache.attr[u]) for u in range(ds.num_domains)]
    if family == FAMILY_SHARED:
        return [(u, cache.shared[u]) for u in range(ds.num_domains)]
    return [(t, cache.domain[t])]


def _frozen_view(cache: ForwardCache, family, t, ds) -> ForwardCache:
    """Cache view whose traces for one family are frozen copies.

    The ``out`` arrays are shared with the live cache so residuals stay
    current; only argmax/preact (what the gradient's chain rule reads) are
    pinned.
    """

    def pin(bf: BranchForward) -> BranchForward:
        return BranchForward(out=bf.out, argmax=bf.argmax.copy(), preact=bf.preact.copy())

    attr = list(cache.attr)
    shared = list(cache.shared)
    domain = list(cache.domain)
    if family == FAMILY_ATTR:
        attr = [pin(bf) for bf in attr]
    elif family == FAMILY_SHARED:
        shared = [pin(bf) for bf in shared]
    else:
        domain[t] = pin(domain[t])
    return ForwardCache(attr=attr, shared=shared, domain=domain)


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


@dataclass
class TrainReport:
    """Objective trace and stopping diagnostics of one fit() call."""

    trace: list[ObjectiveBreakdown] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    wall_time_per_iter: float = 0.0

    def as_dict(self) -> dict:
        return {
            "trace": [bd.as_dict() for bd in self.trace],
            "iterations": self.iterations,
            "converged": self.converged,
        }


def fit(
    ds: MultiDomainDataset, hyper: Hyper, seed: int, *, freeze_attr_head: bool = False
) -> tuple[ModelParams, TrainReport]:
    """Run the alternating training loop from a seeded initialization.

    Deterministic given (ds, hyper, seed). Raises DivergenceError if any
    objective term becomes non-finite. ``freeze_attr_head`` pins the
    attribute head at its initial zeros (skipping its solve), which cuts the
    attribute branch out of the scores; together with c1=0 this is the
    no-attribute ablation used in the sensitivity experiments.
    """
    params = init_params(ds, hyper, seed)
    windows = build_windows(ds, hyper.alpha)
    cache = forward_all(windows, params)
    mats = build_matrices(ds)
    graph = build_knn(ds.target, hyper.k)

    # Heads and the attribute map start at zero; define them from data once
    # before the first sweep. Sweeping filters against all-zero heads sees no
    # label gradient at all, and the attribute-fit pull toward a zero map
    # drives filters into the ReLU dead zone, permanently disabling the
    # attribute branch.
    if hyper.eta >= 1:
        if not freeze_attr_head:
            params.attr_head = solve_attr_head(ds, params, hyper, cache=cache, mats=mats)
        params.shared_head = solve_shared_head(ds, params, hyper, cache=cache, mats=mats)
        for t in range(ds.num_domains):
            params.domain_heads[t] = solve_domain_head(
                ds, params, hyper, t, cache=cache, mats=mats
            )
        params.attr_map = solve_attr_map(ds, params, hyper, cache=cache, mats=mats)

    report = TrainReport()
    start = time.perf_counter()
    prev_total = None
    T = ds.target_index
    for iteration in range(1, hyper.eta + 1):
        params.attr_filters = sweep_filters(
            ds, params, graph, hyper, FAMILY_ATTR, windows=windows, cache=cache, mats=mats
        )
        params.shared_filters = sweep_filters(
            ds, params, graph, hyper, FAMILY_SHARED, windows=windows, cache=cache, mats=mats
        )
        for t in range(T):
            params.domain_filters[t] = sweep_filters(
                ds, params, graph, hyper, FAMILY_DOMAIN, t,
                windows=windows, cache=cache, mats=mats,
            )
        params.domain_filters[T] = sweep_filters(
            ds, params, graph, hyper, FAMILY_DOMAIN, T,
            windows=windows, cache=cache, mats=mats,
        )
        try:
            if not freeze_attr_head:
                params.attr_head = solve_attr_head(
                    ds, params, hyper, cache=cache, mats=mats
                )
            params.shared_head = solve_shared_head(
                ds, params, hyper, cache=cache, mats=mats
            )
            for t in range(ds.num_domains):
                params.domain_heads[t] = solve_domain_head(
                    ds, params, hyper, t, cache=cache, mats=mats
                )
            params.attr_map = solve_attr_map(ds, params, hyper, cache=cache, mats=mats)
        except InputError as exc:
            # non-finite Grams mid-loop can only come from numerical blow-up
            raise DivergenceError(
                f"head solve failed at iteration {iteration}: {exc}"
            ) from exc

        breakdown = objective(ds, params, graph, hyper, cache=cache, mats=mats)
        bad = breakdown.nonfinite_term()
        if bad is not None:
            raise DivergenceError(
                f"objective term '{bad}' became non-finite at iteration {iteration}"
            )
        report.trace.append(breakdown)
        report.iterations = iteration
        if prev_total is not None and abs(breakdown.total - prev_total) <= hyper.eps:
            report.converged = True
            break
        prev_total = breakdown.total
    if report.iterations:
        report.wall_time_per_iter = (time.perf_counter() - start) / report.iterations
    return params, report


def evaluate(test: DomainDataset, params: ModelParams, target_idx: int) -> float:
    """Fraction of test points whose predicted class matches the held-out label."""
    if len(test) == 0:
        raise DataError("cannot evaluate on an empty test set")
    correct = 0
    for point in test.points:
        if point.label is None:
            raise DataError("every test point must carry a held-out label")
        if predict(point, target_idx, params) == point.label:
            correct += 1
    return correct / len(test)
