"""Analytic per-filter gradients of the training objective.

Each branch output slot k depends on its filter column w_k only through the
winning window z_{j*}: d out_k / d w_k = 1[preact_{j*} > 0] * z_{j*}, with
the subgradient at the ReLU kink taken as 0 and the pooling argmax fixed by
the forward pass. Residuals are always h(X) - y (scores minus one-hot
label); the neighbor term differentiates both endpoints of every ordered
pair.

``fd_filter_grad`` is the verification oracle: central differences of the
full objective, re-running the complete forward pass (pooling traces
included) for every perturbed coordinate. It is only trustworthy away from
ReLU kinks and pooling ties; ``pool_margins`` measures the distance to the
nearest kink so callers can exclude unlucky instances.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .features import build_windows, forward_all, winning_windows
from .objective import (
    Hyper,
    NeighborGraph,
    attr_scope_count,
    build_matrices,
    domain_scores,
    objective,
)

FAMILY_ATTR = "attr"
FAMILY_SHARED = "shared"
FAMILY_DOMAIN = "domain"
FAMILIES = (FAMILY_ATTR, FAMILY_SHARED, FAMILY_DOMAIN)


def _prep(ds, params, cache, windows, mats):
    if windows is None:
        windows = build_windows(ds, params.alpha)
    if cache is None:
        cache = forward_all(windows, params)
    if mats is None:
        mats = build_matrices(ds)
    return cache, windows, mats


def _label_residuals(ds, params, cache, mats) -> list[np.ndarray]:
    """Per-domain score residuals h - y over the labeled prefix."""
    out = []
    for t, dom in enumerate(ds.domains):
        cnt = dom.labeled_count
        if cnt == 0:
            out.append(np.zeros((ds.num_classes, 0)))
        else:
            out.append(domain_scores(cache, params, t, cnt) - mats.labels[t])
    return out


def _neighbor_pull(bf, win, graph, k):
    """4 * Z*^T [(deg*d - M d) * ind] for slot k of a target branch.

    This is the derivative of sum_{i,i'} M_{ii'} (d_i - d_{i'})^2 collapsing
    both endpoint derivatives of each ordered pair through the symmetry of M.
    """
    d = bf.out[k]
    ind = bf.preact[k] > 0
    zs = winning_windows(win, bf.argmax[k])
    vec = (graph.degrees * d - graph.adjacency @ d) * ind
    return 4.0 * (zs.T @ vec)


def grad_attr_filter(
    ds, params, graph: NeighborGraph, hyper: Hyper, k: int,
    *, cache=None, windows=None, mats=None,
) -> np.ndarray:
    """Gradient of the total objective w.r.t. column k of the attribute filters."""
    if not 0 <= k < params.attr_filters.shape[1]:
        raise ShapeError(f"attribute filter index {k} out of range")
    cache, windows, mats = _prep(ds, params, cache, windows, mats)
    resids = _label_residuals(ds, params, cache, mats)
    g = np.zeros(params.attr_filters.shape[0])
    for t, dom in enumerate(ds.domains):
        bf = cache.attr[t]
        ind = bf.preact[k] > 0
        zs = winning_windows(windows[t], bf.argmax[k])
        cnt = dom.labeled_count
        if cnt:
            c = params.attr_head[k, :] @ resids[t]
            g += 2.0 * (zs[:cnt].T @ (c * ind[:cnt]))
        scope_cnt = attr_scope_count(ds, t, hyper.attr_scope)
        if scope_cnt and hyper.c1:
            fit = bf.out[:, :scope_cnt] - params.attr_map.T @ mats.attrs[t][:, :scope_cnt]
            g += 2.0 * hyper.c1 * (zs[:scope_cnt].T @ (fit[k] * ind[:scope_cnt]))
    if hyper.c3:
        T = ds.target_index
        g += hyper.c3 * _neighbor_pull(cache.attr[T], windows[T], graph, k)
    return g


def grad_shared_filter(
    ds, params, graph: NeighborGraph, hyper: Hyper, k: int,
    *, cache=None, windows=None, mats=None,
) -> np.ndarray:
    """Gradient of the total objective w.r.t. column k of the shared filters."""
    if not 0 <= k < params.shared_filters.shape[1]:
        raise ShapeError(f"shared filter index {k} out of range")
    cache, windows, mats = _prep(ds, params, cache, windows, mats)
    resids = _label_residuals(ds, params, cache, mats)
    g = np.zeros(params.shared_filters.shape[0])
    mean_pull = []
    means = []
    for t, dom in enumerate(ds.domains):
        bf = cache.shared[t]
        ind = bf.preact[k] > 0
        zs = winning_windows(windows[t], bf.argmax[k])
        cnt = dom.labeled_count
        if cnt:
            c = params.shared_head[k, :] @ resids[t]
            g += 2.0 * (zs[:cnt].T @ (c * ind[:cnt]))
        n_t = len(dom)
        means.append(bf.out[k].mean())
        mean_pull.append((zs.T @ ind.astype(np.float64)) / n_t)
    if hyper.c2:
        for t in range(ds.num_domains):
            for u in range(t + 1, ds.num_domains):
                gap = means[t] - means[u]
                g += 2.0 * hyper.c2 * gap * (mean_pull[t] - mean_pull[u])
    if hyper.c3:
        T = ds.target_index
        g += hyper.c3 * _neighbor_pull(cache.shared[T], windows[T], graph, k)
    return g


def grad_aux_filter(
    ds, params, hyper: Hyper, t: int, k: int,
    *, cache=None, windows=None, mats=None,
) -> np.ndarray:
    """Gradient w.r.t. column k of an auxiliary domain's filters (label term only)."""
    if not 0 <= t < ds.target_index:
        raise ShapeError(f"auxiliary domain index {t} out of range")
    if not 0 <= k < params.domain_filters[t].shape[1]:
        raise ShapeError(f"domain filter index {k} out of range")
    cache, windows, mats = _prep(ds, params, cache, windows, mats)
    return _domain_label_grad(ds, params, cache, windows, mats, t, k)


def grad_target_filter(
    ds, params, graph: NeighborGraph, hyper: Hyper, k: int,
    *, cache=None, windows=None, mats=None,
) -> np.ndarray:
    """Gradient w.r.t. column k of the target domain's filters."""
    T = ds.target_index
    if not 0 <= k < params.domain_filters[T].shape[1]:
        raise ShapeError(f"domain filter index {k} out of range")
    cache, windows, mats = _prep(ds, params, cache, windows, mats)
    g = _domain_label_grad(ds, params, cache, windows, mats, T, k)
    if hyper.c3:
        g += hyper.c3 * _neighbor_pull(cache.domain[T], windows[T], graph, k)
    return g


def _domain_label_grad(ds, params, cache, windows, mats, t, k):
    dom = ds.domains[t]
    cnt = dom.labeled_count
    g = np.zeros(params.domain_filters[t].shape[0])
    if cnt == 0:
        return g
    resid = domain_scores(cache, params, t, cnt) - mats.labels[t]
    bf = cache.domain[t]
    ind = bf.preact[k, :cnt] > 0
    zs = winning_windows(windows[t], bf.argmax[k])[:cnt]
    c = params.domain_heads[t][k, :] @ resid
    return g + 2.0 * (zs.T @ (c * ind))


def filter_gradient(
    ds, params, graph, hyper, family: str, t, k,
    *, cache=None, windows=None, mats=None,
) -> np.ndarray:
    """Dispatch to the right family gradient; t is used only for 'domain'."""
    if family == FAMILY_ATTR:
        return grad_attr_filter(ds, params, graph, hyper, k,
                                cache=cache, windows=windows, mats=mats)
    if family == FAMILY_SHARED:
        return grad_shared_filter(ds, params, graph, hyper, k,
                                  cache=cache, windows=windows, mats=mats)
    if family == FAMILY_DOMAIN:
        if t == ds.target_index:
            return grad_target_filter(ds, params, graph, hyper, k,
                                      cache=cache, windows=windows, mats=mats)
        return grad_aux_filter(ds, params, hyper, t, k,
                               cache=cache, windows=windows, mats=mats)
    raise ConfigError(f"unknown filter family {family!r}")


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def fd_filter_grad(
    ds, params, graph: NeighborGraph, hyper: Hyper, family: str, t, k: int,
    step: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of the full objective for one filter column.

    Perturbs one coordinate at a time and re-runs the complete forward pass,
    pooling traces included. Meaningless at ReLU kinks or pooling ties; use
    pool_margins to check the instance first.
    """
    if step <= 0:
        raise ConfigError(f"fd step must be positive, got {step}")
    work = params.clone()
    if family == FAMILY_ATTR:
        W = work.attr_filters
    elif family == FAMILY_SHARED:
        W = work.shared_filters
    elif family == FAMILY_DOMAIN:
        W = work.domain_filters[t]
    else:
        raise ConfigError(f"unknown filter family {family!r}")
    windows = build_windows(ds, params.alpha)
    mats = build_matrices(ds)
    g = np.zeros(W.shape[0])
    for j in range(W.shape[0]):
        orig = W[j, k]
        W[j, k] = orig + step
        o_plus = objective(ds, work, graph, hyper, windows=windows, mats=mats).total
        W[j, k] = orig - step
        o_minus = objective(ds, work, graph, hyper, windows=windows, mats=mats).total
        W[j, k] = orig
        g[j] = (o_plus - o_minus) / (2.0 * step)
    return g


def pool_margins(ds, params) -> tuple[float, float]:
    """Distance of the forward pass to the nearest ReLU kink or pooling tie.

    Returns (min |top pre-activation|, min gap between the top two
    pre-activations) over every filter of every branch on every point. The
    gap is inf when every point has a single window.
    """
    windows = build_windows(ds, params.alpha)
    min_top = np.inf
    min_gap = np.inf
    for t, win in enumerate(windows):
        mats_w = [params.shared_filters, params.domain_filters[t], params.attr_filters]
        for W in mats_w:
            pre = np.einsum("dm,ndw->mnw", W, win.zpad)
            pre = np.where(win.mask[None, :, :], pre, -np.inf)
            top = pre.max(axis=2)
            min_top = min(min_top, float(np.min(np.abs(top))))
            if pre.shape[2] >= 2:
                part = np.partition(pre, -2, axis=2)
                second = part[:, :, -2]
                finite = np.isfinite(second)
                if np.any(finite):
                    gaps = top[finite] - second[finite]
                    min_gap = min(min_gap, float(gaps.min()))
    return min_top, min_gap
