"""Forward computation of the convolutional representation branches.

Every branch is a single convolution over a sliding window of ``alpha``
consecutive instances, a ReLU, and a per-filter max over windows. A point
with n instances yields w = n - alpha + 1 windows (valid windows only, no
padding), so n >= alpha is required.

The per-point entry points (``slide_window``, ``conv_pool``, ``full_rep``,
``score``, ``predict``) are the reference semantics. The batch structures
(``DomainWindows``, ``BranchForward``) hold the same quantities for all
points of a domain at once and exist so the solver can refresh a single
filter row cheaply during coordinate descent.

Pooling convention: the stored argmax is the first window index attaining
the maximal pre-activation; ReLU is applied after the max (equivalent to
max-of-ReLU because ReLU is monotone). Ties always break toward the
smaller window index. When every pre-activation of a filter is <= 0 the
pooled output is 0 and the gradient through the ReLU vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .data import DataPoint, MultiDomainDataset

# ---------------------------------------------------------------------------
# Per-point forward
# ---------------------------------------------------------------------------


def slide_window(x, alpha: int) -> np.ndarray:
    """Stack alpha consecutive instance columns into window columns.

    x is a (d, n) instance matrix; the result Z is (alpha*d, n - alpha + 1)
    where column j is the vertical concatenation of instances j..j+alpha-1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"instance matrix must be 2-D, got shape {x.shape}")
    if alpha < 1:
        raise ShapeError(f"window length must be >= 1, got {alpha}")
    d, n = x.shape
    if n < alpha:
        raise ShapeError(f"need at least alpha={alpha} instances, got {n}")
    w = n - alpha + 1
    Z = np.empty((alpha * d, w), dtype=np.float64)
    for a in range(alpha):
        Z[a * d:(a + 1) * d, :] = x[:, a:a + w]
    return Z


@dataclass
class PoolTrace:
    """Winning window per filter: index and pre-activation value there."""

    argmax: np.ndarray  # (m,) int, first window attaining the max pre-activation
    preact: np.ndarray  # (m,) float, pre-activation at argmax


def conv_pool(W, Z) -> tuple[np.ndarray, PoolTrace]:
    """Per-filter max over windows of ReLU(w_k^T z_j).

    W is (alpha*d, m) with filter columns; Z is a windowed input. Returns
    the pooled m-vector (entries >= 0) and the pooling trace.
    """
    W = np.asarray(W, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if W.ndim != 2 or Z.ndim != 2 or W.shape[0] != Z.shape[0]:
        raise ShapeError(f"filter/window row mismatch: {W.shape} vs {Z.shape}")
    pre = W.T @ Z  # (m, w)
    arg = pre.argmax(axis=1)  # first max -> smallest index on ties
    val = pre[np.arange(pre.shape[0]), arg]
    out = np.maximum(val, 0.0)
    return out, PoolTrace(argmax=arg, preact=val)


def full_rep(point: DataPoint, domain_idx: int, params) -> np.ndarray:
    """Concatenated representation [shared; domain; attribute] of one point."""
    Z = slide_window(point.instances, params.alpha)
    f_shared, _ = conv_pool(params.shared_filters, Z)
    f_dom, _ = conv_pool(params.domain_filters[domain_idx], Z)
    f_attr, _ = conv_pool(params.attr_filters, Z)
    return np.concatenate([f_shared, f_dom, f_attr])


def score(point: DataPoint, domain_idx: int, params) -> np.ndarray:
    """Classification scores: stacked heads applied to the representation."""
    Z = slide_window(point.instances, params.alpha)
    f_shared, _ = conv_pool(params.shared_filters, Z)
    f_dom, _ = conv_pool(params.domain_filters[domain_idx], Z)
    f_attr, _ = conv_pool(params.attr_filters, Z)
    return (
        params.shared_head.T @ f_shared
        + params.domain_heads[domain_idx].T @ f_dom
        + params.attr_head.T @ f_attr
    )


def predict(point: DataPoint, domain_idx: int, params) -> int:
    """Smallest class index attaining the maximal score."""
    return int(np.argmax(score(point, domain_idx, params)))


# ---------------------------------------------------------------------------
# Batched forward over a domain
# ---------------------------------------------------------------------------


@dataclass
class DomainWindows:
    """Zero-padded windowed inputs for all points of one domain.

    zpad[i, :, j] is window j of point i for j < widths[i]; padded columns
    are masked out before any argmax, so the padding value never wins.
    """

    zpad: np.ndarray  # (n_points, alpha*d, w_max)
    mask: np.ndarray  # (n_points, w_max) bool, True where the window is real
    widths: np.ndarray  # (n_points,) int


def build_windows(ds: MultiDomainDataset, alpha: int) -> list[DomainWindows]:
    """Window every point of every domain once; params-independent."""
    out = []
    for dom in ds.domains:
        zs = [slide_window(p.instances, alpha) for p in dom.points]
        widths = np.array([z.shape[1] for z in zs], dtype=np.int64)
        w_max = int(widths.max())
        rows = zs[0].shape[0]
        zpad = np.zeros((len(zs), rows, w_max), dtype=np.float64)
        mask = np.zeros((len(zs), w_max), dtype=bool)
        for i, z in enumerate(zs):
            zpad[i, :, : z.shape[1]] = z
            mask[i, : z.shape[1]] = True
        out.append(DomainWindows(zpad=zpad, mask=mask, widths=widths))
    return out


@dataclass
class BranchForward:
    """Branch outputs for all points of one domain, one row per filter."""

    out: np.ndarray  # (m, n) pooled ReLU outputs
    argmax: np.ndarray  # (m, n) winning window indices
    preact: np.ndarray  # (m, n) pre-activation at the winning window


def branch_forward(W, win: DomainWindows) -> BranchForward:
    """Batch equivalent of conv_pool over every point of a domain."""
    pre = np.einsum("dm,ndw->mnw", np.asarray(W, dtype=np.float64), win.zpad)
    pre = np.where(win.mask[None, :, :], pre, -np.inf)
    arg = pre.argmax(axis=2)
    val = np.take_along_axis(pre, arg[:, :, None], axis=2)[:, :, 0]
    return BranchForward(out=np.maximum(val, 0.0), argmax=arg, preact=val)


def refresh_filter(bf: BranchForward, w_col, win: DomainWindows, k: int) -> None:
    """Recompute row k of a BranchForward after filter column k changed."""
    pre = np.einsum("d,ndw->nw", np.asarray(w_col, dtype=np.float64), win.zpad)
    pre = np.where(win.mask, pre, -np.inf)
    arg = pre.argmax(axis=1)
    val = pre[np.arange(pre.shape[0]), arg]
    bf.argmax[k] = arg
    bf.preact[k] = val
    bf.out[k] = np.maximum(val, 0.0)


def winning_windows(win: DomainWindows, arg_row) -> np.ndarray:
    """Gather z_{j*} per point for one filter: returns (n_points, alpha*d)."""
    idx = np.asarray(arg_row, dtype=np.int64)[:, None, None]
    return np.take_along_axis(win.zpad, idx, axis=2)[:, :, 0]


@dataclass
class ForwardCache:
    """Branch outputs for a whole dataset under the current filters.

    ``domain[t]`` holds branch t evaluated on domain t's own points; that is
    the only place a domain-specific branch is ever needed.
    """

    attr: list[BranchForward]
    shared: list[BranchForward]
    domain: list[BranchForward]


def forward_all(windows: list[DomainWindows], params) -> ForwardCache:
    return ForwardCache(
        attr=[branch_forward(params.attr_filters, win) for win in windows],
        shared=[branch_forward(params.shared_filters, win) for win in windows],
        domain=[
            branch_forward(params.domain_filters[t], win)
            for t, win in enumerate(windows)
        ],
    )
