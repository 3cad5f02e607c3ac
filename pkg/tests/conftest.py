"""Shared builders for small deterministic test instances."""

import numpy as np
import pytest

from domattr.data import SynthConfig, synth_generate
from domattr.objective import Hyper, build_knn
from domattr.solver import init_params


TINY_HYPER = Hyper(
    c1=1.0, c2=1.0, c3=1.0, alpha=2,
    m_attr=4, m_shared=4, m_domain=4,
    k=2, ridge=1e-6,
)


def tiny_dataset(seed=0, **overrides):
    """T=3 domains, d=3, 6 points each, 3 classes, 5 attributes."""
    cfg = dict(
        num_domains=3, num_classes=3, points_per_domain=6, dim=3,
        num_attributes=5, min_instances=2, max_instances=4, alpha=2,
        seed=seed,
    )
    cfg.update(overrides)
    return synth_generate(SynthConfig(**cfg))


def randomized_params(ds, hyper, seed):
    """Seeded params with nonzero heads so every objective term is active."""
    rng = np.random.default_rng(seed + 1)
    params = init_params(ds, hyper, seed)
    params.attr_head = rng.normal(0.0, 0.5, params.attr_head.shape)
    params.shared_head = rng.normal(0.0, 0.5, params.shared_head.shape)
    params.domain_heads = [rng.normal(0.0, 0.5, U.shape) for U in params.domain_heads]
    params.attr_map = rng.normal(0.0, 0.5, params.attr_map.shape)
    return params


@pytest.fixture
def tiny_problem():
    """Dataset, randomized params, neighbor graph, and hyper in one bundle."""
    ds = tiny_dataset(seed=3)
    params = randomized_params(ds, TINY_HYPER, seed=3)
    graph = build_knn(ds.target, TINY_HYPER.k)
    return ds, params, graph, TINY_HYPER


# ---------------------------------------------------------------------------
# Independent oracles (explicit loops / explicit inverses, no package paths)
# ---------------------------------------------------------------------------


def naive_branch(W, x, alpha):
    """Loop-only conv+ReLU+max forward for one point; oracle path."""
    d, n = x.shape
    m = W.shape[1]
    out = np.zeros(m)
    for k in range(m):
        best = -np.inf
        for j in range(n - alpha + 1):
            z = np.concatenate([x[:, j + a] for a in range(alpha)])
            pre = float(W[:, k] @ z)
            if pre > best:
                best = pre
        out[k] = max(best, 0.0)
    return out


def naive_features(ds, params):
    """Per-domain feature matrices computed by the loop oracle."""
    feats = []
    for t, dom in enumerate(ds.domains):
        fa = np.column_stack(
            [naive_branch(params.attr_filters, p.instances, params.alpha)
             for p in dom.points])
        f0 = np.column_stack(
            [naive_branch(params.shared_filters, p.instances, params.alpha)
             for p in dom.points])
        ft = np.column_stack(
            [naive_branch(params.domain_filters[t], p.instances, params.alpha)
             for p in dom.points])
        feats.append({"attr": fa, "shared": f0, "domain": ft})
    return feats


def explicit_ridge(F, R, lam):
    """Normal equations with an explicit inverse (oracle path)."""
    gram = F @ F.T + lam * np.eye(F.shape[0])
    return np.linalg.inv(gram) @ F @ R.T


def oracle_head_sequence(ds, params, lam, rounds=1):
    """Replicates rounds of the sequential head solves on frozen features.

    Returns (attr_head, shared_head, domain_heads, attr_map) computed from
    loop-oracle features and explicit inverses; heads start at zero, and
    each solve sees the heads solved before it. With frozen filters, a fit
    of eta iterations performs rounds = eta + 1 of this sequence (one
    warm-start round plus one per iteration).
    """
    feats = naive_features(ds, params)
    ys, attrs = [], []
    for dom in ds.domains:
        cnt = dom.labeled_count
        Y = np.zeros((ds.num_classes, cnt))
        for i in range(cnt):
            Y[dom.points[i].label, i] = 1.0
        ys.append(Y)
        attrs.append(np.stack([p.attributes for p in dom.points]).T.astype(float))

    def pool(kind, residual_fn, per_domain=None):
        fs, rs = [], []
        ts = range(ds.num_domains) if per_domain is None else [per_domain]
        for t in ts:
            cnt = ds.domains[t].labeled_count
            fs.append(feats[t][kind][:, :cnt])
            rs.append(residual_fn(t, cnt))
        return np.hstack(fs), np.hstack(rs)

    u_attr = np.zeros_like(params.attr_head)
    u_shared = np.zeros_like(params.shared_head)
    u_domain = [np.zeros_like(U) for U in params.domain_heads]
    theta = np.zeros_like(params.attr_map)

    for _ in range(rounds):
        F, R = pool("attr", lambda t, cnt: (
            ys[t]
            - u_shared.T @ feats[t]["shared"][:, :cnt]
            - u_domain[t].T @ feats[t]["domain"][:, :cnt]))
        u_attr = explicit_ridge(F, R, lam)

        F, R = pool("shared", lambda t, cnt: (
            ys[t]
            - u_attr.T @ feats[t]["attr"][:, :cnt]
            - u_domain[t].T @ feats[t]["domain"][:, :cnt]))
        u_shared = explicit_ridge(F, R, lam)

        for t in range(ds.num_domains):
            F, R = pool("domain", lambda u, cnt: (
                ys[u]
                - u_shared.T @ feats[u]["shared"][:, :cnt]
                - u_attr.T @ feats[u]["attr"][:, :cnt]), per_domain=t)
            u_domain[t] = explicit_ridge(F, R, lam)

        A = np.hstack([attrs[t] for t in range(ds.num_domains)])
        Fa = np.hstack([feats[t]["attr"] for t in range(ds.num_domains)])
        theta = explicit_ridge(A, Fa, lam)
    return u_attr, u_shared, u_domain, theta
