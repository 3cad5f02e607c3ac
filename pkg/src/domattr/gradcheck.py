"""Finite-difference verification harness for all filter-gradient families.

Draws tiny random problems, rejects any instance that sits too close to a
ReLU kink or a pooling tie (central differences are meaningless there), and
compares the analytic gradient of every filter column against the
finite-difference oracle on the full objective.
"""

from __future__ import annotations

import numpy as np

from .data import SynthConfig, synth_generate
from .errors import DataError
from .gradients import (
    FAMILY_ATTR,
    FAMILY_DOMAIN,
    FAMILY_SHARED,
    fd_filter_grad,
    filter_gradient,
    pool_margins,
)
from .objective import Hyper, build_knn
from .solver import init_params

GRADCHECK_TOL = 1e-4
KINK_MARGIN = 1e-4  # comfortably clears the 1e-6 exclusion zone
FD_STEP = 1e-5
FD_FLOOR = 1e-8  # FD entries below this are noise and are not compared


def random_check_instance(seed: int, hyper: Hyper):
    """Tiny random dataset plus params with every head and the map nonzero."""
    cfg = SynthConfig(
        num_domains=3,
        num_classes=3,
        points_per_domain=6,
        dim=3,
        num_attributes=5,
        min_instances=2,
        max_instances=4,
        alpha=hyper.alpha,
        seed=seed,
    )
    ds = synth_generate(cfg)
    rng = np.random.default_rng(seed + 1)
    params = init_params(ds, hyper, seed)
    params.attr_head = rng.normal(0.0, 0.5, params.attr_head.shape)
    params.shared_head = rng.normal(0.0, 0.5, params.shared_head.shape)
    params.domain_heads = [rng.normal(0.0, 0.5, U.shape) for U in params.domain_heads]
    params.attr_map = rng.normal(0.0, 0.5, params.attr_map.shape)
    return ds, params


def run_gradcheck(seed: int, trials: int, hyper: Hyper) -> dict[str, float]:
    """Max relative FD-vs-analytic error per family over kink-free trials."""
    worst = {"attr": 0.0, "shared": 0.0, "aux": 0.0, "target": 0.0}
    done = 0
    attempt = 0
    while done < trials:
        if attempt > 50 * max(trials, 1):
            raise DataError("gradcheck could not find enough kink-free instances")
        ds, params = random_check_instance(seed + 17 * attempt, hyper)
        attempt += 1
        min_top, min_gap = pool_margins(ds, params)
        if min_top <= KINK_MARGIN or min_gap <= KINK_MARGIN:
            continue
        done += 1
        graph = build_knn(ds.target, min(hyper.k, len(ds.target) - 1))
        jobs = [
            (FAMILY_ATTR, None, "attr", params.attr_filters),
            (FAMILY_SHARED, None, "shared", params.shared_filters),
            (FAMILY_DOMAIN, 0, "aux", params.domain_filters[0]),
            (FAMILY_DOMAIN, ds.target_index, "target",
             params.domain_filters[ds.target_index]),
        ]
        for family, t, tag, filters in jobs:
            for k in range(filters.shape[1]):
                analytic = filter_gradient(ds, params, graph, hyper, family, t, k)
                fd = fd_filter_grad(ds, params, graph, hyper, family, t, k, step=FD_STEP)
                keep = np.abs(fd) > FD_FLOOR
                if not np.any(keep):
                    continue
                rel = np.abs(analytic[keep] - fd[keep]) / np.abs(fd[keep])
                worst[tag] = max(worst[tag], float(rel.max()))
    return worst
