"""Closed-form solves, coordinate sweeps, the outer loop, and evaluation."""

import warnings

import numpy as np
import numpy.testing as npt
import pytest

from domattr.data import DataPoint, DomainDataset, MultiDomainDataset, one_hot
from domattr.errors import ConfigError, DataError, DivergenceError
from domattr.features import build_windows, forward_all
from domattr.gradients import FAMILY_ATTR, FAMILY_DOMAIN, FAMILY_SHARED
from domattr.objective import Hyper, build_knn, build_matrices, label_loss, objective
from domattr.serialize import load_params, save_params
from domattr.solver import (
    ModelParams,
    attr_head_system,
    attr_map_system,
    domain_head_system,
    evaluate,
    fit,
    init_params,
    shared_head_system,
    solve_attr_head,
    solve_attr_map,
    solve_domain_head,
    solve_shared_head,
    sweep_filters,
)

from conftest import (
    TINY_HYPER,
    explicit_ridge,
    oracle_head_sequence,
    randomized_params,
    tiny_dataset,
)
from test_features import zero_params


def small_hyper(**overrides):
    base = dict(alpha=2, m_attr=4, m_shared=4, m_domain=4, k=2)
    base.update(overrides)
    return Hyper(**base)


class TestClosedFormSolves:
    def setup_method(self):
        self.ds = tiny_dataset(seed=31)
        self.params = randomized_params(self.ds, TINY_HYPER, seed=31)

    @pytest.mark.parametrize("which", ["attr", "shared", "domain0", "domainT", "theta"])
    def test_matches_explicit_normal_equations(self, which):
        hyper = small_hyper(ridge=1e-6)
        ds, params = self.ds, self.params
        if which == "attr":
            F, R = attr_head_system(ds, params)
            expected = explicit_ridge(F, R, hyper.ridge)
            got = solve_attr_head(ds, params, hyper)
        elif which == "shared":
            F, R = shared_head_system(ds, params)
            expected = explicit_ridge(F, R, hyper.ridge)
            got = solve_shared_head(ds, params, hyper)
        elif which == "domain0":
            F, R = domain_head_system(ds, params, 0)
            expected = explicit_ridge(F, R, hyper.ridge)
            got = solve_domain_head(ds, params, hyper, 0)
        elif which == "domainT":
            T = ds.target_index
            F, R = domain_head_system(ds, params, T)
            expected = explicit_ridge(F, R, hyper.ridge)
            got = solve_domain_head(ds, params, hyper, T)
        else:
            A, Fa = attr_map_system(ds, params, hyper.attr_scope)
            expected = explicit_ridge(A, Fa, hyper.ridge)
            got = solve_attr_map(ds, params, hyper)
            # A A^T is rank-deficient for binary class codes, so the two
            # algebraically equal routes agree only up to the conditioning
            npt.assert_allclose(got, expected, rtol=1e-6, atol=1e-10)
            return
        npt.assert_allclose(got, expected, rtol=1e-8, atol=1e-12)

    def test_solve_never_increases_own_subproblem(self):
        hyper = small_hyper(ridge=1e-6)
        ds, params = self.ds, self.params
        F, R = attr_head_system(ds, params)

        def sub(U):
            resid = R - U.T @ F
            return float(np.sum(resid * resid)) + hyper.ridge * float(np.sum(U * U))

        before = sub(params.attr_head)
        after = sub(solve_attr_head(ds, params, hyper))
        assert after <= before + 1e-12

    def test_resolve_is_fixed_point(self):
        hyper = small_hyper(ridge=1e-6)
        ds, params = self.ds, self.params
        params.attr_head = solve_attr_head(ds, params, hyper)
        again = solve_attr_head(ds, params, hyper)
        npt.assert_allclose(again, params.attr_head, rtol=1e-10, atol=1e-12)

    def test_first_order_optimality(self):
        hyper = small_hyper(ridge=1e-6)
        ds, params = self.ds, self.params
        F, R = attr_head_system(ds, params)
        solved = solve_attr_head(ds, params, hyper)

        def sub(U):
            resid = R - U.T @ F
            return float(np.sum(resid * resid)) + hyper.ridge * float(np.sum(U * U))

        base = sub(solved)
        rng = np.random.default_rng(0)
        for _ in range(20):
            delta = rng.normal(size=solved.shape)
            delta *= 1e-3 / np.linalg.norm(delta)
            assert sub(solved + delta) >= base - 1e-10

    def test_theta_identity_attributes(self):
        # four points whose attribute vectors are the standard basis: A = I
        points = []
        rng = np.random.default_rng(5)
        for i in range(4):
            attrs = np.zeros(4, dtype=int)
            attrs[i] = 1
            points.append(DataPoint(rng.normal(size=(2, 3)), attrs, label=i % 2))
        doms = (
            DomainDataset(points=tuple(points[:2]), labeled_count=2),
            DomainDataset(points=tuple(points[2:]), labeled_count=2),
        )
        ds = MultiDomainDataset(domains=doms, num_classes=2)
        hyper = small_hyper(ridge=0.0, k=1)
        params = randomized_params(ds, hyper, seed=5)
        A, Fa = attr_map_system(ds, params, "all")
        npt.assert_array_equal(A, np.eye(4))
        theta = solve_attr_map(ds, params, hyper)
        npt.assert_allclose(theta, Fa.T, rtol=1e-10)

    def test_theta_rank_deficient_needs_ridge(self):
        # identical attribute vectors -> A A^T is rank one
        ds = tiny_dataset(seed=32, num_classes=1, num_attributes=3)
        hyper = small_hyper(ridge=1e-6)
        params = randomized_params(ds, hyper, seed=32)
        theta = solve_attr_map(ds, params, hyper)
        assert np.all(np.isfinite(theta))

    def test_unlabeled_target_head_solve_rejected(self):
        aux = DomainDataset(
            points=(DataPoint(np.ones((1, 2)), np.array([1]), label=0),),
            labeled_count=1,
        )
        target = DomainDataset(
            points=(DataPoint(np.ones((1, 2)), np.array([1]), label=None),),
            labeled_count=0,
        )
        ds = MultiDomainDataset(domains=(aux, target), num_classes=2)
        hyper = Hyper(alpha=1, m_attr=2, m_shared=2, m_domain=2, k=1)
        params = randomized_params(ds, hyper, seed=33)
        with pytest.raises(DataError):
            domain_head_system(ds, params, ds.target_index)


class TestSweep:
    def test_tau_zero_is_identity(self):
        ds = tiny_dataset(seed=41)
        params = randomized_params(ds, TINY_HYPER, seed=41)
        graph = build_knn(ds.target, 2)
        hyper = small_hyper(tau=0.0)
        W = sweep_filters(ds, params, graph, hyper, FAMILY_ATTR)
        npt.assert_array_equal(W, params.attr_filters)

    def test_zero_gradient_fixed_point(self):
        # all-negative preactivations: gradient zero everywhere, sweep is a no-op
        points = tuple(
            DataPoint(-np.ones((2, 3)) - i, np.array([1, 0]), label=i % 2)
            for i in range(3)
        )
        doms = tuple(DomainDataset(points=points, labeled_count=3) for _ in range(2))
        ds = MultiDomainDataset(domains=doms, num_classes=2)
        hyper = Hyper(alpha=2, m_attr=2, m_shared=2, m_domain=2, k=1)
        params = randomized_params(ds, hyper, seed=1)
        params.attr_filters = np.abs(params.attr_filters)
        graph = build_knn(ds.target, 1)
        W = sweep_filters(ds, params, graph, hyper, FAMILY_ATTR)
        npt.assert_array_equal(W, params.attr_filters)

    @pytest.mark.parametrize("family,t", [
        (FAMILY_ATTR, None), (FAMILY_SHARED, None), (FAMILY_DOMAIN, 0),
        (FAMILY_DOMAIN, 2),
    ])
    def test_sweep_decreases_subobjective(self, family, t):
        from domattr.solver import _sub_objective

        ds = tiny_dataset(seed=42)
        hyper = small_hyper(tau=1e-2, backtrack=True)
        params = randomized_params(ds, hyper, seed=42)
        graph = build_knn(ds.target, 2)
        windows = build_windows(ds, hyper.alpha)
        mats = build_matrices(ds)
        cache = forward_all(windows, params)
        before = _sub_objective(ds, params, graph, hyper, family, t, cache, mats)
        W = sweep_filters(ds, params, graph, hyper, family, t,
                          windows=windows, cache=cache, mats=mats)
        after = _sub_objective(ds, params, graph, hyper, family, t, cache, mats)
        assert after <= before
        assert not np.array_equal(W, params.attr_filters if family == FAMILY_ATTR
                                  else params.shared_filters)

    def test_sweep_keeps_cache_in_sync(self):
        ds = tiny_dataset(seed=43)
        hyper = small_hyper()
        params = randomized_params(ds, hyper, seed=43)
        graph = build_knn(ds.target, 2)
        windows = build_windows(ds, hyper.alpha)
        mats = build_matrices(ds)
        cache = forward_all(windows, params)
        new_w = sweep_filters(ds, params, graph, hyper, FAMILY_SHARED,
                              windows=windows, cache=cache, mats=mats)
        params.shared_filters = new_w
        fresh = forward_all(windows, params)
        for t in range(ds.num_domains):
            npt.assert_allclose(cache.shared[t].out, fresh.shared[t].out, rtol=1e-12)

    def test_domain_family_requires_index(self):
        ds = tiny_dataset(seed=44)
        params = randomized_params(ds, TINY_HYPER, seed=44)
        graph = build_knn(ds.target, 2)
        with pytest.raises(ConfigError):
            sweep_filters(ds, params, graph, TINY_HYPER, FAMILY_DOMAIN)

    def test_freeze_trace_still_decreases(self):
        ds = tiny_dataset(seed=45)
        hyper = small_hyper(freeze_trace=True)
        params = randomized_params(ds, hyper, seed=45)
        graph = build_knn(ds.target, 2)
        windows = build_windows(ds, hyper.alpha)
        mats = build_matrices(ds)
        cache = forward_all(windows, params)
        from domattr.solver import _sub_objective

        before = _sub_objective(ds, params, graph, hyper, FAMILY_ATTR, None, cache, mats)
        sweep_filters(ds, params, graph, hyper, FAMILY_ATTR,
                      windows=windows, cache=cache, mats=mats)
        after = _sub_objective(ds, params, graph, hyper, FAMILY_ATTR, None, cache, mats)
        assert after <= before


class TestFit:
    def test_eta_zero_returns_initial_params(self):
        ds = tiny_dataset(seed=51)
        hyper = small_hyper(eta=0)
        params, report = fit(ds, hyper, seed=51)
        npt.assert_array_equal(params.attr_filters,
                               init_params(ds, hyper, 51).attr_filters)
        npt.assert_array_equal(params.attr_head, 0.0)
        npt.assert_array_equal(params.attr_map, 0.0)
        assert report.iterations == 0
        assert report.trace == []
        assert not report.converged

    def test_deterministic(self):
        ds = tiny_dataset(seed=52)
        hyper = small_hyper(eta=4)
        _, r1 = fit(ds, hyper, seed=7)
        _, r2 = fit(ds, hyper, seed=7)
        assert [b.as_dict() for b in r1.trace] == [b.as_dict() for b in r2.trace]

    def test_trace_non_increasing_with_backtracking(self):
        ds = tiny_dataset(seed=53, points_per_domain=8)
        hyper = small_hyper(eta=25, backtrack=True)
        _, report = fit(ds, hyper, seed=53)
        totals = [b.total for b in report.trace]
        assert len(totals) >= 2
        diffs = np.diff(totals)
        assert np.all(diffs <= 1e-9), f"max increase {diffs.max()}"

    def test_stopping_rule(self):
        ds = tiny_dataset(seed=54)
        hyper = small_hyper(eta=50, eps=1e9)
        _, report = fit(ds, hyper, seed=54)
        # a huge threshold stops the loop right at the second iteration
        assert report.iterations == 2
        assert report.converged

    def test_trace_length_matches_iterations(self):
        ds = tiny_dataset(seed=55)
        hyper = small_hyper(eta=3, eps=0.0)
        _, report = fit(ds, hyper, seed=55)
        assert report.iterations == 3
        assert len(report.trace) == 3

    def test_divergence_guard(self):
        ds = tiny_dataset(seed=56)
        hyper = small_hyper(tau=1e9, backtrack=False, eta=50)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            with pytest.raises(DivergenceError):
                fit(ds, hyper, seed=56)

    def test_frozen_filter_heads_match_ridge_oracle(self):
        # c1=c2=c3=0 and tau=0: one iteration is plain sequential ridge
        # regression on the fixed random features (warm start + one round)
        ds = tiny_dataset(seed=57)
        hyper = small_hyper(c1=0.0, c2=0.0, c3=0.0, tau=0.0, eta=1, ridge=1e-6)
        params, _ = fit(ds, hyper, seed=57)
        expect_attr, expect_shared, expect_domain, expect_theta = oracle_head_sequence(
            ds, init_params(ds, hyper, 57), hyper.ridge, rounds=2
        )
        npt.assert_allclose(params.attr_head, expect_attr, rtol=1e-8, atol=1e-12)
        npt.assert_allclose(params.shared_head, expect_shared, rtol=1e-8, atol=1e-12)
        for t in range(ds.num_domains):
            npt.assert_allclose(params.domain_heads[t], expect_domain[t],
                                rtol=1e-8, atol=1e-12)
        # the attribute-map Gram is rank-deficient (one column per class),
        # so the two solve routes only agree up to its conditioning
        npt.assert_allclose(params.attr_map, expect_theta, rtol=1e-6, atol=1e-10)

    def test_k_must_fit_target(self):
        ds = tiny_dataset(seed=58)
        hyper = small_hyper(k=10)  # target has only 6 points
        with pytest.raises(ConfigError):
            fit(ds, hyper, seed=58)


class TestEvaluate:
    def make_test_domain(self, labels):
        points = tuple(
            DataPoint(np.full((1, 2), float(i + 1)), np.array([1]), label=lab)
            for i, lab in enumerate(labels)
        )
        return DomainDataset(points=points, labeled_count=len(points))

    def test_all_correct(self):
        # zero params predict class 0 everywhere
        params = zero_params(alpha=1, d=1, num_domains=2, m=1)
        test = self.make_test_domain([0, 0, 0])
        assert evaluate(test, params, 1) == 1.0

    def test_half_correct(self):
        params = zero_params(alpha=1, d=1, num_domains=2, m=1)
        test = self.make_test_domain([0, 1])
        assert evaluate(test, params, 1) == 0.5

    def test_unlabeled_point_rejected(self):
        params = zero_params(alpha=1, d=1, num_domains=2, m=1)
        target = DomainDataset(
            points=(DataPoint(np.ones((1, 1)), np.array([1]), label=0),
                    DataPoint(np.ones((1, 1)), np.array([1]), label=None)),
            labeled_count=1,
        )
        with pytest.raises(DataError):
            evaluate(target, params, 1)

    def test_empty_rejected(self):
        class Empty:
            points = ()

            def __len__(self):
                return 0

        params = zero_params(alpha=1, d=1, num_domains=2, m=1)
        with pytest.raises(DataError):
            evaluate(Empty(), params, 1)


class TestSerialization:
    def test_params_round_trip(self, tmp_path):
        ds = tiny_dataset(seed=61)
        params = randomized_params(ds, TINY_HYPER, seed=61)
        path = tmp_path / "params.json"
        save_params(params, path)
        loaded = load_params(path)
        npt.assert_array_equal(loaded.attr_filters, params.attr_filters)
        npt.assert_array_equal(loaded.attr_map, params.attr_map)
        for a, b in zip(loaded.domain_heads, params.domain_heads):
            npt.assert_array_equal(a, b)
        assert loaded.alpha == params.alpha

    def test_corrupt_params_file(self, tmp_path):
        path = tmp_path / "params.json"
        path.write_text("{not json")
        with pytest.raises(DataError):
            load_params(path)
