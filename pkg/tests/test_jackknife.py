import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import opj.jackknife as jk
from opj.core import Estimand, ExperimentData
from opj.estimators import baseline_estimate
from opj.exceptions import ArmSmallerThanB
from opj.jackknife import (
    JackknifeConfig,
    confidence_interval,
    delete_d_replicates,
    imputation_jackknife,
    jackknife_se,
    merge_degenerate,
    opj_run,
    partition_buckets,
    replicate_estimate,
    substream,
    t_multiplier,
)
from opj.stratify import StrataBoundaries

from conftest import linear_data


def brute_se(est, B, D):
    M = len(est)
    mean = sum(est) / M
    return math.sqrt((B - D) / (D * M) * sum((e - mean) ** 2 for e in est))


class TestConfig:
    def test_defaults(self):
        c = JackknifeConfig()
        assert (c.n_buckets, c.n_deleted, c.n_iter, c.n_strata, c.alpha) == (20, 4, 60, 5, 0.05)

    @pytest.mark.parametrize("kw", [dict(n_deleted=20), dict(n_deleted=0), dict(n_iter=1),
                                    dict(alpha=1.0), dict(n_strata=0), dict(kde_method="fft")])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            JackknifeConfig(**kw)


class TestPartition:
    def test_exact_division(self):
        w = np.r_[np.zeros(20), np.ones(20)].astype(int)
        p = partition_buckets(w, 20, substream(0, 0))
        assert np.all(p.sizes(w, 0) == 1) and np.all(p.sizes(w, 1) == 1)

    def test_remainder(self):
        w = np.r_[np.zeros(21), np.ones(20)].astype(int)
        sizes = partition_buckets(w, 20, substream(0, 0)).sizes(w, 0)
        assert sorted(sizes) == [1] * 19 + [2]

    def test_deterministic(self):
        w = np.tile([0, 1], 50)
        a = partition_buckets(w, 20, substream(5, 0)).labels
        b = partition_buckets(w, 20, substream(5, 0)).labels
        np.testing.assert_array_equal(a, b)

    def test_arm_too_small(self):
        with pytest.raises(ArmSmallerThanB):
            partition_buckets(np.r_[np.zeros(30), np.ones(10)].astype(int), 20, substream(0, 0))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 30), st.integers(0, 200), st.integers(0, 200), st.integers(0, 2**32 - 1))
    def test_balanced(self, B, extra0, extra1, seed):
        w = np.r_[np.zeros(B + extra0), np.ones(B + extra1)].astype(int)
        rng = np.random.default_rng(seed)
        w = w[rng.permutation(w.size)]
        p = partition_buckets(w, B, substream(seed, 0))
        for arm in (0, 1):
            s = p.sizes(w, arm)
            assert s.max() - s.min() <= 1 and s.min() >= 1


class TestSe:
    def test_examples(self):
        assert jackknife_se([1.0, 1.1, 0.9], 20, 4) == pytest.approx(0.163299, abs=1e-6)
        assert jackknife_se([2.5] * 7, 20, 4) == 0
        base = np.array([1.0, 1.1, 0.9])
        doubled = 1.0 + 2 * (base - 1.0)
        assert jackknife_se(doubled, 20, 4) == pytest.approx(2 * jackknife_se(base, 20, 4), rel=1e-12)

    def test_brute_force_random_vectors(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            M = int(rng.integers(2, 200))
            B = int(rng.integers(2, 50))
            D = int(rng.integers(1, B))
            est = rng.normal(size=M) * rng.uniform(1e-3, 1e3)
            assert jackknife_se(est, B, D) == pytest.approx(brute_se(list(est), B, D), rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(arrays(float, st.integers(2, 100), elements=st.floats(-1e6, 1e6)),
           st.integers(2, 40).flatmap(lambda b: st.tuples(st.just(b), st.integers(1, b - 1))))
    def test_brute_force_property(self, est, bd):
        B, D = bd
        assert jackknife_se(est, B, D) == pytest.approx(brute_se(list(est), B, D), rel=1e-9, abs=1e-12 * (1 + np.abs(est).max()))


class TestInterval:
    def test_zero_se(self):
        assert confidence_interval(1.3, 0.0, 20, 0.05) == (1.3, 1.3)

    def test_t19(self):
        assert t_multiplier(20, 0.05) == pytest.approx(2.093, abs=5e-4)
        lo, hi = confidence_interval(1.0, 0.1, 20, 0.05)
        assert hi - 1.0 == pytest.approx(0.2093, abs=5e-5) and 1.0 - lo == pytest.approx(hi - 1.0)

    def test_alpha_to_one(self):
        widths = [np.diff(confidence_interval(0.0, 1.0, 20, a))[0] for a in (0.5, 0.9, 0.99, 0.9999)]
        assert all(x > y for x, y in zip(widths, widths[1:])) and widths[-1] < 1e-3


class TestMerge:
    def test_no_merge_needed(self):
        mapping, merges = merge_degenerate([2, 3], [1, 4])
        assert mapping.tolist() == [0, 1] and merges == 0

    def test_edge_stratum(self):
        mapping, merges = merge_degenerate([0, 3, 2], [2, 3, 2])
        assert mapping.tolist() == [0, 0, 1] and merges == 1

    def test_interior_prefers_smaller_neighbour(self):
        mapping, _ = merge_degenerate([5, 0, 1], [5, 2, 1])
        assert mapping.tolist() == [0, 1, 1]

    def test_tie_goes_lower(self):
        mapping, _ = merge_degenerate([1, 0, 1], [1, 3, 1])
        assert mapping.tolist() == [0, 0, 1]

    def test_collapse_to_one(self):
        mapping, merges = merge_degenerate([0, 0, 3], [1, 2, 0])
        assert set(mapping.tolist()) == {0} and merges == 2

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=10))
    def test_result_cells_all_filled(self, counts):
        n0, n1 = map(np.array, zip(*counts))
        if n0.sum() == 0 or n1.sum() == 0:
            return
        mapping, merges = merge_degenerate(n0, n1)
        K = mapping.max() + 1
        assert np.all(np.diff(mapping) >= 0) and set(mapping) == set(range(K))
        assert merges == len(counts) - K
        assert np.all(np.bincount(mapping, n0) > 0) and np.all(np.bincount(mapping, n1) > 0)


class TestReplicateEstimate:
    def test_merged_replicate(self):
        y = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        w = np.array([0, 1, 0, 1, 1, 1], dtype=float)
        psf = np.array([0.0, 0.0, 1.0, 1.0, 2.0, 2.0])
        b = StrataBoundaries.from_interior([0.5, 1.5])
        est, merges, used = replicate_estimate(y, w, psf, b, Estimand.DIFFERENCE)
        # stratum 3 has no controls and joins stratum 2 (ties go lower): strata {1}, {2, 3}
        assert (merges, used) == (1, 2)
        assert est == pytest.approx((2 * (2 - 1) + 4 * (5 - 3)) / 6)


class TestOpjRun:
    def test_constant_outcomes(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(200, 2))
        d = ExperimentData(np.full(200, 3.0), np.tile([0, 1], 100), x)
        r = opj_run(d, "difference", JackknifeConfig(seed=1)).report
        assert (r.point, r.se, r.ci_low, r.ci_high) == (0.0, 0.0, 0.0, 0.0)

    def test_stubbed_replicates(self, monkeypatch):
        values = iter([1.0, 1.1, 0.9])
        monkeypatch.setattr(jk, "replicate_estimate", lambda *a: (next(values), 0, 5))
        r = opj_run(linear_data(n=100), "difference", JackknifeConfig(n_iter=3)).report
        assert r.point == pytest.approx(1.0, abs=1e-15)
        assert r.se == pytest.approx(0.163299, abs=1e-6)

    def test_deleted_sets_and_inclusion(self, lin_data):
        cfg = JackknifeConfig(seed=3, n_iter=40)
        res = opj_run(lin_data, "difference", cfg)
        assert len(res.traces) == 40
        for t in res.traces:
            assert len(t.deleted) == cfg.n_deleted == len(set(t.deleted))
        expected = np.zeros(lin_data.n, int)
        for m in range(1, 41):
            expected[res.retained(m)] += 1
        np.testing.assert_array_equal(res.inclusion_counts, expected)
        assert res.inclusion_counts.min() >= 1

    def test_reproducible(self, lin_data):
        a = opj_run(lin_data, "ratio", JackknifeConfig(seed=11))
        b = opj_run(lin_data, "ratio", JackknifeConfig(seed=11))
        np.testing.assert_array_equal(a.replicates, b.replicates)
        assert a.report == b.report
        c = opj_run(lin_data, "ratio", JackknifeConfig(seed=12))
        assert not np.array_equal(a.replicates, c.replicates)

    def test_k1_replicate_equals_retained_baseline(self, lin_data):
        res = opj_run(lin_data, "difference", JackknifeConfig(n_strata=1, seed=4, n_iter=30))
        for m in range(1, 31):
            idx = res.retained(m)
            sub = ExperimentData(lin_data.y[idx], lin_data.w[idx], lin_data.x[idx])
            assert res.replicates[m - 1] == baseline_estimate(sub, "difference")

    def test_k1_point_approaches_full_baseline(self, lin_data):
        full = baseline_estimate(lin_data, "difference")
        res = opj_run(lin_data, "difference", JackknifeConfig(n_strata=1, seed=5, n_iter=2000))
        # replicates have spread ~ se * sqrt(D / (B - D)); the mean over M shrinks it by sqrt(M)
        tol = 4 * res.report.se * math.sqrt(4 / 16) / math.sqrt(2000)
        assert abs(res.report.point - full) <= tol

    def test_reduces_variance_on_linear_data(self):
        d = linear_data(n=2000, noise=1.0, seed=9)
        opj = opj_run(d, "difference", JackknifeConfig(seed=2)).report
        assert opj.se < jk.baseline_report(d).se
        assert opj.ci_low <= opj.point <= opj.ci_high

    def test_psf_length_checked(self, lin_data):
        with pytest.raises(ValueError):
            opj_run(lin_data, psf=np.zeros(3))

    def test_callable_rule(self, lin_data):
        res = opj_run(lin_data, rule=lambda v, K: StrataBoundaries.from_interior([np.median(v)]))
        assert all(t.strata_used <= 2 for t in res.traces)


def test_delete_d_statistic_sees_disjoint_sets():
    w = np.tile([0, 1], 40)
    cfg = JackknifeConfig(n_iter=5)

    def stat(retained, deleted):
        assert np.intersect1d(retained, deleted).size == 0
        assert retained.size + deleted.size == w.size
        return float(deleted.size), None

    res = delete_d_replicates(w, cfg, stat)
    np.testing.assert_array_equal(res.estimates, 16.0)


def test_imputation_jackknife(lin_data):
    r = imputation_jackknife(lin_data, "difference", JackknifeConfig(seed=1))
    assert r.method.value == "impute" and "K" not in r.config
    assert r.se > 0 and r.ci_low < r.point < r.ci_high
    assert r == imputation_jackknife(lin_data, "difference", JackknifeConfig(seed=1))
