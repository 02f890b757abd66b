import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from symdisc.data import SynthConfig, gumbel_mixture
from symdisc.errors import InsufficientDataError, InvalidArgumentError
from symdisc.ranking import rank, rank_data
from symdisc.rng import make_rng
from symdisc.selection import (
    Decision,
    KernelSpec,
    SelectionResult,
    bootstrap_unfixed_test,
    clt_model_densities,
    clt_threshold,
    mmd2,
    mmd_batched,
    one_standard_error,
    select_full_dataset,
    select_kfold,
    select_known_k,
    select_threshold,
)
from symdisc.spectral import fit_spectral


def naive_mmd(xa, xb, h, omit=False, biased=False):
    def k(a, b):
        return math.exp(-sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / (2 * h))

    na, nb = len(xa), len(xb)
    if biased:
        saa = sum(k(a, b) for a in xa for b in xa) / na**2
        sbb = sum(k(a, b) for a in xb for b in xb) / nb**2
        sab = sum(k(a, b) for a in xa for b in xb) / (na * nb)
        return saa + sbb - 2 * sab
    saa = sum(k(xa[i], xa[j]) for i in range(na) for j in range(na) if i != j) / (na * (na - 1))
    sbb = sum(k(xb[i], xb[j]) for i in range(nb) for j in range(nb) if i != j) / (nb * (nb - 1))
    if omit:
        sab = sum(k(xa[i], xb[j]) for i in range(na) for j in range(nb) if i != j) / (na * (na - 1))
    else:
        sab = sum(k(xa[i], xb[j]) for i in range(na) for j in range(nb)) / (na * nb)
    return saa + sbb - 2 * sab


class TestClt:
    def test_values(self):
        assert clt_threshold(1) == pytest.approx(math.sqrt(2 * math.log(2)), abs=1e-15)
        assert clt_threshold(1) == pytest.approx(1.17741, abs=1e-5)
        assert clt_threshold(10) == pytest.approx(0.51359, abs=1e-5)

    def test_decreasing(self):
        n = np.unique(np.logspace(np.log10(2), 6, 3000).astype(int))
        t = np.array([clt_threshold(int(v)) for v in n])
        assert np.all(np.diff(t) < 0) and t[-1] < 0.004

    def test_zero(self):
        with pytest.raises(InvalidArgumentError):
            clt_threshold(0)

    @given(st.integers(1, 10**6), st.floats(0.01, 100))
    def test_densities_agree_at_threshold(self, n, lam):
        xbar = clt_threshold(n) * math.sqrt(lam)
        p0, p1 = clt_model_densities(xbar, lam, n)
        assert p0 == pytest.approx(p1, rel=1e-9)


class TestMmd:
    def test_identical_samples(self, rng):
        x = rng.normal(size=(20, 3))
        assert abs(mmd2(x, x, KernelSpec.spherical(1.0), biased=True)) <= 1e-12
        assert abs(mmd2(x, x[rng.permutation(20)], KernelSpec.spherical(1.0), biased=True)) <= 1e-12

    @given(st.floats(-5, 5))
    def test_one_point_closed_form(self, t):
        v = mmd2(np.array([[0.0]]), np.array([[t]]), KernelSpec.spherical(1.0), biased=True)
        assert v == pytest.approx(2 * (1 - math.exp(-t * t / 2)), abs=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_naive_oracle(self, seed):
        rng = np.random.default_rng(seed)
        xa, xb = rng.normal(size=(10, 2)), rng.normal(size=(10, 2)) + 0.5
        for omit in (False, True):
            ref = naive_mmd(xa.tolist(), xb.tolist(), 1.7, omit=omit)
            assert mmd2(xa, xb, KernelSpec.spherical(1.7), omit_self_pairs=omit) == pytest.approx(ref, abs=1e-12)
        ref = naive_mmd(xa.tolist(), xb.tolist(), 1.7, biased=True)
        assert mmd2(xa, xb, KernelSpec.spherical(1.7), biased=True) == pytest.approx(ref, abs=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 15), st.integers(2, 15))
    def test_symmetric_and_bounded(self, seed, na, nb):
        rng = np.random.default_rng(seed)
        xa, xb = rng.normal(size=(na, 2)), rng.normal(size=(nb, 2))
        k = KernelSpec.spherical(2.0)
        u = mmd2(xa, xb, k)
        assert u == pytest.approx(mmd2(xb, xa, k), abs=1e-14)
        # the unbiased estimator is an average of (positive) within terms minus the cross term
        assert u >= -1 / na - 1 / nb - 1e-12
        assert mmd2(xa, xb, k, biased=True) >= -1e-14

    def test_weighted_alpha_one_is_spherical(self, rng):
        xa, xb = rng.normal(size=(15, 3)), rng.normal(size=(15, 3))
        w = KernelSpec.weighted(2.5, 1.0, np.eye(3))
        s = KernelSpec.spherical(2.5)
        assert abs(mmd2(xa, xb, w) - mmd2(xa, xb, s)) <= 1e-12

    def test_weighted_matrix(self, rng):
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        k = KernelSpec.weighted(2.0, 0.25, cov)
        expected = np.linalg.inv(0.75 * cov + 0.25 * np.eye(2)) / 2.0
        assert np.allclose(k.weight, expected) and np.allclose(k.weight, k.weight.T)
        assert np.all(np.linalg.eigvalsh(k.weight) > 0)
        x = rng.normal(size=(2, 2))
        z = k.embed(x)
        dlt = x[0] - x[1]
        assert np.sum((z[0] - z[1]) ** 2) == pytest.approx(dlt @ k.weight @ dlt, rel=1e-12)

    def test_bad_bandwidth(self):
        with pytest.raises(InvalidArgumentError):
            KernelSpec.spherical(0.0)

    def test_paired_needs_equal_sizes(self, rng):
        with pytest.raises(InvalidArgumentError):
            mmd2(rng.normal(size=(4, 2)), rng.normal(size=(5, 2)), KernelSpec.spherical(1.0), omit_self_pairs=True)


class TestBatched:
    def test_full_batch_equals_full(self, rng):
        xa, xb = rng.normal(size=(30, 2)), rng.normal(size=(30, 2))
        k = KernelSpec.spherical(1.0)
        mean, se = mmd_batched(xa, xb, k, 30, 4, make_rng(0), omit_self_pairs=True)
        assert mean == mmd2(xa, xb, k, omit_self_pairs=True) and se == 0

    def test_deterministic(self, rng):
        xa, xb = rng.normal(size=(300, 2)), rng.normal(size=(300, 2))
        k = KernelSpec.spherical(1.0)
        assert mmd_batched(xa, xb, k, 50, 5, make_rng(3)) == mmd_batched(xa, xb, k, 50, 5, make_rng(3))

    def test_repeat_count(self, rng, monkeypatch):
        import symdisc.selection as sel

        calls = []
        real = sel.mmd2
        monkeypatch.setattr(sel, "mmd2", lambda *a, **kw: calls.append(len(a[0])) or real(*a, **kw))
        x = rng.normal(size=(50000, 2))
        sel.mmd_batched(x, x, KernelSpec.spherical(1.0), 1024, 5, make_rng(0), omit_self_pairs=True)
        assert calls == [1024] * 5

    def test_errors(self, rng):
        x = rng.normal(size=(10, 2))
        with pytest.raises(InvalidArgumentError):
            mmd_batched(x, x, KernelSpec.spherical(1.0), 1, 2, make_rng(0))
        with pytest.raises(InvalidArgumentError):
            mmd_batched(x, x, KernelSpec.spherical(1.0), 11, 2, make_rng(0))


def planted(seed, n=4000, exact=True):
    dm, p = gumbel_mixture(SynthConfig(6, n, 2, seed, 3, exact_pairs=exact))
    return dm.values, p


class TestSelection:
    def test_known_k(self, rng):
        x = rng.normal(size=(50, 3)) + [3, 0, 1]
        m = fit_spectral(x)
        rep = rank_data(x, m, "mean")
        res = select_known_k(m, rep, 2)
        assert res.swap_count == 2 and list(np.flatnonzero(res.signs < 0)) == sorted(rep.order[:2])
        assert len(res.mean_error) == 4
        with pytest.raises(InvalidArgumentError):
            select_known_k(m, rep, 4)

    def test_threshold_zero_is_empty(self, rng):
        x = rng.normal(size=(50, 3))
        m = fit_spectral(x)
        assert select_threshold(x, m, rank_data(x, m, "mean"), threshold=0.0).swap_count == 0

    def test_full_dataset_true_k_minimal(self):
        # a full batch keeps every point together with its exact image
        x, p = planted(1, n=1000)
        m = fit_spectral(x)
        rep = rank_data(x, m, "mean")
        res = select_full_dataset(x, m, rep, KernelSpec.spherical(3.0), make_rng(0), batch=1000, repeats=1)
        assert len(res.mean_error) == 7
        assert np.all(res.mean_error[3] <= res.mean_error)
        assert res.swap_count == 3

    def test_full_dataset_ties_to_smaller_k(self, monkeypatch):
        import symdisc.selection as sel

        monkeypatch.setattr(sel, "mmd_batched", lambda *a, **kw: (0.0, 0.0))
        x = np.random.default_rng(0).normal(size=(20, 3))
        m = fit_spectral(x)
        res = sel.select_full_dataset(x, m, rank_data(x, m, "mean"), KernelSpec.spherical(1.0), make_rng(0))
        assert res.swap_count == 0

    def test_one_standard_error_rule(self):
        means = np.array([0.5, 0.1, 0.12, 0.14, 0.3])
        ses = np.array([0.01, 0.03, 0.03, 0.03, 0.01])
        assert one_standard_error(means, ses) == 2
        flat = np.array([0.1, 0.1, 0.1, 0.1])
        assert one_standard_error(flat, np.full(4, 0.01)) == 3

    def test_kfold(self):
        x, _ = planted(2, n=2000)
        res = select_kfold(x, "mean", KernelSpec.spherical(3.0), make_rng(1), folds=5, repeats=2, batch=400)
        again = select_kfold(x, "mean", KernelSpec.spherical(3.0), make_rng(1), folds=5, repeats=2, batch=400)
        assert res.details["fits_per_k"] == 10
        assert np.array_equal(res.mean_error, again.mean_error) and res.swap_count == again.swap_count
        assert len(res.mean_error) == 7

    def test_kfold_protocol_size(self):
        x, _ = planted(2, n=200)
        res = select_kfold(x, "mean", KernelSpec.spherical(3.0), make_rng(1), folds=5, repeats=5)
        assert res.details["fits_per_k"] == 25

    def test_kfold_small_folds(self, rng):
        with pytest.raises(InsufficientDataError):
            select_kfold(rng.normal(size=(5, 2)), "mean", KernelSpec.spherical(1.0), make_rng(0), folds=5)

    def test_csv(self, tmp_path):
        res = SelectionResult(1, np.array([1.0, -1.0]), np.array([0.2, 0.1, 0.3]), np.array([0.01] * 3), "x")
        res.to_csv(tmp_path / "s.csv")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "k,mean_error,std_error,selected"
        assert [line.split(",")[-1] for line in lines[1:]] == ["0", "1", "0"]


class TestBootstrap:
    def test_symmetric_coordinate_unfixed(self):
        x, p = planted(4, n=2000)
        res = bootstrap_unfixed_test(x, "mean", 60, 0.05, make_rng(0))
        m = fit_spectral(x)
        unfixed = np.einsum("ji,jk,ki->i", m.eigenvectors, p.matrix, m.eigenvectors) < 0
        assert all(res.decisions[i] is Decision.UNFIXED for i in np.flatnonzero(unfixed))
        assert res.record.statistics.shape == (6, 60) and res.record.angles.shape == (6, 60)

    def test_large_mean_fixed(self, rng):
        x = rng.normal(size=(10000, 2)) * [2.0, 1.0]
        x[:, 1] += 10.0
        res = bootstrap_unfixed_test(x, "mean", 100, 0.05, make_rng(0))
        assert res.decisions[1] is Decision.FIXED
        assert res.intervals[1, 0] > 5

    def test_degenerate_pair_unmatched(self):
        # with equal population eigenvalues the resampled pair wanders far more than a separated one
        degenerate, separated = [], []
        for seed in range(10):
            z = np.random.default_rng(seed).normal(size=(2000, 3))
            x = z * [1.0, 1.0, 0.2] + [0.0, 0.0, 1.0]
            res = bootstrap_unfixed_test(x, "mean", 50, 0.05, make_rng(seed), guard_deg=5.0)
            degenerate.append(res.median_angle_deg[0])
            assert res.decisions[0] is Decision.UNMATCHED and res.decisions[1] is Decision.UNMATCHED
            x = z * [2.0, 1.0, 0.2] + [0.0, 0.0, 1.0]
            res = bootstrap_unfixed_test(x, "mean", 50, 0.05, make_rng(seed), guard_deg=5.0)
            separated.append(res.median_angle_deg[0])
            assert all(d is not Decision.UNMATCHED for d in res.decisions)
        assert min(degenerate) > 5 * max(separated)

    def test_errors(self, rng):
        x = rng.normal(size=(30, 2))
        with pytest.raises(InvalidArgumentError):
            bootstrap_unfixed_test(x, "mean", 49, 0.05, make_rng(0))
        with pytest.raises(InvalidArgumentError):
            bootstrap_unfixed_test(x, "cov-adj", 50, 0.05, make_rng(0))

    def test_csv(self, tmp_path, rng):
        res = bootstrap_unfixed_test(rng.normal(size=(200, 2)) * [2, 1], "median", 50, 0.1, make_rng(0))
        res.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "b.csv").read_text().splitlines()[0] == "index,decision,interval_lo,interval_hi,median_angle_deg"
