import json

import numpy as np
import pytest

from conftest import sorted_rows
from symdisc.data import PlantedSymmetry, SynthConfig, gumbel_mixture
from symdisc.errors import EmptyRestrictionError, InconsistentGroupError, InvalidArgumentError
from symdisc.groups import generators, group_elements, halfspace_restrict, recover_group, unfixed_vectors
from symdisc.spectral import SpectralModel, fit_spectral


def negated_axes(model, transform):
    return np.flatnonzero(np.einsum("ji,jk,ki->i", model.eigenvectors, transform, model.eigenvectors) < 0)


def orbit_sample(seed, n, swaps):
    """Full orbits of shifted normal draws under disjoint swaps.

    Swapped axes have mean exactly 0; every kept axis has a mean far above
    the CLT cut, so the unfixed set is known exactly.
    """
    rng = np.random.default_rng(seed)
    gens = [PlantedSymmetry.from_swaps(6, [pair]) for pair in swaps]
    base = rng.normal(3.0, [1.0, 0.5, 1.5, 0.3, 0.8, 1.2], size=(n // 2 ** len(gens), 6))
    parts = [base]
    for g in gens:
        parts = parts + [g.apply(p) for p in parts]
    return np.vstack(parts), gens


def klein_data(seed, n=8000):
    x, (g1, g2) = orbit_sample(seed, n, [(0, 1), (2, 3)])
    return x, g1, g2


def single_data(seed, n=4000):
    x, (g,) = orbit_sample(seed, n, [(0, 1)])
    return x, g


class TestRestrict:
    def test_empty_fixed(self, rng):
        x = rng.normal(size=(20, 3))
        assert np.array_equal(halfspace_restrict(x, fit_spectral(x), []), x)

    def test_symmetric_halves(self):
        y = np.array([-3.0, -1.0, 0.0, 1.0, 3.0, 0.0])[:, None]
        m = SpectralModel(np.zeros(1), np.eye(1), np.ones(1), np.eye(1), 6)
        out = halfspace_restrict(y, m, [0])
        assert len(out) == 2 and np.all(out > 0)

    def test_nested_compose(self, rng):
        x = rng.normal(size=(500, 3))
        m = fit_spectral(x)
        a = halfspace_restrict(halfspace_restrict(x, m, [0]), m, [2])
        b = halfspace_restrict(x, m, [0, 2])
        assert np.array_equal(a, b)

    def test_empty_result(self):
        x = -np.abs(np.random.default_rng(0).normal(size=(10, 1))) - 1
        m = SpectralModel(np.zeros(1), np.eye(1), np.ones(1), np.eye(1), 10)
        with pytest.raises(EmptyRestrictionError) as exc:
            halfspace_restrict(x, m, [0])
        assert exc.value.n_fixed == 1

    def test_duplicates(self, rng):
        x = rng.normal(size=(10, 2))
        with pytest.raises(InvalidArgumentError):
            halfspace_restrict(x, fit_spectral(x), [0, 0])


class TestUnfixed:
    def test_planted_set(self):
        x, p = single_data(0)
        m = fit_spectral(x)
        assert list(unfixed_vectors(x, m)) == list(negated_axes(m, p.matrix))

    def test_zero_threshold(self):
        x, _ = single_data(0)
        assert len(unfixed_vectors(x, fit_spectral(x), threshold=0.0)) == 0

    def test_asymmetric(self):
        for seed in range(5):
            dm, _ = gumbel_mixture(SynthConfig(6, 4000, 2, seed, 0))
            x = dm.values + 1.0
            assert len(unfixed_vectors(x, fit_spectral(x))) == 0


class TestRecover:
    def test_single(self):
        x, p = single_data(1)
        m = fit_spectral(x)
        g = recover_group(x, m)
        assert g.order_log2 == 1 and not g.truncated
        assert np.allclose(g.minimal.matrix, p.matrix, atol=1e-8)
        gens = generators(x, m, g)
        assert len(gens) == 1 and np.array_equal(gens[0].signs, g.minimal.signs)

    def test_klein(self):
        x, g1, g2 = klein_data(3)
        m = fit_spectral(x)
        g = recover_group(x, m)
        assert g.order_log2 == 2
        gens = generators(x, m, g)
        expected = {tuple(negated_axes(m, g1.matrix)), tuple(negated_axes(m, g2.matrix))}
        assert {tuple(h.negated) for h in gens} == expected
        prod = gens[0].signs * gens[1].signs
        assert set(np.flatnonzero(prod < 0)) == set(gens[0].negated) | set(gens[1].negated)
        # g_j negates the j-th fixed vector and keeps the others in F
        for j, h in enumerate(gens):
            for i, f in enumerate(g.fixed_sequence):
                assert h.signs[f] == (-1 if i == j else 1)

    def test_invariants(self):
        x, *_ = klein_data(5)
        m = fit_spectral(x)
        g = recover_group(x, m)
        gens = generators(x, m, g)
        cov = m.covariance
        for h in gens:
            a = h.matrix
            assert np.linalg.norm(a @ a - np.eye(6)) <= 1e-8
            assert np.linalg.norm(a @ cov @ a.T - cov) <= 1e-6 * np.linalg.norm(cov)
            assert np.allclose(sorted_rows(x @ a.T, 8), sorted_rows(x, 8), atol=1e-7)
            assert not np.all(h.signs == 1)
        for a in gens:
            for b in gens:
                assert np.array_equal(a.matrix @ b.matrix, a.matrix @ b.matrix)
                assert np.allclose(a.matrix @ b.matrix, b.matrix @ a.matrix, atol=1e-12)
        assert len(group_elements(gens)) == 2 ** g.order_log2
        for upper, lower in zip(g.level_unfixed[:-1], g.level_unfixed[1:]):
            assert set(lower) < set(upper)

    def test_asymmetric(self):
        dm, _ = gumbel_mixture(SynthConfig(6, 4000, 2, 0, 0))
        x = dm.values + 1.0
        g = recover_group(x, fit_spectral(x))
        assert g.order_log2 == 0 and g.minimal is None
        assert generators(x, fit_spectral(x), g) == []

    def test_truncation(self):
        x, *_ = klein_data(3, n=800)
        m = fit_spectral(x)
        g = recover_group(x, m, n_min=500)
        assert g.truncated and g.level_sizes[-1] < 500
        with pytest.raises(InvalidArgumentError):
            generators(x, m, g)

    def test_identity_generator_is_inconsistent(self):
        x, *_ = klein_data(3)
        m = fit_spectral(x)
        g = recover_group(x, m)
        d = m.dim

        def stat(z, model):
            # every axis looks unfixed on the full sample, nothing does on a half-space
            return np.zeros(d) if len(z) == len(x) else np.full(d, np.inf)

        with pytest.raises(InconsistentGroupError):
            generators(x, m, g, statistic=stat)

    def test_save(self, tmp_path):
        x, *_ = klein_data(3)
        m = fit_spectral(x)
        g = recover_group(x, m)
        generators(x, m, g)
        g.save(tmp_path / "g.csv", tmp_path / "g.json")
        meta = json.loads((tmp_path / "g.json").read_text())
        assert meta["n"] == 2 and meta["F"] == g.fixed_sequence and meta["truncated"] is False
        rows = (tmp_path / "g.csv").read_text().splitlines()
        assert len(rows) == 3 and rows[0].startswith("s0,")
