import json
from math import comb

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import batch_se
from cortkit.baselines import (
    CheckerboardCopula,
    EmpiricalBetaCopula,
    EmpiricalCopula,
    grid_cells,
    reg_incomplete_beta,
)
from cortkit.datasets import gen_dataset1, pseudo_obs
from cortkit.partition import Partition
from cortkit.plc import PiecewiseLinearCopula


def binomial_tail(x, a, b):
    """I_x(a, b) for integer a, b as a binomial tail probability."""
    m = a + b - 1
    return sum(comb(m, j) * x**j * (1 - x) ** (m - j) for j in range(a, m + 1))


def tau_of(block):
    return stats.kendalltau(block[:, 0], block[:, 1])[0]


def rho_of(block):
    return stats.spearmanr(block[:, 0], block[:, 1])[0]


def random_beta(rng, n, d=2):
    return EmpiricalBetaCopula().fit(pseudo_obs(rng.random((n, d)) ** rng.uniform(0.3, 3, d)))


class TestIncompleteBeta:
    def test_examples(self):
        for x in (0, 0.3, 1):
            assert reg_incomplete_beta(x, 1, 1) == pytest.approx(x, abs=1e-15)
        for a in (2, 5, 17):
            assert reg_incomplete_beta(0.5, a, a) == pytest.approx(0.5, abs=1e-15)
        assert reg_incomplete_beta(0.25, 2, 1) == pytest.approx(0.0625, abs=1e-15)
        quad = integrate.quad(lambda t: 2 * t, 0, 0.25, epsabs=1e-14)[0]
        assert quad == pytest.approx(0.0625, abs=1e-13)

    def test_symmetry(self, rng):
        x = rng.random(1000)
        a, b = rng.uniform(0.1, 50, (2, 1000))
        assert np.abs(reg_incomplete_beta(x, a, b) - (1 - reg_incomplete_beta(1 - x, b, a))).max() <= 1e-12

    def test_integer_parameters(self, rng):
        for _ in range(200):
            x = rng.random()
            a, b = rng.integers(1, 30, 2)
            assert reg_incomplete_beta(x, a, b) == pytest.approx(binomial_tail(x, int(a), int(b)), abs=1e-12)

    def test_matches_quadrature(self, rng):
        for _ in range(50):
            x = rng.random()
            a, b = rng.uniform(1, 8, 2)
            dens = stats.beta(a, b).pdf
            assert reg_incomplete_beta(x, a, b) == pytest.approx(integrate.quad(dens, 0, x, epsabs=1e-14)[0], abs=1e-10)

    @pytest.mark.parametrize("args", [(-0.1, 1, 1), (1.1, 1, 1), (0.5, 0, 1), (0.5, 1, -2), (np.nan, 1, 1)])
    def test_domain(self, args):
        with pytest.raises(ValueError):
            reg_incomplete_beta(*args)


class TestEmpirical:
    def test_cdf_examples(self):
        X = np.array([[0.2, 0.6], [0.4, 0.2], [0.8, 0.8]])
        model = EmpiricalCopula().fit(X)
        assert model.cdf([[1, 1]])[0] == 1
        assert model.cdf([[0.1, 0.9]])[0] == 0
        assert model.cdf([[0.4, 0.6]])[0] == pytest.approx(2 / 3)
        assert model.cdf([[0.5, 0.0]])[0] == 0

    def test_atomic_density(self):
        X = np.array([[0.2, 0.6], [0.4, 0.2], [0.8, 0.8]])
        model = EmpiricalCopula().fit(X)
        assert model.pdf([[0.3, 0.3]])[0] == 0
        assert model.pdf(X) == pytest.approx([1 / 3] * 3)
        assert model.is_atom(X).all() and not model.is_atom([[0.3, 0.3]])[0]
        assert model.l2_norm_sq() == pytest.approx(1 / 3)

    def test_sample_and_measures(self):
        X = gen_dataset1(0).data
        model = EmpiricalCopula().fit(X)
        draws = model.sample(1000, random_state=1)
        assert model.is_atom(draws).all()
        assert model.pairwise_measures(0, 1) == pytest.approx((tau_of(X), rho_of(X)))

    def test_round_trip(self):
        model = EmpiricalCopula().fit(gen_dataset1(1).data)
        back = EmpiricalCopula.from_dict(json.loads(model.to_json()))
        assert np.array_equal(back.data_, model.data_)


class TestCheckerboard:
    def test_cell_convention(self):
        # cells are half-open (k/m, (k+1)/m], dimension 0 fastest
        assert grid_cells(np.array([[0.1, 0.1], [0.1000001, 0.1], [0.05, 0.95]]), 10).tolist() == [0, 1, 90]

    def test_uniform_grid_data(self):
        c = (np.arange(4) + 0.5) / 4
        X = np.array([[a, b] for b in c for a in c])
        model = CheckerboardCopula(m=4).fit(X)
        assert model.copula_.weights == pytest.approx(np.full(16, 1 / 16))

    def test_one_cell(self):
        model = CheckerboardCopula(m=5).fit(np.full((7, 2), 0.5))
        w = model.copula_.weights
        assert w.max() == 1 and w.sum() == 1
        assert model.pdf([[0.5, 0.5]])[0] == 25

    def test_m1_is_independence(self, rng):
        model = CheckerboardCopula(m=1).fit(rng.random((30, 3)))
        assert model.n_leaves_ == 1
        probe = rng.random((20, 3))
        assert model.cdf(probe) == pytest.approx(probe.prod(axis=1))

    def test_dataset1(self):
        model = CheckerboardCopula(m=10).fit(gen_dataset1(0).data)
        assert model.pairwise_measures(0, 1)[0] == pytest.approx(-0.515, abs=0.08)
        assert model.n_leaves_ == 100

    def test_projected_is_copula(self):
        model = CheckerboardCopula(m=5, project=True).fit(gen_dataset1(0).data)
        assert model.is_copula(1e-8)

    def test_round_trip(self):
        model = CheckerboardCopula(m=6).fit(gen_dataset1(2).data)
        back = CheckerboardCopula.from_dict(json.loads(model.to_json()))
        probe = np.random.default_rng(0).random((100, 2))
        assert np.array_equal(back.pdf(probe), model.pdf(probe))

    def test_invalid_m(self):
        with pytest.raises(ValueError):
            CheckerboardCopula(m=0).fit([[0.5, 0.5]])


class TestBeta:
    def test_single_row_is_independence(self, rng):
        model = EmpiricalBetaCopula().fit([[0.3, 0.8]])
        probe = rng.random((20, 2))
        assert model.cdf(probe) == pytest.approx(probe.prod(axis=1), abs=1e-15)
        assert model.pdf(probe) == pytest.approx(np.ones(20), abs=1e-13)

    def test_boundaries(self, rng):
        model = random_beta(rng, 30, 3)
        assert model.cdf([[1, 1, 1]])[0] == pytest.approx(1, abs=1e-12)
        assert model.cdf([[0.3, 0, 0.9]])[0] == 0
        assert np.all(np.isfinite(model.pdf([[0, 0.5, 1], [1, 1, 1]])))

    def test_density_integrates_to_one(self, rng):
        model = random_beta(rng, 50)
        values = model.pdf(rng.random((1_000_000, 2)))
        assert abs(values.mean() - 1) <= 3 * values.std() / np.sqrt(values.size)

    def test_cdf_matches_integrated_density(self, rng):
        model = random_beta(rng, 10)
        for u in rng.random((100, 2)):
            value = integrate.dblquad(
                lambda y, x: model.pdf([[x, y]])[0], 0, u[0], 0, u[1], epsabs=1e-10, epsrel=1e-10
            )[0]
            assert model.cdf([u])[0] == pytest.approx(value, abs=1e-6)

    def test_cdf_monotone(self, rng):
        model = random_beta(rng, 40, 3)
        u = rng.random((200, 3))
        v = u.copy()
        v[np.arange(200), rng.integers(3, size=200)] += rng.random(200) * 0.2
        v = np.minimum(v, 1)
        assert np.all(model.cdf(v) >= model.cdf(u) - 1e-15)

    def test_sample_margins(self, rng):
        draws = random_beta(rng, 25).sample(100_000, random_state=3)
        for j in range(2):
            assert stats.kstest(draws[:, j], "uniform").pvalue > 0.01

    def test_measures_against_monte_carlo(self, rng):
        for k in range(3):
            model = random_beta(rng, 40)
            tau, rho = model.pairwise_measures(0, 1)
            draws = model.sample(1_000_000, random_state=10 + k)
            for value, fn in ((tau, tau_of), (rho, rho_of)):
                _, se = batch_se(fn, draws, n_batches=100)
                assert abs(fn(draws) - value) <= 3 * se

    def test_inner_product_matches_quadrature(self, rng):
        a, b = random_beta(rng, 6), random_beta(rng, 9)
        opts = {"epsabs": 1e-11, "epsrel": 1e-11}
        num = integrate.dblquad(lambda y, x: a.pdf([[x, y]])[0] * b.pdf([[x, y]])[0], 0, 1, 0, 1, **opts)[0]
        assert a.inner_product(b) == pytest.approx(num, abs=1e-8)
        num = integrate.dblquad(lambda y, x: a.pdf([[x, y]])[0] ** 2, 0, 1, 0, 1, **opts)[0]
        assert a.l2_norm_sq() == pytest.approx(num, abs=1e-8)

    def test_round_trip(self, rng):
        model = random_beta(rng, 20)
        back = EmpiricalBetaCopula.from_dict(json.loads(model.to_json()))
        assert np.array_equal(back.ranks_, model.ranks_)

    def test_rank_validation(self):
        with pytest.raises(ValueError):
            EmpiricalBetaCopula.from_dict({"kind": "beta", "dim": 2, "ranks": [[1, 1], [1, 2]]})
        with pytest.raises(ValueError):
            EmpiricalBetaCopula.from_dict({"kind": "checkerboard", "dim": 2, "ranks": [[1, 1]]})


class TestSharedInterface:
    @pytest.mark.parametrize("model", [EmpiricalCopula(), CheckerboardCopula(m=4), EmpiricalBetaCopula()])
    def test_boundary_conditions(self, model, rng):
        model.fit(gen_dataset1(0).data)
        assert model.cdf([[1, 1]])[0] == pytest.approx(1, abs=1e-12)
        u = rng.random((10, 2))
        u[:, 0] = 0
        assert np.all(model.cdf(u) == 0)

    def test_checkerboard_is_plc(self):
        model = CheckerboardCopula(m=3).fit(gen_dataset1(0).data)
        assert isinstance(model.copula_, PiecewiseLinearCopula)
        grid = Partition.grid(3, 2)
        assert np.array_equal(model.partition_.lower, grid.lower)
        assert np.array_equal(model.partition_.upper, grid.upper)
