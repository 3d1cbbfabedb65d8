import json
import warnings

import numpy as np
import pytest
from scipy import stats

from conftest import batch_se, quadrants, refined_cells
from cortkit._rng import derive_rng
from cortkit.baselines import CheckerboardCopula, EmpiricalCopula
from cortkit.cort import Cort
from cortkit.datasets import gen_dataset1
from cortkit.forest import (
    CopulaForest,
    compute_oob_statistics,
    fit_forest,
    gram_matrix,
    j_statistic,
    oob_mixture,
    optimize_weights,
    project_simplex,
)
from cortkit.plc import PiecewiseLinearCopula


class FlakyCheckerboard(CheckerboardCopula):
    """Checkerboard whose fit fails for every third seed."""

    def __init__(self, m=2, project=False, qp_tol=1e-9, random_state=None):
        super().__init__(m, project, qp_tol)
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.random_state % 3 == 0:
            raise RuntimeError("boom")
        return super().fit(X, y)


@pytest.fixture(scope="module")
def d1_forest():
    return CopulaForest(Cort(), n_estimators=50, random_state=0).fit(gen_dataset1(0).data)


def tau_of(block):
    return stats.kendalltau(block[:, 0], block[:, 1])[0]


class TestFitting:
    def test_single_tree(self):
        X = gen_dataset1(0).data
        forest = CopulaForest(Cort(), n_estimators=1, random_state=0).fit(X)
        probe = np.random.default_rng(1).random((200, 2))
        assert np.array_equal(forest.pdf(probe), forest.estimators_[0].pdf(probe))
        assert forest.omega_.tolist() == [1.0]

    def test_oob_fraction(self):
        X = gen_dataset1(0).data
        forest = CopulaForest(CheckerboardCopula(m=1), n_estimators=100, random_state=0).fit(X)
        assert forest.oob_.mean() == pytest.approx((1 - 1 / 500) ** 500, abs=0.005)
        assert forest.oob_.mean() == pytest.approx(0.368, abs=0.03)

    def test_oob_is_complement_of_resample(self):
        X = gen_dataset1(0).data
        forest = CopulaForest(CheckerboardCopula(m=1), n_estimators=5, random_state=4).fit(X)
        for j in range(5):
            idx = derive_rng(forest.seed_, j).integers(0, 500, size=500)
            inbag = np.zeros(500, dtype=bool)
            inbag[idx] = True
            assert np.array_equal(forest.oob_[:, j], ~inbag)

    def test_deterministic(self):
        X = gen_dataset1(1).data
        a = CopulaForest(Cort(), n_estimators=6, random_state=9).fit(X)
        b = CopulaForest(Cort(), n_estimators=6, random_state=9).fit(X)
        assert np.array_equal(a.oob_, b.oob_)
        assert a.to_json() == b.to_json()

    def test_thread_count_irrelevant(self, monkeypatch):
        X = gen_dataset1(1).data
        monkeypatch.setenv("CORTKIT_THREADS", "1")
        a = fit_forest(X, 6, Cort(), seed=2).to_json()
        monkeypatch.setenv("CORTKIT_THREADS", "3")
        assert fit_forest(X, 6, Cort(), seed=2).to_json() == a

    def test_failing_trees_dropped(self):
        X = gen_dataset1(0).data
        with pytest.warns(RuntimeWarning, match="dropped"):
            forest = CopulaForest(FlakyCheckerboard(), n_estimators=12, random_state=0).fit(X)
        assert forest.n_trees_ + len(forest.dropped_) == 12
        assert forest.dropped_
        assert forest.oob_.shape == (500, forest.n_trees_)

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            CopulaForest(n_estimators=0).fit(gen_dataset1(0).data)


class TestOobMixture:
    def test_examples(self):
        values = np.array([[2.0, 5.0], [2.0, 5.0], [2.0, 5.0]])
        oob = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        mix, defined = oob_mixture(values, oob, np.array([0.5, 0.5]))
        assert mix[0] == 2.0
        assert not defined[1] and np.isnan(mix[1])
        assert mix[2] == 3.5
        mix, _ = oob_mixture(values, oob, np.array([0.0, 1.0]))
        assert mix[2] == 5.0

    def test_oob_density_method(self, d1_forest):
        i = int(np.flatnonzero(d1_forest.oob_.any(axis=1))[0])
        w = d1_forest.omega_
        trees = np.flatnonzero(d1_forest.oob_[i] & (w > 0))
        expected = sum(w[j] * d1_forest.estimators_[j].pdf(d1_forest.X_[[i]])[0] for j in trees) / w[trees].sum()
        assert d1_forest.oob_density(i) == pytest.approx(expected, rel=1e-12)


class TestStatistics:
    def test_independence_forest(self):
        X = gen_dataset1(0).data
        forest = CopulaForest(CheckerboardCopula(m=1), n_estimators=32, optimize=False, random_state=0).fit(X)
        stats_ = forest.oob_statistics()
        assert stats_.n_undefined == 0
        assert stats_.J == -1
        assert stats_.K == 0

    def test_empirical_forest(self):
        X = gen_dataset1(0).data
        forest = CopulaForest(EmpiricalCopula(), n_estimators=10, optimize=False, random_state=0).fit(X)
        assert forest.oob_statistics(with_cdf=False).K == float("inf")

    def test_single_tree_statistics(self):
        X = gen_dataset1(0).data
        forest = CopulaForest(Cort(), n_estimators=1, random_state=3).fit(X)
        tree, oob = forest.estimators_[0], forest.oob_[:, 0]
        stats_ = forest.oob_statistics()
        dens = tree.pdf(X[oob])
        assert stats_.J == pytest.approx(tree.l2_norm_sq() - 2 * dens.sum() / 500, abs=1e-12)
        assert stats_.n_used == oob.sum()
        emp = EmpiricalCopula().fit(X).cdf(X[oob])
        C = tree.cdf(X[oob])
        assert stats_.M == pytest.approx(np.sum((C - emp) ** 2) / 500, abs=1e-12)
        assert stats_.N == pytest.approx(np.sum(C**2 - 2 * C * emp) / 500, abs=1e-12)

    def test_j_statistic_matches(self, d1_forest):
        s = d1_forest.oob_statistics(with_cdf=False)
        j = j_statistic(d1_forest.gram_, d1_forest.densities_, d1_forest.oob_.astype(float), d1_forest.omega_)
        assert s.J == pytest.approx(j, abs=1e-12)
        assert np.isnan(s.M) and np.isnan(s.N)

    def test_zero_density_gives_infinite_k(self):
        stats_ = compute_oob_statistics(np.ones((1, 1)), np.array([[1.0], [0.0]]), np.ones((2, 1)), np.ones(1))
        assert stats_.K == float("inf")

    def test_statistics_curve(self, d1_forest):
        rows = d1_forest.statistics_curve(sizes=[1, 10, 50])
        assert [r["trees"] for r in rows] == [1, 10, 50]
        w = np.full(50, 1 / 50)
        assert rows[-1]["J"] == pytest.approx(d1_forest.oob_statistics(omega=w, with_cdf=False).J, abs=1e-12)


class TestGram:
    def test_examples(self):
        indep = [PiecewiseLinearCopula.independence(2)] * 3
        assert np.array_equal(gram_matrix(indep), np.ones((3, 3)))
        a, b = quadrants((0.5, 0, 0, 0.5)), quadrants((0, 0.5, 0.5, 0))
        G = gram_matrix([a, b])
        assert G[0, 1] == 0
        assert G[0, 0] == pytest.approx(a.l2_norm_sq(), abs=1e-15)

    def test_matches_integration(self, rng):
        for seed in range(5):
            forest = CopulaForest(Cort(), n_estimators=4, optimize=False, random_state=seed).fit(gen_dataset1(seed).data)
            G = forest.gram_
            assert np.allclose(G, G.T, atol=0)
            assert np.linalg.eigvalsh(G).min() >= -1e-9
            centres, area = refined_cells(forest.estimators_)
            w = rng.dirichlet(np.ones(4))
            brute = np.sum(forest.pdf(centres, omega=w) ** 2 * area)
            assert forest.l2_norm_sq(omega=w) == pytest.approx(brute, abs=1e-6)
            assert np.sum(forest.pdf(centres, omega=w) * area) == pytest.approx(1, abs=1e-9)


class TestOptimizeWeights:
    def test_simplex_projection(self, rng):
        for _ in range(50):
            v = rng.standard_normal(6) * 3
            p = project_simplex(v)
            assert p.min() >= 0 and p.sum() == pytest.approx(1, abs=1e-12)
            # optimality: v - p is constant on the support
            support = p > 0
            assert np.ptp((v - p)[support]) <= 1e-12

    def test_identical_trees(self, rng):
        G = np.full((4, 4), 2.5)
        col = rng.random(300) * 3
        dens = np.repeat(col[:, None], 4, axis=1)
        oob = (rng.random((300, 4)) < 0.37).astype(float)
        oob[:, 0] = 1
        result = optimize_weights(G, dens, oob, random_state=0)
        uniform = j_statistic(G, dens, oob, np.full(4, 0.25))
        assert result.objective == pytest.approx(uniform, abs=1e-10)

    def test_dominating_tree(self):
        G = np.array([[2.0, 0.5], [0.5, 3.0]])
        dens = np.column_stack([np.full(50, 2.0), np.full(50, 0.5)])
        oob = np.ones((50, 2))
        result = optimize_weights(G, dens, oob, random_state=0)
        t = np.linspace(0, 1, 100_001)
        grid = [j_statistic(G, dens, oob, np.array([a, 1 - a])) for a in t[::100]]
        assert t[::100][int(np.argmin(grid))] == 1.0
        assert result.omega == pytest.approx([1, 0], abs=1e-6)
        assert result.objective == pytest.approx(-2, abs=1e-9)

    def test_history_non_increasing(self, d1_forest):
        h = d1_forest.optimization_.history
        assert all(b <= a for a, b in zip(h, h[1:]))
        assert d1_forest.optimization_.objective <= d1_forest.optimization_.initial_objective
        assert d1_forest.omega_.min() >= 0 and d1_forest.omega_.sum() == pytest.approx(1, abs=1e-9)

    def test_deterministic(self, d1_forest):
        args = (d1_forest.gram_, d1_forest.densities_, d1_forest.oob_)
        a, b = optimize_weights(*args, random_state=5), optimize_weights(*args, random_state=5)
        assert np.array_equal(a.omega, b.omega)

    def test_few_trees_selected_at_scale(self):
        forest = CopulaForest(Cort(), n_estimators=500, random_state=0).fit(gen_dataset1(0).data)
        assert np.sum(forest.omega_ > 1e-6) <= 25


class TestMixture:
    def test_sample_one_hot(self, d1_forest):
        w = np.zeros(d1_forest.n_trees_)
        w[3] = 1
        draws = d1_forest.sample(20_000, random_state=1, omega=w)
        tree = d1_forest.estimators_[3]
        assert np.all(tree.pdf(draws) > 0)
        ref = tree.sample(20_000, random_state=2)
        for j in range(2):
            assert stats.ks_2samp(draws[:, j], ref[:, j]).pvalue > 0.01

    def test_independence_margins(self):
        forest = CopulaForest(CheckerboardCopula(m=1), n_estimators=4, random_state=0).fit(gen_dataset1(0).data)
        draws = forest.sample(100_000, random_state=3)
        for j in range(2):
            assert stats.kstest(draws[:, j], "uniform").pvalue > 0.01

    def test_sample_reproducible(self, d1_forest):
        assert np.array_equal(d1_forest.sample(100, random_state=4), d1_forest.sample(100, random_state=4))

    def test_pairwise_measures_against_monte_carlo(self, d1_forest):
        tau, _ = d1_forest.pairwise_measures(0, 1)
        draws = d1_forest.sample(1_000_000, random_state=5)
        _, se = batch_se(tau_of, draws, n_batches=100)
        assert abs(tau_of(draws) - tau) <= 3 * se

    def test_dataset1_bagged_tau(self, d1_forest):
        draws = d1_forest.sample(100_000, random_state=0)
        assert tau_of(draws) == pytest.approx(-0.393, abs=0.1)

    def test_invalid_omega(self, d1_forest):
        with pytest.raises(ValueError):
            d1_forest.pdf([[0.5, 0.5]], omega=np.ones(d1_forest.n_trees_))


class TestSerialisation:
    def test_round_trip(self):
        X = gen_dataset1(2).data
        forest = CopulaForest(Cort(), n_estimators=5, random_state=1).fit(X)
        back = CopulaForest.from_dict(json.loads(forest.to_json()))
        assert np.array_equal(back.oob_, forest.oob_)
        assert np.array_equal(back.omega_, forest.omega_)
        probe = np.random.default_rng(0).random((100, 2))
        assert np.array_equal(back.pdf(probe), forest.pdf(probe))
        assert back.oob_statistics().J == pytest.approx(forest.oob_statistics().J, abs=1e-12)

    def test_wrong_kind(self):
        with pytest.raises(ValueError):
            CopulaForest.from_dict({"kind": "cort"})


def test_no_warnings_on_clean_fit():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        CopulaForest(Cort(), n_estimators=3, random_state=0).fit(gen_dataset1(0).data)
