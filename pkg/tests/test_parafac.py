import itertools

import numpy as np
import pytest

from ntf_patterns.parafac import FitConfig, align, congruence_matrix, fit, fit_multi, normalize
from ntf_patterns.synth import SyntheticSpec, generate_synthetic
from ntf_patterns.tensor import FactorModel, reconstruct, relative_error

from conftest import random_model


def _cos(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


@pytest.fixture(scope="module")
def exact_rank3():
    return generate_synthetic(SyntheticSpec(n_users=60, n_weeks=12, noise="none", seed=3))


class TestFit:
    def test_rank_one_plant(self):
        g = np.random.default_rng(0)
        a, b, c = g.random(8) + 0.1, g.random(7) + 0.1, g.random(5) + 0.1
        t = np.einsum("i,j,k->ijk", a, b, c)
        res = fit(t, FitConfig(rank=1, seed=0))
        assert res.relative_error <= 1e-8
        m = res.model
        for true, got in zip((a, b, c), m.factors):
            assert _cos(true, got[:, 0]) > 1 - 1e-10

    def test_zero_tensor(self):
        res = fit(np.zeros((4, 7, 3)), FitConfig(rank=2))
        assert res.objective == 0.0
        for f in res.model.factors:
            np.testing.assert_array_equal(f, 0.0)

    def test_exact_rank3_recovery(self, exact_rank3):
        res = fit_multi(exact_rank3.tensor, FitConfig(rank=3, seed=0), n_runs=5).best
        assert res.relative_error <= 1e-6
        _, scores = align(exact_rank3.truth, res.model)
        assert np.all(scores >= 0.99)

    def test_factors_nonnegative_and_trace_monotone(self, rng):
        for _ in range(10):
            t = rng.random((int(rng.integers(3, 15)), 7, int(rng.integers(2, 10))))
            res = fit(t, FitConfig(rank=int(rng.integers(1, 5)), seed=int(rng.integers(1000))))
            assert res.model.is_nonnegative()
            assert np.all(np.diff(res.objective_trace) <= 1e-9)

    def test_deterministic(self, rng):
        t = rng.random((10, 7, 6))
        a, b = fit(t, FitConfig(rank=2, seed=9)), fit(t, FitConfig(rank=2, seed=9))
        for fa, fb in zip(a.model.factors, b.model.factors):
            assert fa.tobytes() == fb.tobytes()

    def test_objective_matches_residual(self, rng):
        t = rng.random((9, 7, 4))
        res = fit(t, FitConfig(rank=2, seed=1))
        direct = np.sum((t - reconstruct(res.model)) ** 2)
        assert res.objective == pytest.approx(direct, rel=1e-9)
        assert res.relative_error == pytest.approx(relative_error(t, res.model), rel=1e-9)

    def test_rank_above_unfolding_rank_warns(self):
        res = fit(np.ones((2, 7, 2)), FitConfig(rank=3, seed=0))
        assert any("rank" in w for w in res.warnings)

    def test_overfactored_rank_one(self):
        t = np.einsum("i,j,k->ijk", np.arange(1.0, 6.0), np.ones(7), np.ones(4))
        res = fit(t, FitConfig(rank=4, seed=2))
        assert res.relative_error <= 1e-6
        assert res.model.is_nonnegative()

    @pytest.mark.parametrize("bad", [dict(rank=0), dict(max_iterations=0), dict(tol=-1.0), dict(init="svd")])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            FitConfig(**bad)

    def test_negative_tensor_rejected(self):
        with pytest.raises(ValueError):
            fit(-np.ones((2, 7, 2)), FitConfig(rank=1))


class TestFitMulti:
    def test_single_run_equals_fit(self, rng):
        t = rng.random((8, 7, 5))
        cfg = FitConfig(rank=2, seed=4)
        multi, single = fit_multi(t, cfg, n_runs=1), fit(t, cfg)
        assert multi.best.model.A.tobytes() == single.model.A.tobytes()
        assert multi.objectives == [single.objective]

    def test_seeds_and_best(self, rng):
        t = rng.random((8, 7, 5))
        multi = fit_multi(t, FitConfig(rank=3, seed=10), n_runs=4)
        assert multi.seeds == [10, 11, 12, 13]
        assert multi.best.objective == min(multi.objectives)

    def test_threads_do_not_change_result(self, rng):
        t = rng.random((8, 7, 5))
        a = fit_multi(t, FitConfig(rank=2, seed=0), n_runs=3)
        b = fit_multi(t, FitConfig(rank=2, seed=0), n_runs=3, threads=3)
        assert a.best.model.A.tobytes() == b.best.model.A.tobytes()
        assert a.objectives == b.objectives

    def test_invalid_runs(self):
        with pytest.raises(ValueError):
            fit_multi(np.ones((2, 7, 2)), FitConfig(rank=1), n_runs=0)


class TestNormalize:
    def test_already_normalized(self):
        B = np.eye(7)[:, :2]
        C = np.eye(3)[:, :2]
        m = normalize(FactorModel(np.ones((4, 2)), B, C))
        np.testing.assert_allclose(m.weights, 1.0)
        np.testing.assert_allclose(m.B, B)

    def test_scaling_invariance(self, rng):
        m = random_model(rng, (5, 7, 4), 2)
        B, C = m.B.copy(), m.C.copy()
        B[:, 1] *= 4
        C[:, 1] *= 0.25
        n1, n2 = normalize(m), normalize(FactorModel(m.A, B, C))
        for f1, f2 in zip(n1.factors, n2.factors):
            np.testing.assert_allclose(f1, f2, rtol=1e-13)
        np.testing.assert_allclose(n1.weights, n2.weights, rtol=1e-13)

    def test_reconstruction_preserved(self, rng):
        for _ in range(20):
            m = random_model(rng, (6, 7, 5), 3)
            n = normalize(m)
            np.testing.assert_allclose(reconstruct(n), reconstruct(m), atol=1e-10)
            np.testing.assert_allclose(np.linalg.norm(n.B, axis=0), 1.0)
            np.testing.assert_allclose(np.linalg.norm(n.C, axis=0), 1.0)

    def test_zero_column(self, rng):
        m = random_model(rng, (4, 7, 3), 2)
        B = m.B.copy()
        B[:, 0] = 0
        n = normalize(FactorModel(m.A, B, m.C))
        assert n.weights[0] == 0.0
        np.testing.assert_array_equal(n.B[:, 0], 0.0)


class TestAlign:
    def test_reversed(self, rng):
        ref = random_model(rng, (5, 7, 4), 3)
        other = ref.permute([2, 1, 0])
        perm, scores = align(ref, other)
        np.testing.assert_array_equal(perm, [2, 1, 0])
        np.testing.assert_allclose(scores, 1.0)

    def test_scaled_column(self, rng):
        ref = random_model(rng, (5, 7, 4), 3)
        A = ref.A.copy()
        A[:, 1] *= 3
        _, scores = align(ref, FactorModel(A, ref.B, ref.C))
        assert scores[1] == pytest.approx(1.0, abs=1e-12)

    def test_congruence_definition(self, rng):
        ref, other = random_model(rng, (5, 7, 4), 2), random_model(rng, (5, 7, 4), 2)
        S = congruence_matrix(ref, other)
        for r in range(2):
            for s in range(2):
                expected = np.prod([_cos(f[:, r], g[:, s]) for f, g in zip(ref.factors, other.factors)])
                assert S[r, s] == pytest.approx(expected, rel=1e-12)

    def test_matches_exhaustive_search(self, rng):
        for _ in range(30):
            ref, other = random_model(rng, (6, 7, 5), 3), random_model(rng, (6, 7, 5), 3)
            S = congruence_matrix(ref, other)
            best = max(sum(S[r, p[r]] for r in range(3)) for p in itertools.permutations(range(3)))
            perm, scores = align(ref, other)
            assert scores.sum() == pytest.approx(best, abs=1e-12)
            np.testing.assert_allclose(scores, S[np.arange(3), perm])
