import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatterloc.nmf import (
    Activations,
    Dictionary,
    MixingMatrix,
    SolverConfig,
    SolverError,
    beta_divergence,
    build_mixing_matrix,
    factorize,
    learn_dictionary,
    mu_step,
    objective,
)
from scatterloc.scatter import DirectionalResponseSet

EUC = SolverConfig("euclidean")
IS = SolverConfig("itakura_saito")


def random_problem(rng, F=6, K=2, D=3, N=4, scale=1.0):
    A = MixingMatrix(rng.uniform(0.05, 1.0, (F, K * D)), K, D)
    X = rng.uniform(0.05, 1.0, (K * D, N))
    Y = rng.uniform(0.05, 1.0, (F, N)) * scale
    return A, X, Y


def loop_objective(Y, A, X, K, D, div, lam, gamma, eps_group=1e-12):
    """Scalar-loop evaluation of the penalized cost."""
    F, N = Y.shape
    data = 0.0
    for f in range(F):
        for n in range(N):
            v_hat = 0.0
            for c in range(K * D):
                v_hat += A[f, c] * X[c, n]
            v = Y[f, n]
            data += 0.5 * (v - v_hat) ** 2 if div == "euclidean" else v / v_hat - np.log(v / v_hat) - 1
    group = 0.0
    total = 0.0
    for d in range(D):
        s = 0.0
        for c in range(d * K, (d + 1) * K):
            for n in range(N):
                s += X[c, n]
        group += np.log(eps_group + s)
        total += s
    return data + lam * group + gamma * total


def loop_mixing(mags, W):
    D, F = mags.shape
    K = W.shape[1]
    out = np.zeros((F, K * D))
    for d in range(D):
        for f in range(F):
            for k in range(K):
                out[f, d * K + k] = mags[d, f] * W[f, k]
    return out


class TestDivergence:
    def test_identity(self):
        V = np.array([[0.3, 2.0]])
        assert beta_divergence(V, V, "itakura_saito") == 0.0

    def test_is_value(self):
        assert beta_divergence([[1.0]], [[np.e]], "itakura_saito") == pytest.approx(np.exp(-1), rel=1e-12)

    def test_euclidean_value(self):
        assert beta_divergence([[1.0, 2.0]], [[0.0, 0.0]], "euclidean") == 2.5

    def test_is_scale_invariance(self):
        rng = np.random.default_rng(0)
        V, V_hat = rng.uniform(0.1, 2, (5, 7)), rng.uniform(0.1, 2, (5, 7))
        a = beta_divergence(V, V_hat, "itakura_saito")
        b = beta_divergence(7.3 * V, 7.3 * V_hat, "itakura_saito")
        assert abs(a - b) <= 1e-12 * a

    def test_is_zero_model_rejected(self):
        with pytest.raises(ValueError):
            beta_divergence([[1.0]], [[0.0]], "itakura_saito")

    def test_unknown(self):
        with pytest.raises(ValueError):
            beta_divergence([[1.0]], [[1.0]], "kl")


class TestObjective:
    @pytest.mark.parametrize("div", ["euclidean", "itakura_saito"])
    def test_matches_loop_oracle(self, div):
        rng = np.random.default_rng(1)
        A, X, Y = random_problem(rng)
        cfg = SolverConfig(div, lam=0.7, gamma=0.2)
        ref = loop_objective(Y, A.values, X, 2, 3, div, 0.7, 0.2)
        assert objective(Y, A, X, cfg) == pytest.approx(ref, rel=1e-10)

    def test_exact_fit_is_zero(self):
        rng = np.random.default_rng(2)
        A, X, _ = random_problem(rng)
        assert objective(A.values @ X, A, X, EUC) == 0.0
        assert objective(A.values @ X, A, X, IS) == pytest.approx(0.0, abs=1e-10)

    def test_zero_activations(self):
        rng = np.random.default_rng(3)
        A, X, Y = random_problem(rng)
        assert objective(Y, A, np.zeros_like(X), EUC) == pytest.approx(0.5 * np.sum(Y**2))

    def test_shape_mismatch(self):
        rng = np.random.default_rng(4)
        A, X, Y = random_problem(rng)
        with pytest.raises(ValueError):
            objective(Y[:-1], A, X, EUC)


class TestUpdate:
    def test_single_entry_example(self):
        A = MixingMatrix(np.array([[2.0]]), 1, 1)
        assert mu_step(np.array([[1.0]]), A, np.array([[4.0]]), EUC)[0, 0] == 2.0

    def test_single_entry_is(self):
        # sqrt((2 * 4 / 2**2) / (2 / 2)) by hand
        A = MixingMatrix(np.array([[2.0]]), 1, 1)
        assert mu_step(np.array([[1.0]]), A, np.array([[4.0]]), IS)[0, 0] == pytest.approx(np.sqrt(2.0), rel=1e-15)

    @pytest.mark.parametrize("cfg", [EUC, IS])
    def test_exact_fit_is_fixed_point(self, cfg):
        rng = np.random.default_rng(5)
        A, X, _ = random_problem(rng)
        np.testing.assert_allclose(mu_step(X, A, A.values @ X, cfg), X, rtol=1e-12)

    @pytest.mark.parametrize("cfg", [EUC, IS, SolverConfig("euclidean", 1.0, 0.5), SolverConfig("itakura_saito", 1.0, 0.5)])
    def test_zero_entries_absorbing(self, cfg):
        rng = np.random.default_rng(6)
        A, X, Y = random_problem(rng)
        X[1, 2] = X[4, 0] = 0.0
        Xn = mu_step(X, A, Y, cfg)
        assert Xn[1, 2] == 0.0 and Xn[4, 0] == 0.0

    @settings(max_examples=200, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        div=st.sampled_from(["euclidean", "itakura_saito"]),
        lam=st.sampled_from([0.0, 0.1, 10.0, 1e4]),
        gamma=st.sampled_from([0.0, 0.1, 10.0, 1e4]),
        log_scale=st.floats(-6, 6),
    )
    def test_nonnegativity_fuzz(self, seed, div, lam, gamma, log_scale):
        rng = np.random.default_rng(seed)
        A, X, Y = random_problem(rng, scale=10.0**log_scale)
        X[rng.uniform(size=X.shape) < 0.2] = 0.0
        Xn = mu_step(X, A, Y, SolverConfig(div, lam, gamma))
        assert np.all(Xn >= 0) and np.all(np.isfinite(Xn))

    def test_euclidean_monotone(self):
        for seed in range(30):
            rng = np.random.default_rng(seed)
            A, _, Y = random_problem(rng, F=10, K=3, D=4, N=5)
            X = factorize(Y, A, SolverConfig("euclidean", iters=50))
            tr = X.objective_trace
            assert np.all(tr[1:] <= tr[:-1] * (1 + 1e-9))

    def test_penalized_final_below_initial(self):
        ok = 0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            A, _, Y = random_problem(rng)
            div = ("euclidean", "itakura_saito")[seed % 2]
            tr = factorize(Y, A, SolverConfig(div, lam=0.5, gamma=0.1, iters=50)).objective_trace
            ok += tr[-1] <= tr[0]
        assert ok >= 190

    def test_solver_error_on_overflow(self):
        A = MixingMatrix(np.array([[1.0]]), 1, 1)
        with pytest.raises(SolverError):
            mu_step(np.array([[1e-308]]), A, np.array([[1e308]]), IS)


class TestFactorize:
    def test_recovers_true_group(self):
        rng = np.random.default_rng(7)
        F, K, D, N = 8, 2, 3, 6
        A = MixingMatrix(rng.uniform(0.1, 1.0, (F, K * D)), K, D)
        X_true = np.zeros((K * D, N))
        X_true[2 + rng.integers(0, 2, N), np.arange(N)] = rng.uniform(0.5, 2.0, N)
        for cfg in (EUC, IS):
            X = factorize(A.values @ X_true, A, SolverConfig(cfg.divergence, iters=500))
            energy = X.values.reshape(D, -1).sum(axis=1)
            assert energy[1] / energy.sum() >= 0.9

    def test_zero_observation_collapses(self):
        rng = np.random.default_rng(8)
        A, _, Y = random_problem(rng)
        X = factorize(np.zeros_like(Y), A, EUC)
        assert X.values.max() < 1e-10

    def test_trace_length_and_init(self):
        rng = np.random.default_rng(9)
        A, _, Y = random_problem(rng)
        X = factorize(Y, A, SolverConfig("euclidean", iters=7))
        assert X.objective_trace.size == 8
        assert X.objective_trace[0] == pytest.approx(objective(Y, A, A.values.T @ Y, EUC))

    def test_random_init_reproducible(self):
        rng = np.random.default_rng(10)
        A, _, Y = random_problem(rng)
        a = factorize(Y, A, IS, init="random", seed=3)
        b = factorize(Y, A, IS, init="random", seed=3)
        np.testing.assert_array_equal(a.values, b.values)

    def test_bad_inputs(self):
        rng = np.random.default_rng(11)
        A, _, Y = random_problem(rng)
        with pytest.raises(ValueError):
            factorize(-Y, A, EUC)
        with pytest.raises(ValueError):
            factorize(Y, A, EUC, init="zeros")
        with pytest.raises(ValueError):
            factorize(Y, A, EUC, init=-np.ones((6, 4)))

    @pytest.mark.parametrize("div", ["euclidean", "itakura_saito"])
    def test_parallel_bit_identical(self, div):
        rng = np.random.default_rng(12)
        A, _, Y = random_problem(rng, F=30, K=4, D=5, N=23)
        cfg = SolverConfig(div, lam=0.3, gamma=0.1, iters=20)
        ref = factorize(Y, A, cfg, column_block=4, n_jobs=1)
        for jobs in (2, 3, 8):
            out = factorize(Y, A, cfg, column_block=4, n_jobs=jobs)
            np.testing.assert_array_equal(out.values, ref.values)
            np.testing.assert_array_equal(out.objective_trace, ref.objective_trace)

    def test_blocked_close_to_unblocked(self):
        rng = np.random.default_rng(13)
        A, _, Y = random_problem(rng, F=30, K=4, D=5, N=23)
        cfg = SolverConfig("itakura_saito", iters=20)
        np.testing.assert_allclose(
            factorize(Y, A, cfg, column_block=5).values, factorize(Y, A, cfg).values, rtol=1e-9
        )

    def test_group_permutation_equivariance(self):
        rng = np.random.default_rng(14)
        K, D = 2, 4
        A, _, Y = random_problem(rng, F=12, K=K, D=D, N=5)
        perm = np.array([2, 0, 3, 1])
        cols = np.concatenate([np.arange(d * K, (d + 1) * K) for d in perm])
        Ap = MixingMatrix(A.values[:, cols], K, D)
        e = factorize(Y, A, IS).group_l1()
        ep = factorize(Y, Ap, IS).group_l1()
        np.testing.assert_allclose(ep, e[perm], rtol=1e-10)


class TestMixingMatrix:
    def test_loop_oracle(self):
        rng = np.random.default_rng(15)
        mags = rng.uniform(size=(3, 5))
        W = rng.uniform(size=(5, 2))
        rs = DirectionalResponseSet([0.0, 120.0, 240.0], mags, np.arange(5.0), 8, 8)
        A = build_mixing_matrix(rs, Dictionary(W))
        np.testing.assert_array_equal(A.values, loop_mixing(mags, W))
        np.testing.assert_array_equal(A.group_of_column, [0, 0, 1, 1, 2, 2])

    def test_unit_response_gives_w(self):
        W = np.random.default_rng(16).uniform(size=(4, 3))
        rs = DirectionalResponseSet([0.0, 90.0], np.ones((2, 4)), np.arange(4.0), 6, 6)
        A = build_mixing_matrix(rs, Dictionary(W))
        np.testing.assert_array_equal(A.values[:, 3:], W)

    def test_grid_mismatch(self):
        rs = DirectionalResponseSet([0.0], np.ones((1, 4)), np.arange(4.0), 6, 6)
        with pytest.raises(ValueError):
            build_mixing_matrix(rs, Dictionary(np.ones((5, 1))))
        with pytest.raises(ValueError):
            build_mixing_matrix(rs, Dictionary(np.ones((4, 1)), freq_axis=np.arange(4.0) + 1))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            MixingMatrix(-np.ones((2, 2)), 1, 2)
        with pytest.raises(ValueError):
            MixingMatrix(np.ones((2, 3)), 2, 2)


class TestDictionary:
    def test_validation(self):
        with pytest.raises(ValueError):
            Dictionary(np.array([[1.0, 0.0], [1.0, 0.0]]))
        with pytest.raises(ValueError):
            Dictionary(-np.ones((2, 2)))

    def test_restrict(self):
        W = Dictionary(np.arange(1.0, 7.0).reshape(3, 2), freq_axis=[0.0, 10.0, 20.0])
        np.testing.assert_array_equal(W.restrict([10.0, 20.0]).atoms, [[3, 4], [5, 6]])
        with pytest.raises(ValueError):
            W.restrict([15.0])

    def test_learned_atoms(self):
        rng = np.random.default_rng(17)
        data = [(f"s{i % 3}", rng.uniform(size=(12, 20))) for i in range(6)]
        W = learn_dictionary(data, 4, "itakura_saito", iters=30, seed=1)
        assert W.atoms.shape == (12, 12)
        assert np.all(W.atoms >= 0)
        np.testing.assert_allclose(np.linalg.norm(W.atoms, axis=0), 1.0, rtol=1e-12)
        assert W.atom_meta[:4] == ("s0",) * 4 and W.atom_meta[4] == "s1"

    def test_many_speakers(self):
        rng = np.random.default_rng(18)
        data = [(i, rng.uniform(size=(6, 5))) for i in range(50)]
        assert learn_dictionary(data, 10, "euclidean", iters=5).n_atoms == 500

    def test_rank_one_bound(self):
        rng = np.random.default_rng(19)
        V = np.outer(rng.uniform(1, 2, 15), rng.uniform(1, 2, 25)) + 0.1 * rng.uniform(size=(15, 25))
        W = learn_dictionary([("a", V)], 1, "euclidean", iters=300).atoms
        H = np.maximum(W.T @ V, 0)
        u, s, vt = np.linalg.svd(V)
        svd1 = np.maximum(s[0] * np.outer(u[:, 0], vt[0]), 0)
        assert np.linalg.norm(V - W @ H) <= np.linalg.norm(V - svd1) * (1 + 1e-6)

    def test_seeded(self):
        rng = np.random.default_rng(20)
        data = [("a", rng.uniform(size=(8, 10)))]
        a = learn_dictionary(data, 2, iters=10, seed=4).atoms
        np.testing.assert_array_equal(a, learn_dictionary(data, 2, iters=10, seed=4).atoms)

    def test_errors(self):
        with pytest.raises(ValueError):
            learn_dictionary([], 2)
        with pytest.raises(ValueError):
            learn_dictionary([("a", np.zeros((4, 4)))], 1)


def test_activations_groups():
    X = Activations(np.arange(12.0).reshape(6, 2), 2, 3)
    np.testing.assert_array_equal(X.group(1), [[4, 5], [6, 7]])
    np.testing.assert_array_equal(X.group_l1(), [6, 22, 38])
