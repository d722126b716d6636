import numpy as np
import pytest

from jldict.dictionary import (TrainConfig, _sweep, _top_left_singular, dictionary_size,
                               init_dictionary, ksvd_sweep, train)
from jldict.errors import InvalidArgument
from jldict.sparse import SparseCoderConfig, residual_error

from conftest import planted_dictionary


def sparse_codes(rng, K, N, k):
    X = np.zeros((K, N))
    for j in range(N):
        X[rng.choice(K, k, replace=False), j] = rng.standard_normal(k)
    return X


class TestSize:
    def test_values(self):
        assert dictionary_size(10, 28) == 280
        assert dictionary_size(1, 1) == 1

    def test_at_least_inputs(self):
        for a in range(1, 6):
            for b in range(1, 6):
                assert dictionary_size(a, b) >= max(a, b)

    @pytest.mark.parametrize("a, b", [(0, 3), (3, 0)])
    def test_zero(self, a, b):
        with pytest.raises(InvalidArgument):
            dictionary_size(a, b)


class TestInit:
    @pytest.mark.parametrize("p, K, seed", [(1, 1, 0), (5, 9, 3), (64, 256, 11)])
    def test_unit_norm(self, p, K, seed):
        D = init_dictionary(p, K, seed)
        np.testing.assert_allclose(np.linalg.norm(D, axis=0), 1.0, atol=1e-10)

    def test_deterministic(self):
        np.testing.assert_array_equal(init_dictionary(8, 20, 5), init_dictionary(8, 20, 5))
        assert not np.array_equal(init_dictionary(8, 20, 5), init_dictionary(8, 20, 6))

    def test_coherence(self):
        for seed in range(10):
            D = init_dictionary(64, 256, seed)
            G = np.abs(D.T @ D)
            np.fill_diagonal(G, 0.0)
            assert G.max() < 0.99

    def test_undercomplete(self):
        with pytest.raises(InvalidArgument):
            init_dictionary(10, 5, 0)
        assert init_dictionary(10, 5, 0, require_overcomplete=False).shape == (10, 5)


class TestSweep:
    def test_rank_one_exact(self, rng):
        u = rng.standard_normal(6)
        v = rng.standard_normal(9)
        Z = np.outer(u, v)
        D = init_dictionary(6, 1, 0, require_overcomplete=False)
        D2, X2 = ksvd_sweep(D, Z, np.ones((1, 9)))
        assert residual_error(Z, D2, X2) <= 1e-10 * np.sum(Z ** 2)

    def test_non_increasing(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            p, K, N = 8, 14, 40
            Z = rng.standard_normal((p, N))
            D = init_dictionary(p, K, seed)
            X = sparse_codes(rng, K, N, 3)
            before = residual_error(Z, D, X)
            D2, X2 = ksvd_sweep(D, Z, X)
            assert residual_error(Z, D2, X2) <= before * (1 + 1e-12)
            np.testing.assert_allclose(np.linalg.norm(D2, axis=0), 1.0, atol=1e-10)

    def test_supports_fixed(self, rng):
        Z = rng.standard_normal((6, 30))
        D = init_dictionary(6, 10, 1)
        X = sparse_codes(rng, 10, 30, 2)
        _, X2 = ksvd_sweep(D, Z, X)
        assert np.all((X2 != 0) <= (X != 0))

    def test_brute_force_rank_one(self):
        # unit u on a dense sphere grid, v = u^T E: the sweep's atom must do at least as well
        phi, theta = np.meshgrid(np.linspace(0, 2 * np.pi, 400), np.linspace(0, np.pi, 200))
        U = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi),
                      np.cos(theta)]).reshape(3, -1)
        for seed in range(10):
            rng = np.random.default_rng(seed)
            Z = rng.standard_normal((3, 3))
            D = init_dictionary(3, 1, seed, require_overcomplete=False)
            D2, X2 = ksvd_sweep(D, Z, np.ones((1, 3)))
            got = residual_error(Z, D2, X2)
            brute = np.min(np.sum(Z ** 2) - np.sum((U.T @ Z) ** 2, axis=1))
            assert got <= brute + 1e-12
            assert got == pytest.approx(brute, abs=1e-3 * np.sum(Z ** 2))

    def test_gram_path_matches_svd(self, rng):
        E = rng.standard_normal((5, 40))
        u, s = _top_left_singular(E)
        U, S, _ = np.linalg.svd(E)
        assert s == pytest.approx(S[0], rel=1e-12)
        assert abs(u @ U[:, 0]) == pytest.approx(1.0, abs=1e-12)

    def test_unused_atoms_replaced(self, rng):
        Z = rng.standard_normal((6, 20))
        D = init_dictionary(6, 8, 2)
        X = sparse_codes(rng, 8, 20, 2)
        X[[1, 4]] = 0.0
        unused_before = int(np.sum(~np.any(X != 0, axis=1)))
        D2, X2, replaced = _sweep(D, Z, X)
        unused_after = int(np.sum(~np.any(X2 != 0, axis=1)))
        assert replaced == 2 and unused_after < unused_before
        # the replacement atom is a normalized training column
        for j in (1, 4):
            col = np.flatnonzero(X2[j])[0]
            np.testing.assert_allclose(np.abs(D2[:, j]),
                                       np.abs(Z[:, col]) / np.linalg.norm(Z[:, col]), atol=1e-12)
        assert residual_error(Z, D2, X2) <= residual_error(Z, D, X)

    def test_shape_mismatch(self, rng):
        with pytest.raises(InvalidArgument):
            ksvd_sweep(init_dictionary(4, 6, 0), np.zeros((4, 5)), np.zeros((6, 4)))


class TestTrain:
    def test_planted_dictionary(self):
        Z, labels, _, _ = planted_dictionary(0)
        D, X, rep = train(Z, labels, TrainConfig(atoms_per_class=8))
        assert rep.loss_trajectory[-1] <= 1e-2 * np.sum(Z ** 2)
        assert rep.converged and rep.outer_iterations <= 30
        np.testing.assert_allclose(np.linalg.norm(D, axis=0), 1.0, atol=1e-10)
        assert D.shape == (16, 32) and X.shape == (32, 400)

    def test_trajectory_monotone(self):
        for seed in range(20):
            Z, labels, _, _ = planted_dictionary(seed, p=10, K=20, sparsity=3, N=120)
            _, _, rep = train(Z + 0.05 * np.random.default_rng(seed).standard_normal(Z.shape),
                              labels, TrainConfig(atoms_per_class=5, seed=seed))
            traj = np.array(rep.loss_trajectory)
            assert len(traj) == rep.outer_iterations
            assert np.all(traj[1:] <= traj[:-1] * (1 + 1e-8))

    def test_single_outer(self, rng):
        Z, labels, _, _ = planted_dictionary(1, N=80)
        _, _, rep = train(Z, labels, TrainConfig(atoms_per_class=8, max_outer=1))
        assert len(rep.loss_trajectory) == 1

    def test_replay(self):
        Z, labels, _, _ = planted_dictionary(2, N=100)
        cfg = TrainConfig(atoms_per_class=8, seed=4)
        a, b = train(Z, labels, cfg), train(Z, labels, cfg)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        assert a[2] == b[2]

    def test_undercomplete_warns(self, rng, caplog):
        Z = rng.standard_normal((12, 30))
        with caplog.at_level("WARNING"):
            D, _, _ = train(Z, np.arange(30) % 2, TrainConfig(atoms_per_class=3, max_outer=2))
        assert D.shape == (12, 6)
        assert "undercomplete" in caplog.text

    def test_bad_labels(self, rng):
        with pytest.raises(InvalidArgument):
            train(rng.standard_normal((4, 10)), np.zeros(9, int))

    def test_bad_config(self):
        with pytest.raises(InvalidArgument):
            TrainConfig(max_outer=0)
