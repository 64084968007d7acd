import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jointrt.laplacian import (
    QpError,
    QpWarmStart,
    check_laplacian,
    cholesky_factor,
    gram,
    laplacian_objective,
    qp_terms,
    reduce_to_weight_vector,
    solve_laplacian_qp,
)
from jointrt.model import ParameterError
from oracles import qp_active_set_enumeration, qp_data, qp_projected_gradient


def random_gram(rng, C, T=12):
    R = rng.uniform(0.2, 2.0, size=(C, T))
    return gram(R)


class TestGram:
    def test_examples(self, rng):
        assert not gram(np.zeros((3, 4))).any()
        row = rng.normal(size=6)
        g = gram(np.tile(row, (4, 1)))
        np.testing.assert_allclose(g, np.full((4, 4), row @ row), rtol=1e-14)
        R = rng.normal(size=(3, 5))
        ref = np.array([[sum(R[i, t] * R[j, t] for t in range(5)) for j in range(3)] for i in range(3)])
        np.testing.assert_allclose(gram(R), ref, atol=1e-12)

    @given(st.integers(1, 6), st.integers(1, 20), st.integers(0, 2**31 - 1))
    def test_psd_symmetric(self, C, T, seed):
        g = gram(np.random.default_rng(seed).normal(size=(C, T)))
        np.testing.assert_array_equal(g, g.T)
        assert np.linalg.eigvalsh(g).min() >= -1e-9 * max(1.0, np.abs(g).max())


class TestWeightMap:
    def test_small_cases(self):
        wm2 = reduce_to_weight_vector(2)
        assert wm2.n_edges == 1 and wm2.weight_sum == -1
        np.testing.assert_array_equal(wm2.to_laplacian([-1.0]), [[1, -1], [-1, 1]])
        wm3 = reduce_to_weight_vector(3)
        assert wm3.n_edges == 3 and wm3.weight_sum == -1.5
        with pytest.raises(ParameterError):
            reduce_to_weight_vector(1)

    @given(st.integers(2, 9), st.integers(0, 2**31 - 1))
    def test_feasible_weights_give_admissible_laplacians(self, C, seed):
        wm = reduce_to_weight_vector(C)
        x = np.random.default_rng(seed).dirichlet(np.ones(wm.n_edges)) * (C / 2)
        L = wm.to_laplacian(-x)
        assert check_laplacian(L) == []
        np.testing.assert_array_equal(wm.from_laplacian(L), -x)

    def test_qp_terms_match_objective(self, rng):
        g = random_gram(rng, 5)
        H, f, wm = qp_terms(g, 0.7, 0.3)
        Ho, fo = qp_data(g, 0.7, 0.3)
        np.testing.assert_allclose(H, Ho, atol=1e-9)
        np.testing.assert_allclose(f, fo, rtol=1e-9, atol=1e-9)
        x = rng.dirichlet(np.ones(wm.n_edges)) * 2.5
        L = wm.to_laplacian(-x)
        assert 0.5 * x @ H @ x + f @ x == pytest.approx(laplacian_objective(L, g, 0.7, 0.3), rel=1e-10)


class TestSolve:
    def test_two_vertices(self, rng):
        L, _ = solve_laplacian_qp(random_gram(rng, 2), 3.0, 0.1)
        np.testing.assert_allclose(L, [[1, -1], [-1, 1]], atol=1e-14)

    @pytest.mark.parametrize("C", [3, 5, 9])
    def test_no_smoothness_gives_complete_graph(self, rng, C):
        L, _ = solve_laplacian_qp(random_gram(rng, C), 0.0, 1.0)
        ref = np.full((C, C), -1 / (C - 1))
        np.fill_diagonal(ref, 1.0)
        np.testing.assert_allclose(L, ref, atol=1e-10)
        np.testing.assert_allclose(qp_projected_gradient(random_gram(rng, C), 0.0, 1.0, 100_000, 1e-15), ref, atol=1e-10)

    def test_three_vertices_enumeration(self, rng):
        R = rng.uniform(0.2, 2.0, size=(3, 10))
        g = gram(R)
        L, _ = solve_laplacian_qp(g, 1.0, 0.1)
        np.testing.assert_allclose(L, qp_active_set_enumeration(g, 1.0, 0.1), atol=1e-8)

    @pytest.mark.parametrize("C", [3, 4, 6, 9])
    def test_projected_gradient(self, rng, C):
        for _ in range(3):
            g = random_gram(rng, C)
            ls, ll = 10 ** rng.uniform(-2, 1), 10 ** rng.uniform(-2, 1)
            L, _ = solve_laplacian_qp(g, ls, ll)
            ref = qp_projected_gradient(g, ls, ll, 1_000_000, 1e-14)
            np.testing.assert_allclose(L, ref, atol=1e-8)

    def test_invariants_after_solve(self, rng):
        for C in (2, 3, 7, 12):
            L, warm = solve_laplacian_qp(random_gram(rng, C), 5.0, 0.05)
            assert check_laplacian(L) == []
            assert len(warm.weights) == C * (C - 1) // 2

    def test_warm_start_does_not_change_solution(self, rng):
        g1, g2 = random_gram(rng, 6), random_gram(rng, 6)
        cold, _ = solve_laplacian_qp(g2, 2.0, 0.3)
        _, w1 = solve_laplacian_qp(g1, 2.0, 0.3)
        warm, _ = solve_laplacian_qp(g2, 2.0, 0.3, warm=w1)
        np.testing.assert_allclose(warm, cold, atol=1e-8)
        junk = QpWarmStart(rng.normal(size=15), -3.0, rng.normal(size=15))
        other, _ = solve_laplacian_qp(g2, 2.0, 0.3, warm=junk)
        np.testing.assert_allclose(other, cold, atol=1e-8)

    def test_sparsity_increases_as_lambda_l_decreases(self, rng):
        g = random_gram(rng, 8, T=30)
        counts = []
        for ll in np.geomspace(100, 1e-3, 12):
            L, _ = solve_laplacian_qp(g, 1.0, ll)
            off = L[~np.eye(8, dtype=bool)]
            counts.append(int(np.sum(np.abs(off) > 1e-6)))
        assert all(b <= a for a, b in zip(counts, counts[1:]))
        assert counts[0] == 56 and counts[-1] < 56

    def test_two_clusters_separate(self, rng):
        a, b = rng.uniform(0.5, 2, size=20), rng.uniform(0.5, 2, size=20)
        R = np.vstack([a, a, a, b, b])
        L, _ = solve_laplacian_qp(gram(R), 1.0, 0.01)
        cross = L[:3, 3:]
        assert np.abs(cross).max() <= 1e-8
        assert np.all(L[:3, :3][~np.eye(3, dtype=bool)] < -1e-3)

    def test_errors(self, rng):
        with pytest.raises(ParameterError):
            solve_laplacian_qp(np.ones((1, 1)), 1.0, 1.0)
        with pytest.raises(ParameterError):
            solve_laplacian_qp(random_gram(rng, 3), 1.0, 0.0)
        with pytest.raises(ParameterError):
            solve_laplacian_qp(random_gram(rng, 3), -1.0, 1.0)

    def test_error_carries_iterate(self):
        err = QpError("x", weights=np.ones(3), residuals={"gap": 1.0})
        assert err.weights.shape == (3,) and err.residuals["gap"] == 1.0


class TestCholesky:
    def test_two_vertices(self):
        L = np.array([[1.0, -1.0], [-1.0, 1.0]])
        B = cholesky_factor(L)
        assert np.linalg.norm(B.T @ B - L) / np.linalg.norm(L) <= 1e-8

    def test_complete_graph(self):
        L = np.full((4, 4), -1 / 3)
        np.fill_diagonal(L, 1.0)
        B = cholesky_factor(L)
        assert np.linalg.norm(B.T @ B - L) <= 1e-8

    def test_jitter_bound(self, rng):
        L, _ = solve_laplacian_qp(random_gram(rng, 6), 1.0, 0.1)
        B = cholesky_factor(L)
        R = rng.normal(size=(6, 30))
        eps = 1e-12 * np.trace(L) / 6
        direct = np.einsum("it,ij,jt->", R, L, R)
        assert abs(np.sum((B @ R) ** 2) - direct) <= eps * np.sum(R**2) * (1 + 1e-6) + 1e-12

    def test_disconnected_graph(self):
        from jointrt.synthetic import ClusterSpec, cluster_laplacian

        L = cluster_laplacian(ClusterSpec.equal(9, 3))
        B = cholesky_factor(L)
        assert np.linalg.norm(B.T @ B - L) / np.linalg.norm(L) <= 1e-8
