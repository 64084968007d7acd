import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from jointrt.model import (
    CountMatrix,
    ParameterError,
    ScaleParams,
    data_fidelity,
    infeasible_cells,
    infectiousness,
    kl_term,
    omega_heuristic,
    serial_interval_weights,
)
from oracles import convolution_oracle, kl_scalar


class TestSerialInterval:
    def test_default_shape(self):
        si = serial_interval_weights(6.6, 3.5, 25)
        w = si.weights
        assert si.truncation == 25 == len(w)
        assert np.all(w >= 0)
        assert abs(w.sum() - 1) <= 1e-12
        mode = int(np.argmax(w)) + 1
        assert 4 <= mode <= 6
        # unimodal: increasing then decreasing
        d = np.sign(np.diff(w))
        assert np.all(d[: mode - 1] > 0) and np.all(d[mode - 1 :] < 0)

    def test_moment_matching(self):
        si = serial_interval_weights(6.6, 3.5, 25)
        assert si.shape == pytest.approx((6.6 / 3.5) ** 2, rel=1e-12)
        assert si.shape == pytest.approx(3.5559, abs=1e-4)
        assert si.scale == pytest.approx(1.8561, abs=1e-4)

    def test_matches_quadrature_of_density(self):
        si = serial_interval_weights(6.6, 3.5, 25)
        dist = stats.gamma(si.shape, scale=si.scale)
        mass = np.array([integrate.quad(dist.pdf, s - 1, s, epsabs=1e-14)[0] for s in range(1, 26)])
        np.testing.assert_allclose(si.weights, mass / mass.sum(), rtol=1e-9, atol=1e-14)

    def test_point_mass(self):
        w = serial_interval_weights(0.5, 1e-6, 5).weights
        np.testing.assert_allclose(w, [1, 0, 0, 0, 0], atol=1e-12)
        # a point mass sitting on the boundary s = 1 splits between (0, 1] and (1, 2]
        w = serial_interval_weights(1.0, 1e-6, 5).weights
        np.testing.assert_allclose(w, [0.5, 0.5, 0, 0, 0], atol=1e-3)

    def test_truncation_extension_invariance(self):
        si = serial_interval_weights(6.6, 3.5, 25)
        n = int(stats.gamma(si.shape, scale=si.scale).isf(1e-12)) + 1
        short = serial_interval_weights(6.6, 3.5, n).weights
        long = serial_interval_weights(6.6, 3.5, n + 40).weights
        assert long[n:].sum() < 1e-12
        np.testing.assert_allclose(long[:n] / long[:n].sum(), short, atol=1e-9)

    @pytest.mark.parametrize("args", [(0, 1, 5), (1, 0, 5), (1, 1, 0), (-1, 1, 5), (1, 1, 2.5)])
    def test_invalid(self, args):
        with pytest.raises(ParameterError):
            serial_interval_weights(*args)


class TestInfectiousness:
    def test_zero(self):
        si = serial_interval_weights()
        assert not infectiousness(np.zeros((2, 40)), si).any()

    def test_impulse_response(self):
        si = serial_interval_weights()
        Z = np.zeros((1, 40))
        Z[0, 0] = 1
        phi_z = infectiousness(Z, si)
        assert phi_z[0, 0] == 0
        np.testing.assert_allclose(phi_z[0, 1:26], si.weights, atol=1e-15)
        assert not phi_z[0, 26:].any()

    def test_loop_oracle(self, rng):
        si = serial_interval_weights()
        Z = rng.poisson(50, size=(2, 30)).astype(float)
        np.testing.assert_allclose(infectiousness(Z, si), convolution_oracle(Z, si.weights), atol=1e-12)

    def test_history_oracle(self, rng):
        si = serial_interval_weights()
        Z = rng.poisson(50, size=(3, 20)).astype(float)
        hist = rng.poisson(30, size=(3, 25)).astype(float)
        np.testing.assert_allclose(
            infectiousness(Z, si, history=hist), convolution_oracle(Z, si.weights, hist), atol=1e-12
        )

    @given(st.integers(0, 29), st.floats(0.1, 1e3))
    def test_causal(self, t0, bump):
        si = serial_interval_weights()
        Z = np.arange(60, dtype=float).reshape(2, 30)
        Z2 = Z.copy()
        Z2[1, t0] += bump
        a, b = infectiousness(Z, si), infectiousness(Z2, si)
        np.testing.assert_array_equal(a[:, : t0 + 1], b[:, : t0 + 1])
        np.testing.assert_array_equal(a[0], b[0])

    def test_nonnegative(self, rng):
        Z = rng.exponential(10, size=(4, 50))
        assert np.all(infectiousness(Z, serial_interval_weights()) >= 0)


class TestKL:
    def test_examples(self):
        assert kl_term(5.0, 5.0) == 0
        assert kl_term(0.0, 3.2) == 3.2
        assert kl_term(2.0, 1.0) == pytest.approx(2 * math.log(2) - 1, abs=1e-15)
        assert kl_term(2.0, 1.0) == pytest.approx(0.386294, abs=1e-6)
        assert kl_term(0.0, 0.0) == 0
        assert kl_term(1.0, 0.0) == math.inf
        assert kl_term(-1.0, 1.0) == math.inf
        assert kl_term(1.0, -1.0) == math.inf
        assert kl_term(0.0, -1.0) == math.inf
        assert isinstance(kl_term(1.0, 2.0), float)

    @given(st.floats(0, 1e4), st.floats(0, 1e4))
    def test_nonnegative_zero_iff_equal(self, z, p):
        v = kl_term(z, p)
        assert v >= 0
        if v == 0:
            assert z == pytest.approx(p, rel=1e-6, abs=1e-300)

    def test_grid_zero_only_on_diagonal(self):
        vals = np.linspace(0, 5, 21)
        zz, pp = np.meshgrid(vals, vals)
        out = kl_term(zz, pp)
        finite = np.isfinite(out)
        assert np.all(out[finite] >= 0)
        np.testing.assert_array_equal(out == 0, zz == pp)

    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_convex_in_p(self, z, p1, p2):
        mid = kl_term(z, 0.5 * (p1 + p2))
        assert mid <= 0.5 * (kl_term(z, p1) + kl_term(z, p2)) + 1e-9 * (1 + abs(mid))

    def test_fidelity_examples(self, rng):
        si = serial_interval_weights()
        Z = rng.poisson(40, size=(3, 40)).astype(float) + 1
        phi_z = infectiousness(Z, si, history=np.full((3, 25), 40.0))
        R = Z / phi_z
        assert data_fidelity(Z, R, phi_z, np.ones(3)) == pytest.approx(0, abs=1e-10)
        one = data_fidelity(np.array([[2.0]]), np.array([[1.0]]), np.array([[1.0]]), np.array([2.0]))
        assert one == pytest.approx(0.772588, abs=1e-6)

    def test_fidelity_loop_oracle(self, rng):
        Z = rng.poisson(5, size=(3, 20)).astype(float)
        R = rng.uniform(0.2, 2, size=(3, 20))
        phi_z = rng.uniform(1, 10, size=(3, 20))
        omega = rng.uniform(0.1, 2, size=3)
        ref = sum(omega[c] * kl_scalar(Z[c, t], R[c, t] * phi_z[c, t]) for c in range(3) for t in range(20))
        assert data_fidelity(Z, R, phi_z, omega) == pytest.approx(ref, rel=1e-12)

    def test_fidelity_infinite_and_mask(self):
        Z = np.array([[1.0, 2.0]])
        phi_z = np.array([[0.0, 1.0]])
        R = np.ones((1, 2))
        assert data_fidelity(Z, R, phi_z, [1.0]) == math.inf
        mask = ~infeasible_cells(Z, phi_z)
        assert data_fidelity(Z, R, phi_z, [1.0], mask=mask) == pytest.approx(kl_scalar(2, 1))


class TestTypes:
    def test_count_matrix_validation(self):
        with pytest.raises(ParameterError):
            CountMatrix(np.array([[1.0, -1.0]]))
        with pytest.raises(ParameterError):
            CountMatrix(np.ones((2, 3)), ["a"], [0, 1, 2])
        cm = CountMatrix(np.ones((2, 3)))
        assert len(cm.territory_ids) == 2 and len(cm.dates) == 3

    def test_scale_params(self):
        with pytest.raises(ParameterError):
            ScaleParams(np.array([1.0, 0.0]), np.ones(2))

    def test_omega_heuristic(self):
        Z = np.vstack([np.full(10, 5.0), np.arange(10.0) * 3])
        om = omega_heuristic(Z)
        assert om[0] == 1.0
        assert om[1] == pytest.approx(1 / np.std(Z[1]))
