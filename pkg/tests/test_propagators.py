import math

import numpy as np
import pytest
import scipy.linalg

from sthawkes import (
    NoConvergenceError,
    NonFiniteError,
    expm,
    propagators_at,
    spectral_radius,
)
from conftest import random_instance


def _series_expm(M, terms=60):
    # convergent power series oracle (well-conditioned inputs only)
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


class TestExpm:
    def test_zero_matrix(self):
        assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))

    def test_nilpotent(self):
        out = expm(np.array([[0.0, 1.0], [0.0, 0.0]]))
        assert out == pytest.approx(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_scalar(self):
        assert expm(np.array([[1.0]]))[0, 0] == pytest.approx(math.e, rel=1e-12)

    def test_against_power_series(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 7))
            M = rng.normal(scale=0.8, size=(n, n))
            ref = _series_expm(M)
            got = expm(M)
            rel = np.abs(got - ref) / (np.abs(ref) + 1e-12)
            assert rel.max() < 1e-10

    def test_against_scipy_large_norm(self, rng):
        for scale in (1.0, 10.0, 80.0):
            M = rng.normal(scale=scale, size=(6, 6))
            ref = scipy.linalg.expm(M)
            got = expm(M)
            assert np.allclose(got, ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())

    def test_nonfinite_rejected(self):
        with pytest.raises(NonFiniteError):
            expm(np.array([[np.nan, 0.0], [0.0, 0.0]]))
        with pytest.raises(NonFiniteError):
            expm(np.array([[np.inf]]))


class TestSpectralRadius:
    def test_identity(self):
        for n in (1, 3, 10):
            assert spectral_radius(np.eye(n)) == pytest.approx(1.0)

    def test_nilpotent(self):
        assert spectral_radius(np.array([[0.0, 2.0], [0.0, 0.0]])) == pytest.approx(0.0)

    def test_matches_dense_eigensolver(self, rng):
        for _ in range(20):
            A = rng.random((10, 10))
            ref = np.max(np.abs(np.linalg.eigvals(A)))
            assert spectral_radius(A) == pytest.approx(ref, rel=1e-8)

    def test_general_matrix_negative_dominant(self):
        A = np.array([[-3.0, 0.0], [0.0, 1.0]])
        assert spectral_radius(A) == pytest.approx(3.0, rel=1e-8)

    def test_rotating_spectrum_raises(self):
        # complex pair with no real dominant eigenvalue: est never settles
        A = np.array([[1.0, -2.0], [2.0, 1.0]])
        with pytest.raises(NoConvergenceError):
            spectral_radius(A, max_iters=500)


class TestPropagators:
    def test_initial_conditions(self, rng):
        vp = random_instance(rng, 4)
        props = propagators_at(vp, 0.0)
        assert props.psi_t == pytest.approx(np.eye(4), abs=1e-14)
        assert props.xi_t == pytest.approx(np.eye(4), abs=1e-14)
        assert props.upsilon_t == pytest.approx(np.zeros((4, 4)), abs=1e-14)
        assert props.gamma_t == pytest.approx(np.zeros((4, 4)), abs=1e-14)

    def test_scalar_no_triggering(self):
        from sthawkes import NetworkParams, SingleGaussian, validate

        vp = validate(NetworkParams(1, SingleGaussian([0.03], 0.25), [[0.0]], 0.2, 0.1))
        props = propagators_at(vp, 5.0)
        assert props.psi_t[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert props.xi_t[0, 0] == pytest.approx(math.exp(-1.0), rel=1e-12)
        assert props.upsilon_t[0, 0] == pytest.approx((1 - math.exp(-1.0)) / 0.2, rel=1e-12)
        assert props.gamma_t[0, 0] == pytest.approx(5.0, rel=1e-12)

    def test_scalar_closed_form(self):
        from sthawkes import NetworkParams, SingleGaussian, validate

        vp = validate(NetworkParams(1, SingleGaussian([0.03], 0.25), [[0.1]], 0.2, 0.1))
        props = propagators_at(vp, 1.0)
        expected = 1 + (0.1 / -0.1) * (math.exp(-0.1) - 1)
        assert props.psi_t[0, 0] == pytest.approx(expected, abs=1e-9)

    def test_time_derivative_identities(self, rng):
        # d/dt Gamma = Psi and d/dt Upsilon = Xi by central differences
        h = 1e-5
        for _ in range(5):
            vp = random_instance(rng, int(rng.integers(2, 11)))
            t = float(rng.uniform(0.5, 8.0))
            plus = propagators_at(vp, t + h)
            minus = propagators_at(vp, t - h)
            mid = propagators_at(vp, t)
            dgamma = (plus.gamma_t - minus.gamma_t) / (2 * h)
            dupsilon = (plus.upsilon_t - minus.upsilon_t) / (2 * h)
            assert np.max(np.abs(dgamma - mid.psi_t)) < 1e-6
            assert np.max(np.abs(dupsilon - mid.xi_t)) < 1e-6

    def test_upsilon_matches_inverse_formula(self, rng):
        for _ in range(10):
            vp = random_instance(rng, int(rng.integers(2, 9)))
            t = float(rng.uniform(0.1, 10.0))
            M = vp.A - vp.omega * np.eye(vp.n)
            ref = np.linalg.solve(M, scipy.linalg.expm(M * t) - np.eye(vp.n))
            got = propagators_at(vp, t).upsilon_t
            assert np.max(np.abs(got - ref)) < 1e-8

    def test_works_when_omega_is_eigenvalue(self):
        # the inverse-based formula is singular here; the block form is not
        from sthawkes import NetworkParams, SingleGaussian, validate

        vp = validate(
            NetworkParams(2, SingleGaussian([0.1, 0.1], 0.25), [[0.1, 0.0], [0.0, 0.05]], 0.1000000001, 0.1)
        )
        props = propagators_at(vp, 3.0)
        assert np.all(np.isfinite(props.upsilon_t))
        # Upsilon for the near-singular node is ~ t (integral of e^{~0 s})
        assert props.upsilon_t[0, 0] == pytest.approx(3.0, rel=1e-4)

    def test_semigroup(self, rng):
        for _ in range(5):
            vp = random_instance(rng, 5)
            s, t = float(rng.uniform(0.1, 4)), float(rng.uniform(0.1, 4))
            a = propagators_at(vp, s).xi_t
            b = propagators_at(vp, t).xi_t
            c = propagators_at(vp, s + t).xi_t
            assert np.max(np.abs(a @ b - c)) < 1e-8

    def test_entrywise_nonnegativity(self, rng):
        for _ in range(10):
            vp = random_instance(rng, int(rng.integers(1, 8)))
            t = float(rng.uniform(0.0, 15.0))
            props = propagators_at(vp, t)
            assert np.all(props.xi_t >= -1e-12)
            assert np.all(props.psi_t >= -1e-12)
            assert np.all(props.upsilon_t >= -1e-12)
            assert np.all(props.gamma_t >= -1e-12)

    def test_negative_time_rejected(self, rng):
        vp = random_instance(rng, 2)
        with pytest.raises(ValueError):
            propagators_at(vp, -0.1)
