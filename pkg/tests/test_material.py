import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tetherfem.material import (DefGrad, MaterialModel, PENALTY_NONE,
                                PENALTY_POLYNOMIAL, angular_average_energy,
                                coercivity_margin, coercivity_scan, cof2,
                                fiber_energy, penalty, penalty_dF,
                                penalty_with_flag, strain_energy,
                                strain_energy_dF)

SQRT2 = math.sqrt(2.0)


def rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


class TestStrainEnergy:
    def test_identity_is_well(self):
        assert strain_energy(np.eye(2)) == pytest.approx(0.0, abs=1e-15)

    def test_zero_matrix(self):
        assert strain_energy(np.zeros((2, 2))) == pytest.approx(1 / 12)

    def test_diag_sqrt2(self):
        F = np.diag([SQRT2, SQRT2])
        assert strain_energy(F) == pytest.approx(5 / 12, rel=1e-13)

    def test_defgrad_wrapper(self):
        d = DefGrad(np.diag([2.0, 0.5]))
        assert d.I1 == pytest.approx(4.25)
        assert d.J == pytest.approx(1.0)
        assert strain_energy(d) == pytest.approx(
            strain_energy(np.diag([2.0, 0.5])))

    @given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2),
           st.floats(-2, 2), st.floats(0, 2 * math.pi))
    @settings(max_examples=200, deadline=None)
    def test_frame_indifference_and_isotropy(self, a, b, c, d, th):
        F = np.array([[a, b], [c, d]])
        Q = rot(th)
        w = strain_energy(F)
        assert strain_energy(Q @ F) == pytest.approx(w, abs=1e-12 * (1 + abs(w)))
        assert strain_energy(F @ Q) == pytest.approx(w, abs=1e-12 * (1 + abs(w)))


class TestStrainEnergyDerivative:
    def test_zero_at_identity(self):
        assert np.allclose(strain_energy_dF(np.eye(2)), 0.0, atol=1e-14)

    def test_zero_at_zero(self):
        assert np.allclose(strain_energy_dF(np.zeros((2, 2))), 0.0)

    def test_finite_difference(self):
        rng = np.random.default_rng(7)
        h = 1e-5
        checked = 0
        while checked < 100:
            F = rng.uniform(-2, 2, (2, 2))
            if abs(np.linalg.det(F)) <= 1e-3:
                continue
            checked += 1
            D = strain_energy_dF(F)
            for i in range(2):
                for j in range(2):
                    E = np.zeros((2, 2))
                    E[i, j] = h
                    fd = (strain_energy(F + E) - strain_energy(F - E)) / (2 * h)
                    assert fd == pytest.approx(D[i, j],
                                               rel=1e-6, abs=1e-8)

    def test_cofactor_is_det_derivative(self):
        rng = np.random.default_rng(8)
        F = rng.standard_normal((2, 2))
        h = 1e-7
        C = cof2(F)
        for i in range(2):
            for j in range(2):
                E = np.zeros((2, 2))
                E[i, j] = h
                fd = (np.linalg.det(F + E) - np.linalg.det(F - E)) / (2 * h)
                assert fd == pytest.approx(C[i, j], rel=1e-6, abs=1e-9)


class TestPenalty:
    def test_exponential_values(self):
        m = MaterialModel()
        assert penalty(np.diag([1.0, 0.21]), m) == pytest.approx(1.0)
        assert penalty(np.eye(2), m) == pytest.approx(math.exp(-47.4),
                                                      rel=1e-12)
        assert penalty(np.diag([1.0, 0.0]), m) == pytest.approx(
            math.exp(12.6), rel=1e-12)

    def test_overflow_clamped_and_flagged(self):
        m = MaterialModel()
        F = np.diag([1.0, -20.0])  # exponent 60*(0.21+20) >> 700
        val, n = penalty_with_flag(F, m)
        assert np.isfinite(val)
        assert val == pytest.approx(math.exp(700.0))
        assert n == 1

    def test_none(self):
        m = MaterialModel(penalty=PENALTY_NONE)
        assert penalty(np.diag([9.0, -3.0]), m) == 0.0
        assert np.all(penalty_dF(np.diag([9.0, -3.0]), m) == 0.0)

    def test_polynomial_form(self):
        m = MaterialModel(penalty=PENALTY_POLYNOMIAL, pen_c0=2.0, pen_m0=2)
        F = np.array([[1.0, 0.5], [0.0, 1.0]])
        assert penalty(F, m) == pytest.approx(2.0 * (2.25) ** 2)

    def test_nonnegative(self):
        rng = np.random.default_rng(9)
        F = rng.uniform(-3, 3, (200, 2, 2))
        for kind in (MaterialModel(),
                     MaterialModel(penalty=PENALTY_POLYNOMIAL),
                     MaterialModel(penalty=PENALTY_NONE)):
            assert np.all(penalty(F, kind) >= 0.0)

    @pytest.mark.parametrize("model", [
        MaterialModel(),
        MaterialModel(penalty=PENALTY_POLYNOMIAL, pen_c0=0.5, pen_m0=3),
    ])
    def test_derivative_finite_difference(self, model):
        rng = np.random.default_rng(10)
        h = 1e-5
        checked = 0
        while checked < 100:
            F = rng.uniform(-2, 2, (2, 2))
            if abs(np.linalg.det(F)) <= 1e-3:
                continue
            checked += 1
            D = penalty_dF(F, model)
            scale = max(float(penalty(F, model)), 1e-12)
            for i in range(2):
                for j in range(2):
                    E = np.zeros((2, 2))
                    E[i, j] = h
                    fd = (penalty(F + E, model)
                          - penalty(F - E, model)) / (2 * h)
                    assert fd == pytest.approx(D[i, j], rel=2e-6,
                                               abs=1e-8 * scale)


class TestFiberLaw:
    def test_values(self):
        assert fiber_energy(1.0) == pytest.approx(0.0, abs=1e-15)
        assert fiber_energy(0.0) == pytest.approx(1 / 12)
        assert fiber_energy(SQRT2) == pytest.approx(5 / 12, rel=1e-13)

    def test_double_well_stationary_points(self):
        # Wbar' = lam^5 - lam^3 vanishes at 0, +-1, with minima value 0 at +-1
        lam = np.linspace(-1.6, 1.6, 3201)
        w = fiber_energy(lam)
        dw = lam ** 5 - lam ** 3
        for lam0 in (-1.0, 0.0, 1.0):
            i = np.argmin(np.abs(lam - lam0))
            assert abs(dw[i]) < 1e-12
        assert fiber_energy(1.0) == pytest.approx(0.0, abs=1e-15)
        assert fiber_energy(-1.0) == pytest.approx(0.0, abs=1e-15)
        assert np.all(w >= -1e-15)


class TestAngularAverage:
    def test_isotropic_point(self):
        for n in (8, 64, 513):
            assert angular_average_energy(1.0, 1.0, n) == pytest.approx(
                0.0, abs=1e-14)

    def test_matches_closed_form(self):
        got = angular_average_energy(2.0, 1.0, 512)
        want = float(strain_energy(np.diag([2.0, 1.0])))
        assert got == pytest.approx(want, abs=1e-10)

    def test_constant_integrand(self):
        assert angular_average_energy(SQRT2, SQRT2, 16) == pytest.approx(
            5 / 12, rel=1e-12)

    def test_spectral_convergence_on_grid(self):
        lams = np.linspace(0.2, 2.5, 10)
        for l1 in lams[::3]:
            for l2 in lams[::3]:
                exact = float(strain_energy(np.diag([l1, l2])))
                err64 = abs(angular_average_energy(l1, l2, 64) - exact)
                assert err64 < 1e-10

    def test_n_theta_floor(self):
        with pytest.raises(ValueError):
            angular_average_energy(1.0, 1.0, 4)


class TestCoercivity:
    def test_equality_at_sqrt2(self):
        F = np.diag([SQRT2, SQRT2])
        assert coercivity_margin(F) == pytest.approx(0.0, abs=1e-13)

    def test_identity_margin(self):
        # 0 - (1 - 19/12) = 7/12
        assert coercivity_margin(np.eye(2)) == pytest.approx(7 / 12)

    def test_literal_bound_fails_at_identity(self):
        assert coercivity_margin(np.eye(2), bound="literal") == pytest.approx(
            -5 / 12)

    def test_scan_nonnegative(self):
        assert coercivity_scan(81) >= -1e-12

    def test_scan_literal_goes_negative(self):
        assert coercivity_scan(81, bound="literal") < -0.3

    def test_lower_growth_bound_on_grid(self):
        # c0 (|F|^2 - c1) <= W with c0 = 1/2, c1 = 19/6
        lam = np.linspace(-4, 4, 41)
        for l1 in lam:
            for l2 in lam:
                F = np.diag([l1, l2])
                w = float(strain_energy(F))
                assert w >= 0.5 * (l1 ** 2 + l2 ** 2) - 19 / 12 - 1e-12
