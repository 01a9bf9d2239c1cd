import numpy as np
import pytest

from ctcstraj import BasisSpec, cgl_nodes, eval_basis, eval_control
from ctcstraj.basis import eval_basis_deriv, integrate_signal


class TestCglNodes:
    def test_two_nodes_are_endpoints(self):
        assert np.allclose(cgl_nodes(2), [-1.0, 1.0])

    def test_three_nodes_match_root_oracle(self):
        # roots of (1 - eta^2) * dT_2/deta = 4*eta - 4*eta^3
        roots = np.sort(np.roots([-4.0, 0.0, 4.0, 0.0]))
        assert np.allclose(np.sort(cgl_nodes(3)), roots, atol=1e-12)
        assert np.allclose(cgl_nodes(3), [-1.0, 0.0, 1.0])

    def test_five_nodes_closed_form_and_root_oracle(self):
        expect = -np.cos(np.pi * np.arange(5) / 4.0)
        assert np.allclose(cgl_nodes(5), expect, atol=1e-12)
        # (1 - eta^2) * dT_4/deta with T_4 = 8 eta^4 - 8 eta^2 + 1
        dT4 = np.array([32.0, 0.0, -16.0, 0.0])
        poly = np.polymul([-1.0, 0.0, 1.0], dT4)
        roots = np.sort(np.real(np.roots(poly)))
        assert np.allclose(np.sort(cgl_nodes(5)), roots, atol=1e-9)

    def test_rejects_single_node(self):
        with pytest.raises(ValueError):
            cgl_nodes(1)


class TestEvalBasis:
    def test_foh_midpoint_hat(self):
        spec = BasisSpec.uniform("foh", 3)
        assert np.allclose(eval_basis(spec, 0.25), [0.5, 0.5, 0.0])

    def test_foh_interpolates_at_nodes(self):
        for n in (2, 5, 17, 50):
            spec = BasisSpec.uniform("foh", n)
            for j, tau in enumerate(spec.nodes):
                gam = eval_basis(spec, tau)
                expect = np.zeros(n)
                expect[j] = 1.0
                assert np.allclose(gam, expect)

    def test_foh_partition_of_unity(self):
        rng = np.random.default_rng(0)
        spec = BasisSpec.uniform("foh", 9)
        for tau in rng.uniform(0, 1, 100):
            gam = eval_basis(spec, tau)
            assert np.all(gam >= 0.0)
            assert np.isclose(gam.sum(), 1.0)

    def test_zoh_left_continuous_one_hot(self):
        spec = BasisSpec.uniform("zoh", 5)  # four segments
        assert np.allclose(eval_basis(spec, 0.0), [1, 0, 0, 0])
        assert np.allclose(eval_basis(spec, 0.25), [0, 1, 0, 0])  # node -> next segment
        assert np.allclose(eval_basis(spec, 0.999), [0, 0, 0, 1])
        assert np.allclose(eval_basis(spec, 1.0), [0, 0, 0, 1])

    def test_cgl_cardinal_property(self):
        for n in (3, 5, 8):
            spec = BasisSpec.cgl(n)
            eta = cgl_nodes(n)
            for j in range(n):
                gam = eval_basis(spec, (eta[j] + 1.0) / 2.0)
                expect = np.zeros(n)
                expect[j] = 1.0
                assert np.max(np.abs(gam - expect)) < 1e-10

    def test_cgl3_midpoint_matches_polynomial_oracle(self):
        # direct Lagrange-polynomial evaluation via polyfit through cardinals
        spec = BasisSpec.cgl(3)
        gam = eval_basis(spec, 0.5)
        assert np.allclose(gam, [0.0, 1.0, 0.0], atol=1e-12)
        eta = cgl_nodes(3)
        for k in range(3):
            coeff = np.polyfit(eta, np.eye(3)[k], 2)
            for tau in np.linspace(0, 1, 13):
                assert abs(np.polyval(coeff, 2 * tau - 1) - eval_basis(spec, tau)[k]) < 1e-9

    def test_tau_outside_rejected(self):
        spec = BasisSpec.uniform("foh", 4)
        with pytest.raises(ValueError):
            eval_basis(spec, 1.5)


class TestEvalControl:
    def test_foh_constant_coefficients(self):
        spec = BasisSpec.uniform("foh", 6)
        c = np.array([0.7, -1.2])
        U = np.tile(c, 6)
        for tau in np.linspace(0, 1, 23):
            assert np.allclose(eval_control(U, spec, 2, tau), c)

    def test_foh_linear_interp(self):
        spec = BasisSpec.uniform("foh", 2)
        assert np.isclose(eval_control(np.array([0.0, 2.0]), spec, 1, 0.5)[0], 1.0)

    def test_zoh_piecewise_constant(self):
        spec = BasisSpec.uniform("zoh", 4)
        S = np.array([3.0, 5.0, 7.0])
        assert np.isclose(eval_control(S, spec, 1, 0.1)[0], 3.0)
        assert np.isclose(eval_control(S, spec, 1, 0.5)[0], 5.0)
        assert np.isclose(eval_control(S, spec, 1, 0.9)[0], 7.0)

    def test_dimension_mismatch(self):
        spec = BasisSpec.uniform("foh", 4)
        with pytest.raises(ValueError):
            eval_control(np.zeros(7), spec, 2, 0.5)


class TestTimeMap:
    def test_integral_strictly_increasing_for_positive_dilation(self):
        rng = np.random.default_rng(2)
        spec = BasisSpec.uniform("foh", 7)
        S = rng.uniform(0.3, 4.0, 7)  # s_min > 0
        taus = np.linspace(0, 1, 40)
        t = np.array([integrate_signal(S, spec, 1, tau)[0] for tau in taus])
        assert np.all(np.diff(t) > 0)

    def test_foh_integral_matches_quadrature(self):
        spec = BasisSpec.uniform("foh", 5)
        S = np.array([1.0, 2.0, 1.5, 3.0, 0.5])
        fine = np.linspace(0, 1, 20001)
        vals = np.array([eval_control(S, spec, 1, tau)[0] for tau in fine])
        ref = np.trapezoid(vals, fine)
        assert abs(integrate_signal(S, spec, 1, 1.0)[0] - ref) < 1e-6

    def test_deriv_matches_finite_differences(self):
        spec = BasisSpec.uniform("foh", 6)
        for tau in (0.07, 0.33, 0.61):
            num = (eval_basis(spec, tau + 1e-7) - eval_basis(spec, tau - 1e-7)) / 2e-7
            assert np.allclose(eval_basis_deriv(spec, tau), num, atol=1e-5)
        cgl = BasisSpec.cgl(5)
        for tau in (0.11, 0.5, 0.83):
            num = (eval_basis(cgl, tau + 1e-7) - eval_basis(cgl, tau - 1e-7)) / 2e-7
            assert np.allclose(eval_basis_deriv(cgl, tau), num, atol=1e-5)
