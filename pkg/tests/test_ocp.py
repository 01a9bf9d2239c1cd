import numpy as np
import pytest

from ctcstraj import (
    ConvexSetSpec,
    OcpDefinition,
    ScalingSpec,
    apply_scaling,
    finite_difference_jacobian,
    invert_scaling,
    validate_ocp,
)


def double_integrator(n_g_extra=0):
    def dyn(t, x, u):
        return np.array([x[1], u[0]])

    def g(t, x, u):
        out = [x[0] - 1.0]
        out += [0.0] * n_g_extra
        return np.array(out)

    def Q(ti, xi, tf, xf):
        return np.concatenate([xi, xf])

    return OcpDefinition(
        n_x=2, n_u=1, dynamics=dyn, n_g=1, path_ineq=g, n_Q=4, boundary_eq=Q,
        terminal_cost=lambda tf, xf: float(tf),
        control_set=ConvexSetSpec.box([-1.0], [1.0]), dilation_bounds=(0.5, 4.0))


class TestValidate:
    def test_well_formed_gives_empty_report(self):
        assert validate_ocp(double_integrator()) == []

    def test_nonpositive_dilation_flagged(self):
        ocp = double_integrator()
        ocp.dilation_bounds = (0.0, 4.0)
        report = validate_ocp(ocp)
        assert any("positive" in line for line in report)

    def test_dimension_mismatch_flagged(self):
        ocp = double_integrator()
        ocp.path_ineq = lambda t, x, u: np.array([x[0] - 1.0, 0.0])  # n_g+1 entries
        report = validate_ocp(ocp)
        assert any("declared" in line for line in report)

    def test_unbounded_control_set_flagged(self):
        ocp = double_integrator()
        ocp.control_set = ConvexSetSpec.box([-np.inf], [1.0])
        assert any("bounded" in line for line in validate_ocp(ocp))


class TestFiniteDifferenceJacobian:
    def test_square_at_three(self):
        jac = finite_difference_jacobian(lambda x: np.array([x[0] ** 2]), np.array([3.0]), 1e-5)
        assert abs(jac[0, 0] - 6.0) < 1e-8

    def test_exact_on_affine(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((4, 6))
        x = rng.standard_normal(6)
        jac = finite_difference_jacobian(lambda v: A @ v, x, 1e-4)
        assert np.allclose(jac, A, atol=1e-9)

    def test_obstacle_dynamics_matches_analytic(self):
        # analytic Jacobians of the 2-D drag dynamics vs central differences
        from ctcstraj.benchmarks import build_obstacle_ocp

        ocp, _ = build_obstacle_ocp(False)
        rng = np.random.default_rng(4)
        for _ in range(10):
            t = rng.uniform(0, 10)
            x = rng.standard_normal(5) * 5
            u = rng.standard_normal(2) * 2
            ft, fx, fu = ocp.jac_dynamics(t, x, u)
            p = np.concatenate(([t], x, u))
            num = finite_difference_jacobian(
                lambda v: ocp.dynamics(v[0], v[1:6], v[6:]), p, 1e-6 * (1 + np.abs(p).max()))
            scale = 1.0 + np.abs(num).max()
            assert np.abs(num[:, 0] - ft).max() / scale < 1e-6
            assert np.abs(num[:, 1:6] - fx).max() / scale < 1e-6
            assert np.abs(num[:, 6:] - fu).max() / scale < 1e-6

    def test_requires_positive_step(self):
        with pytest.raises(ValueError):
            finite_difference_jacobian(lambda x: x, np.zeros(2), 0.0)


class TestScaling:
    def test_identity_spec(self):
        spec = ScalingSpec.identity(4)
        z = np.array([1.0, -2.0, 3.0, 0.5])
        assert np.allclose(apply_scaling(spec, z), z)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(1)
        spec = ScalingSpec(rng.uniform(0.5, 100, 8), rng.standard_normal(8) * 10)
        for _ in range(20):
            z = rng.standard_normal(8) * 50
            back = invert_scaling(spec, apply_scaling(spec, z))
            assert np.max(np.abs(back - z)) < 1e-12 * (1 + np.abs(z).max())

    def test_bounds_to_unit_interval(self):
        spec = ScalingSpec.from_bounds([0.0], [22000.0])
        assert np.isclose(apply_scaling(spec, np.array([11000.0]))[0], 0.5)
        assert np.isclose(apply_scaling(spec, np.array([0.0]))[0], 0.0)
        assert np.isclose(apply_scaling(spec, np.array([22000.0]))[0], 1.0)

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            ScalingSpec(np.array([1.0, 0.0]), np.zeros(2))
