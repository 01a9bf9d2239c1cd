import numpy as np
import pytest

from ctcstraj import (
    AugmentedLayout,
    AugmentedSystem,
    BasisSpec,
    ConvexSetSpec,
    OcpDefinition,
    RowScaling,
    augmented_dynamics,
    augmented_jacobians,
    penalty_lambda,
    penalty_lambda_grads,
    finite_difference_jacobian,
)


def scalar_ocp(n_g=1, n_h=0):
    """1-D state with g = [x - 1] and optional h = [u]."""

    def g(t, x, u):
        return np.array([x[0] - 1.0])

    def h(t, x, u):
        return np.array([u[0]])

    return OcpDefinition(
        n_x=1, n_u=1, dynamics=lambda t, x, u: np.zeros(1),
        n_g=n_g, path_ineq=g if n_g else None,
        n_h=n_h, path_eq=h if n_h else None,
        terminal_cost=lambda tf, xf: 0.0,
        control_set=ConvexSetSpec.box([-5.0], [5.0]), dilation_bounds=(0.5, 4.0))


class TestPenaltyLambda:
    def test_satisfied_constraint_gives_zero(self):
        ocp = scalar_ocp()
        assert penalty_lambda(ocp, RowScaling.ones(ocp), 0.0, np.array([0.5]), np.zeros(1)) == 0.0

    def test_direct_evaluation(self):
        ocp = scalar_ocp(n_g=1, n_h=1)
        val = penalty_lambda(ocp, RowScaling.ones(ocp), 0.0, np.array([3.0]), np.array([2.0]))
        assert np.isclose(val, max(0.0, 2.0) ** 2 + 2.0**2)  # 8.0

    def test_boundary_of_feasibility(self):
        def g(t, x, u):
            return np.array([-x[0]])

        ocp = scalar_ocp()
        ocp.path_ineq = g
        assert penalty_lambda(ocp, RowScaling.ones(ocp), 0.0, np.zeros(1), np.zeros(1)) == 0.0

    def test_nonnegative_and_zero_iff_feasible(self):
        ocp = scalar_ocp(n_g=1, n_h=1)
        rows = RowScaling.ones(ocp)
        rng = np.random.default_rng(0)
        for _ in range(50):
            x, u = rng.standard_normal(1) * 2, rng.standard_normal(1) * 2
            val = penalty_lambda(ocp, rows, 0.0, x, u)
            assert val >= 0.0
            feasible = (x[0] - 1.0 <= 0.0) and (u[0] == 0.0)
            assert (val == 0.0) == feasible


class TestPenaltyGrads:
    def test_vanish_exactly_on_strictly_feasible_point(self):
        ocp = scalar_ocp(n_g=1, n_h=1)
        rows = RowScaling.ones(ocp)
        dt, dx, du = penalty_lambda_grads(ocp, rows, 0.0, np.array([0.2]), np.zeros(1))
        assert dt == 0.0
        assert np.all(dx == 0.0)
        assert np.all(du == 0.0)

    def test_hinge_gradient_value(self):
        ocp = scalar_ocp()
        _, dx, _ = penalty_lambda_grads(ocp, RowScaling.ones(ocp), 0.0, np.array([3.0]), np.zeros(1))
        assert np.isclose(dx[0], 4.0)  # d/dx (x-1)^2 at x=3

    def test_matches_finite_differences_at_infeasible_point(self):
        def g(t, x, u):
            return np.array([np.sin(x[0]) + u[0] ** 2 - 0.1, x[1] - 0.3 * u[0]])

        def h(t, x, u):
            return np.array([x[0] * u[0] - 0.2])

        ocp = OcpDefinition(
            n_x=2, n_u=1, dynamics=lambda t, x, u: np.zeros(2),
            n_g=2, path_ineq=g, n_h=1, path_eq=h,
            terminal_cost=lambda tf, xf: 0.0,
            control_set=ConvexSetSpec.box([-5.0], [5.0]))
        rows = RowScaling.ones(ocp)
        rng = np.random.default_rng(7)
        for _ in range(5):
            x = rng.standard_normal(2) + 1.0
            u = rng.standard_normal(1) + 1.0
            dt, dx, du = penalty_lambda_grads(ocp, rows, 0.4, x, u)
            p = np.concatenate(([0.4], x, u))
            num = finite_difference_jacobian(
                lambda v: np.array([penalty_lambda(ocp, rows, v[0], v[1:3], v[3:])]),
                p, 1e-6 * (1 + np.abs(p).max()))[0]
            scale = 1 + np.abs(num).max()
            assert abs(num[0] - dt) / scale < 1e-5
            assert np.abs(num[1:3] - dx).max() / scale < 1e-5
            assert np.abs(num[3:] - du).max() / scale < 1e-5


def make_system(dynamics=None, jac=None, n_x=2, time_varying=True, g=None, n_g=0):
    ocp = OcpDefinition(
        n_x=n_x, n_u=1,
        dynamics=dynamics or (lambda t, x, u: np.zeros(n_x)),
        jac_dynamics=jac,
        n_g=n_g, path_ineq=g,
        terminal_cost=lambda tf, xf: 0.0, time_varying=time_varying,
        control_set=ConvexSetSpec.box([-5.0], [5.0]), dilation_bounds=(0.5, 4.0))
    lay = AugmentedLayout(n_x, 1, has_accumulator=n_g > 0, has_time_state=time_varying,
                          has_dilation=True)
    basis = BasisSpec.uniform("foh", 4)
    return AugmentedSystem(ocp, lay, basis, basis)


class TestAugmentedDynamics:
    def test_zero_dynamics_only_time_flows(self):
        sys_ = make_system(n_x=3)
        xt = np.zeros(sys_.layout.n_aug)
        out = augmented_dynamics(sys_, xt, np.array([0.0, 2.0]))
        assert np.allclose(out[:-1], 0.0)
        assert out[-1] == 2.0  # time row carries the dilation factor

    def test_unit_dilation_recovers_original_dynamics(self):
        sys_ = make_system(dynamics=lambda t, x, u: np.array([x[1], u[0]]))
        out = augmented_dynamics(sys_, np.array([1.0, 3.0, 0.0]), np.array([0.7, 1.0]))
        assert np.allclose(out, [3.0, 0.7, 1.0])

    def test_positively_homogeneous_in_dilation(self):
        sys_ = make_system(dynamics=lambda t, x, u: np.array([x[1], u[0]]))
        xt = np.array([1.0, 3.0, 0.5])
        one = augmented_dynamics(sys_, xt, np.array([0.7, 1.0]))
        three = augmented_dynamics(sys_, xt, np.array([0.7, 3.0]))
        assert np.allclose(three, 3.0 * one)

    def test_nonpositive_dilation_rejected(self):
        sys_ = make_system()
        with pytest.raises(ValueError):
            augmented_dynamics(sys_, np.zeros(3), np.array([0.0, 0.0]))


class TestAugmentedJacobians:
    def test_linear_system_entry(self):
        a = 1.7
        sys_ = make_system(dynamics=lambda t, x, u: np.array([a * x[0], 0.0]),
                           jac=lambda t, x, u: (np.zeros(2),
                                                np.array([[a, 0.0], [0.0, 0.0]]),
                                                np.zeros((2, 1))))
        A, _ = augmented_jacobians(sys_, np.array([2.0, 0.0, 0.0]), np.array([0.0, 1.0]))
        assert np.isclose(A[0, 0], a)

    def test_feasible_point_penalty_row_zero(self):
        def g(t, x, u):
            return np.array([x[0] - 10.0])  # strictly feasible near origin

        sys_ = make_system(dynamics=lambda t, x, u: np.array([x[1], u[0]]), g=g, n_g=1)
        lay = sys_.layout
        xt = np.zeros(lay.n_aug)
        A, B = augmented_jacobians(sys_, xt, np.array([0.3, 1.5]))
        assert np.all(A[lay.iy, :] == 0.0)
        assert B[lay.iy, 0] == 0.0
        assert B[lay.iy, -1] == 0.0  # dF_y/ds = Lambda = 0 at a feasible point

    def test_matches_finite_differences(self):
        def dyn(t, x, u):
            return np.array([np.sin(x[1]) + 0.2 * t, x[0] * u[0]])

        def g(t, x, u):
            return np.array([x[0] + u[0] - 0.1])

        sys_ = make_system(dynamics=dyn, g=g, n_g=1)
        rng = np.random.default_rng(3)
        for _ in range(5):
            xt = rng.standard_normal(sys_.layout.n_aug)
            xt[-1] = abs(xt[-1])  # time state nonnegative
            ut = np.array([rng.standard_normal(), rng.uniform(0.6, 2.0)])
            A, B = augmented_jacobians(sys_, xt, ut)
            numA = finite_difference_jacobian(
                lambda v: augmented_dynamics(sys_, v, ut), xt, 1e-6 * (1 + np.abs(xt).max()))
            numB = finite_difference_jacobian(
                lambda v: augmented_dynamics(sys_, xt, v), ut, 1e-7)
            scale = 1 + max(np.abs(numA).max(), np.abs(numB).max())
            assert np.abs(numA - A).max() / scale < 1e-5
            assert np.abs(numB - B).max() / scale < 1e-5


class TestLayout:
    def test_selectors_disjoint_and_cover(self):
        for acc in (True, False):
            for ts in (True, False):
                lay = AugmentedLayout(3, 2, has_accumulator=acc, has_time_state=ts,
                                      has_dilation=True)
                stacked = np.vstack([m for m in (lay.E_x, lay.E_y, lay.E_t) if m.size])
                assert stacked.shape == (lay.n_aug, lay.n_aug)
                assert np.allclose(stacked.T @ stacked, np.eye(lay.n_aug))

    def test_time_state_requires_dilation(self):
        with pytest.raises(ValueError):
            AugmentedLayout(2, 1, has_time_state=True, has_dilation=False)
