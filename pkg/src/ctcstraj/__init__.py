"""Successive-convexification trajectory optimization with continuous-time
constraint satisfaction.

The solver reformulates path constraints into an integrated exterior
penalty carried by an augmented dynamical system, discretizes with
multiple shooting and exact sensitivities, and drives an l1 exact-penalty
objective to stationarity with a prox-linear sequential convex programming
loop over an internal first-order QP solver.
"""

from .basis import BasisSpec, cgl_nodes, eval_basis, eval_control
from .ocp import (
    OcpDefinition,
    RowScaling,
    ScalingSpec,
    apply_scaling,
    finite_difference_jacobian,
    invert_scaling,
    validate_ocp,
)
from .qp import NATIVE_BACKEND, QpProblem, QpSettings, QpSolution, qp_kkt_residuals, solve_qp
from .reform import (
    AugmentedLayout,
    AugmentedSystem,
    augmented_dynamics,
    augmented_jacobians,
    penalty_lambda,
    penalty_lambda_grads,
)
from .sets import BlockSet, ConvexSetSpec, project_set
from .shooting import (
    DefectBlock,
    DenseTrajectory,
    Grid,
    PropagationError,
    compute_defects,
    linearize_all,
    propagate_interval,
    propagate_with_sensitivities,
)

__version__ = "0.1.0"
