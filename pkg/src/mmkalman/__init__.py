"""Robust Kalman filtering with Student-t measurement noise and state constraints.

The estimator minimises the per-step MAP objective by majorization-minimization;
each MM step is a small convex QCQP solved by a log-barrier method.
"""

from .constraints import (
    AnnulusInner,
    AnnulusOuter,
    Constraint,
    ConvexQuad,
    IndefQuad,
    LinearEq,
    LinearIneq,
    annulus,
    eval_g,
    grad_g,
    majorize_g,
)
from .filters import (
    FilterConfig,
    FilterStepError,
    FilterTrace,
    GaussianBelief,
    adaptive_R,
    covariance_update,
    kalman_baseline,
    mm_update,
    particle_filter_oracle,
    predict,
    projection_baseline,
    run_filter,
)
from .model import MeasurementNoiseSpec, StateSpaceModel, Trajectory, simulate, student_t_logpdf
from .objective import (
    MapObjective,
    QuadraticSurrogate,
    build_surrogate_log,
    build_surrogate_smooth,
    eval_F,
    grad_F,
    lipschitz_L,
)
from .qcqp import QcqpProblem, QcqpSolution, Status, solve, solve_unconstrained

__version__ = "0.1.0"
