"""Desk-scale lab for adapt-then-combine gradient tracking.

Modules: ``topology`` (graphs and weight matrices), ``problems`` (local
objectives and sample gradients), ``algorithms`` (GT, its primal-dual form,
DSGD, CSGD), ``analysis`` (error coordinates, decomposition, bound
calculators) and ``harness`` (runner, tuner, verification suite).
"""

from .algorithms import (
    ALGORITHMS, BaselineState, GTState, PDState, SampleStream, advance, csgd_init, csgd_step,
    dsgd_init, dsgd_step, gt_dual, gt_init, gt_pd_init, gt_pd_step, gt_step, init_state,
)
from .analysis import (
    Decomposition, ErrorCoords, FixedPoint, TheoryConstants, check_coupled_inequalities,
    check_transformed_recursion, convex_constants, convex_stepsize, decompose, decompose_G,
    error_coords, sc_constants, sc_stepsize, solve_fixed_point, spectral_check, theorem1_rhs,
    theorem2_rhs,
)
from .errors import *  # noqa: F401,F403
from .harness import RunConfig, RunTrace, run, tune_stepsize, verify_all
from .problems import (
    LinRegProblem, LogRegProblem, ProblemSet, QuadraticProblem, make_linreg, make_logreg,
    make_problem, make_quadratic,
)
from .report import Check, Report
from .topology import (
    CombinationMatrix, Topology, build_topology, certify_assumption1, combination_matrix,
    mixing_rate,
)

__version__ = "0.1.0"
