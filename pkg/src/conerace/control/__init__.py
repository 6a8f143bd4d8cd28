"""Path-following controllers: LTV MPC and the pure-pursuit baseline."""

from .mpc import MpcConfig, MpcController, OcpProblem, OcpSolution, build_ocp, linearize, mpc_step
from .pure_pursuit import PurePursuitConfig, PurePursuitController, pure_pursuit_step
from .qp import QpResult, solve_qp

__all__ = [
    "MpcConfig",
    "MpcController",
    "OcpProblem",
    "OcpSolution",
    "PurePursuitConfig",
    "PurePursuitController",
    "QpResult",
    "build_ocp",
    "linearize",
    "mpc_step",
    "pure_pursuit_step",
    "solve_qp",
]
