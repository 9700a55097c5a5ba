from solver.cc_solver import CCSolution, respond_to_control, solve_auxiliary, solve_cc
from solver.diagnostics import check_max_principle, hamiltonian, limiting_cost
from solver.direct_linear import solve_cc_direct_linear
from solver.options import SolveOptions
from solver.scheme import phi

__all__ = [
    "CCSolution",
    "SolveOptions",
    "check_max_principle",
    "hamiltonian",
    "limiting_cost",
    "phi",
    "respond_to_control",
    "solve_auxiliary",
    "solve_cc",
    "solve_cc_direct_linear",
]
