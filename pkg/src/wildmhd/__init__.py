"""Construction and weak-form verification of non-unique MHD solutions from piecewise-constant data."""

from .assembly import AssembledSolution, build_solution, choose_lambda, isentropic_view
from .convint import (SubsolutionField, SubsolutionState, WavePerturbation, add_localized_wave,
                      admissible_segment, iterate, relaxed_gap)
from .core import (EquationOfState, Grid, Piece, PiecewiseConstantData, Rect, SolutionFields,
                   compute_c_constants, eos_internal_energy, eos_specific_entropy, pressure_potential)
from .reduction import lift_2d_to_3d, residual_equivalence_check
from .testfunctions import make_test_suite
from .verify import ResidualReport, distinctness, residual, verify

__all__ = [
    "AssembledSolution", "EquationOfState", "Grid", "Piece", "PiecewiseConstantData", "Rect",
    "ResidualReport", "SolutionFields", "SubsolutionField", "SubsolutionState", "WavePerturbation",
    "add_localized_wave", "admissible_segment", "build_solution", "choose_lambda", "compute_c_constants",
    "distinctness", "eos_internal_energy", "eos_specific_entropy", "isentropic_view", "iterate",
    "lift_2d_to_3d", "make_test_suite", "pressure_potential", "relaxed_gap", "residual",
    "residual_equivalence_check", "verify",
]
