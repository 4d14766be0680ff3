"""Mild solutions of 3D Navier-Stokes with L^3 data: certificate, Picard solver, audits."""
from .certificate import Certificate, Constants, DatumNorms, derive_constants, existence_time
from .fields import GridSpec, ScalarField, SpectralField, Trajectory, VelocityField, leray_project, make_datum
from .kernels import TimeMesh, heat_propagate, nonlinear_term, oseen_point_eval, pressure_solve
from .norms import NormTriple, localized_l3, lq_norm, triple_norm
from .picard import IterationTrace, SolveResult, picard_solve

__all__ = [
    "Certificate", "Constants", "DatumNorms", "derive_constants", "existence_time",
    "GridSpec", "ScalarField", "SpectralField", "Trajectory", "VelocityField", "leray_project", "make_datum",
    "TimeMesh", "heat_propagate", "nonlinear_term", "oseen_point_eval", "pressure_solve",
    "NormTriple", "localized_l3", "lq_norm", "triple_norm",
    "IterationTrace", "SolveResult", "picard_solve",
]
