"""HMM gradient discretisation for convection-diffusion-reaction on 2D polytopal meshes."""
__version__ = "0.1.0"

from .errors import (DegenerateCell, DimensionMismatch, EigSolveFailed, HmmGdmError,
                     InconsistentOrientation, InvalidLambda, InvalidTimeGrid, LinearSolveFailed,
                     MeshValidationError, NonManifoldFace, NonPositiveError, ParseError,
                     PicardDiverged, StepFailed, UnsupportedLevel)
from .gdm import HMMDiscretisation
from .mesh import FamilyTag, MeshFamily, PolytopalMesh, build_mesh, generate, read_mesh, write_mesh
from .metrics import (ConvergenceReport, QualityReport, coercivity_constant, consistency_defect,
                      convergence_study, interpolant_PD, l2_error_gradient, l2_error_solution,
                      limit_conformity_defect, quality_report, rates)
from .models import ModelSpec, make_custom, make_gbf, make_heat
from .solver import SolverConfig, Trajectory, picard_step, run

__all__ = [
    "HMMDiscretisation", "FamilyTag", "MeshFamily", "PolytopalMesh", "build_mesh", "generate",
    "read_mesh", "write_mesh", "ConvergenceReport", "QualityReport", "coercivity_constant",
    "consistency_defect", "convergence_study", "interpolant_PD", "l2_error_gradient",
    "l2_error_solution", "limit_conformity_defect", "quality_report", "rates", "ModelSpec",
    "make_custom", "make_gbf", "make_heat", "SolverConfig", "Trajectory", "picard_step", "run",
    "DegenerateCell", "DimensionMismatch", "EigSolveFailed", "HmmGdmError",
    "InconsistentOrientation", "InvalidLambda", "InvalidTimeGrid", "LinearSolveFailed",
    "MeshValidationError", "NonManifoldFace", "NonPositiveError", "ParseError",
    "PicardDiverged", "StepFailed", "UnsupportedLevel",
]
