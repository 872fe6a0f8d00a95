"""Residual-limb fitting, stump sealing and evaluation for articulated mesh bodies."""

from .core import (
    ArticulatedBody,
    Keypoint2D,
    KeypointSet2D,
    KinematicTree,
    LimbId,
    LimbSpec,
    PinholeCamera,
    TriangleMesh,
    project,
    project_jacobian,
    project_points,
)
from .errors import ParseError, ResiLimbError
from .meshedit import (
    BoundaryLoop,
    CutPlan,
    ReconstructionParams,
    SealedStump,
    compute_cut_plan,
    reconstruct_residual_limb,
)
from .metrics import BinaryMask, EvalReport, evaluate, miou, mpjpe_2d, rasterize_silhouette
from .optimizer import LbfgsConfig, OptimizationTrace, Termination, minimize
from .rafo import (
    RafoResult,
    RafoSettings,
    RafoWeights,
    ResidualLimbProblem,
    optimize_all_limbs,
    optimize_residual_limb,
    rafo_loss,
)
from .synth import CameraParams, SynthBodySpec, generate_body, generate_scene

__version__ = "0.1.0"

__all__ = [
    "ArticulatedBody",
    "BinaryMask",
    "BoundaryLoop",
    "CameraParams",
    "CutPlan",
    "EvalReport",
    "Keypoint2D",
    "KeypointSet2D",
    "KinematicTree",
    "LbfgsConfig",
    "LimbId",
    "LimbSpec",
    "OptimizationTrace",
    "ParseError",
    "PinholeCamera",
    "RafoResult",
    "RafoSettings",
    "RafoWeights",
    "ReconstructionParams",
    "ResiLimbError",
    "ResidualLimbProblem",
    "SealedStump",
    "SynthBodySpec",
    "Termination",
    "TriangleMesh",
    "compute_cut_plan",
    "evaluate",
    "generate_body",
    "generate_scene",
    "minimize",
    "miou",
    "mpjpe_2d",
    "optimize_all_limbs",
    "optimize_residual_limb",
    "project",
    "project_jacobian",
    "project_points",
    "rafo_loss",
    "rasterize_silhouette",
    "reconstruct_residual_limb",
    "__version__",
]
