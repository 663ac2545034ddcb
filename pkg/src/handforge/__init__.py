"""Differentiable articulated hand model toolkit.

A scalable-skeleton hand layer (forward kinematics, morphable mesh, linear
blend skinning) with exact analytic gradients, a nonlinear least-squares
fitting engine, a synthetic depth dataset generator, and depth-frame
preprocessing utilities.
"""

from .model import (
    AssetError,
    AssetParseError,
    AssetValidationError,
    HandModel,
    MORPH_TARGET_NAMES,
    SCALE_SLOTS,
    load_model,
    morph,
    save_model,
    validate_model,
)
from .generator import GenConfig, GenerationError, generate_default_model
from .kinematics import (
    JointJacobians,
    KinematicState,
    N_SCALE_SLOTS,
    ParamVector,
    forward_kinematics,
    joint_jacobians,
    validate_params,
)
from .skinning import (
    SkinningTransforms,
    VertexJacobians,
    skin_vertices,
    skinning_transforms,
    vertex_jacobians,
)
from .hpsl import (
    HandState,
    JacobianSet,
    LossGradients,
    LossReport,
    hpsl_backward,
    hpsl_forward,
    jacobian_set,
    loss,
)

__version__ = "0.1.0"

__all__ = [
    "AssetError",
    "AssetParseError",
    "AssetValidationError",
    "GenConfig",
    "GenerationError",
    "HandModel",
    "HandState",
    "JacobianSet",
    "JointJacobians",
    "KinematicState",
    "LossGradients",
    "LossReport",
    "MORPH_TARGET_NAMES",
    "N_SCALE_SLOTS",
    "ParamVector",
    "SCALE_SLOTS",
    "SkinningTransforms",
    "VertexJacobians",
    "forward_kinematics",
    "generate_default_model",
    "hpsl_backward",
    "hpsl_forward",
    "jacobian_set",
    "joint_jacobians",
    "load_model",
    "loss",
    "morph",
    "save_model",
    "skin_vertices",
    "skinning_transforms",
    "validate_model",
    "validate_params",
    "vertex_jacobians",
    "__version__",
]
