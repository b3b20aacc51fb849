"""Dual-lifting Gaussian head avatars: fitting, feature splatting, reenactment."""

from .camera import Camera, ImagePlane, orbit_camera, plane_through_origin
from .decoder import Decoder, decode, init_decoder
from .errors import FormatError, GagaError, NumericError
from .estimator import AvatarReconstructor
from .expression import ExpressionHead, VertexFeatureBank, expression_gaussians
from .fitting import (
    Avatar,
    FitConfig,
    FitResult,
    Reenactor,
    TargetSet,
    TargetView,
    fit_avatar,
    make_ground_truth_avatar,
    make_synthetic_targets,
    reenact,
)
from .head_model import (
    BlendshapeModel,
    ExpressionParams,
    evaluate,
    generate_toy_model,
    load_model,
    save_model,
)
from .io_formats import export_ply, load_avatar, load_targets, save_avatar, save_targets
from .kdtree import KDTree
from .lifting import GaussianCloud, LiftingGrids, assemble_dual_lift, init_grids
from .losses import LossWeights, total_loss
from .rasterizer import FrameBuffer, RenderSettings, bench, render
from .service import create_app

__version__ = "0.1.0"

__all__ = [
    "Avatar",
    "AvatarReconstructor",
    "BlendshapeModel",
    "Camera",
    "Decoder",
    "ExpressionHead",
    "ExpressionParams",
    "FitConfig",
    "FitResult",
    "FormatError",
    "FrameBuffer",
    "GagaError",
    "GaussianCloud",
    "ImagePlane",
    "KDTree",
    "LiftingGrids",
    "LossWeights",
    "NumericError",
    "Reenactor",
    "RenderSettings",
    "TargetSet",
    "TargetView",
    "VertexFeatureBank",
    "assemble_dual_lift",
    "bench",
    "create_app",
    "decode",
    "evaluate",
    "export_ply",
    "expression_gaussians",
    "fit_avatar",
    "generate_toy_model",
    "init_decoder",
    "init_grids",
    "load_avatar",
    "load_model",
    "load_targets",
    "make_ground_truth_avatar",
    "make_synthetic_targets",
    "orbit_camera",
    "plane_through_origin",
    "reenact",
    "render",
    "save_avatar",
    "save_model",
    "save_targets",
    "total_loss",
    "__version__",
]
