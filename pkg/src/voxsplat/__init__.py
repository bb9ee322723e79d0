"""Editable Gaussian-splat engine for volume-rendered scenes.

Trains splat models from multi-view RGBA images produced by the built-in
volume-rendering oracle, compresses them with vector quantization, composes
and edits scenes, and inversely fits edit parameters to a reference image.
"""

from voxsplat.dvr import (
    TransferFunction1D,
    VolumeDataset,
    VolumeGrid,
    generate_dataset,
    load_dataset,
    make_volume,
    render_view,
    union_transfer_functions,
)
from voxsplat.gaussians import Camera, GaussianGeometry, ShColor, orbit_camera
from voxsplat.inverse import (
    TransformParams,
    init_transform,
    optimize_to_reference,
    render_with_transform,
)
from voxsplat.metrics import luv_difference_image, psnr
from voxsplat.rasterizer import RenderOutput, rasterize_backward, rasterize_forward
from voxsplat.render_modes import RENDER_MODES, render_mode_image
from voxsplat.scene import (
    BasicSceneModel,
    ComposedScene,
    EditState,
    apply_edits,
    load_model,
    render_composed,
    save_model,
)
from voxsplat.shading import LightConfig, Palette, ShadingAttributes, shade_gaussians
from voxsplat.trainer import TrainConfig, render_model, train_base, train_editable
from voxsplat.viewsampler import EntropyReport, camera_rig, entropy_score, views_for_scene
from voxsplat.vq import dequantize_model, quantize_model

__all__ = [
    "BasicSceneModel",
    "Camera",
    "ComposedScene",
    "EditState",
    "EntropyReport",
    "GaussianGeometry",
    "LightConfig",
    "Palette",
    "RENDER_MODES",
    "RenderOutput",
    "ShColor",
    "ShadingAttributes",
    "TrainConfig",
    "TransferFunction1D",
    "TransformParams",
    "VolumeDataset",
    "VolumeGrid",
    "apply_edits",
    "camera_rig",
    "dequantize_model",
    "entropy_score",
    "generate_dataset",
    "init_transform",
    "load_dataset",
    "load_model",
    "luv_difference_image",
    "make_volume",
    "optimize_to_reference",
    "orbit_camera",
    "psnr",
    "quantize_model",
    "rasterize_backward",
    "rasterize_forward",
    "render_composed",
    "render_mode_image",
    "render_model",
    "render_view",
    "render_with_transform",
    "save_model",
    "shade_gaussians",
    "train_base",
    "train_editable",
    "union_transfer_functions",
    "views_for_scene",
]

__version__ = "0.1.0"
