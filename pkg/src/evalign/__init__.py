"""Numerical core for motion-compensated RGB/event fusion.

Event voxel grids, contrast-maximization motion compensation with analytic
gradients, a synthetic event generator, the diagonal selective scan, and the
upsampling / cross-modal fusion kernels built on it.
"""
from ._backend import BACKEND
from .cmm import CmmParams, cmm_forward, cmm_refine, cmm_scan, decouple, interlace_concat, modality_affine
from .edum import EdumParams, conv2d, edum_forward, transposed_conv2d
from .errors import (
    EmptyStream,
    EvalignError,
    InvalidSpec,
    NonFiniteLoss,
    NonPositiveDelta,
    OutOfBounds,
    ParseError,
    ShapeMismatch,
    ValidationError,
)
from .events import Event, EventStream, VoxelGrid, normalize_timestamps, voxelize
from .io import read_events, write_events
from .motion import (
    FlowField,
    OptimizerConfig,
    contrast_loss,
    ecm_loss,
    ecm_loss_grad,
    optimize_flow,
    smoothness_loss,
    splat_iwe,
    timestamp_images,
    warp_events,
)
from .ssm import SSMParams, discretize, scan_chunked, selective_scan
from .synth import SceneSpec, generate

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CmmParams", "cmm_forward", "cmm_refine", "cmm_scan", "decouple", "interlace_concat", "modality_affine",
    "EdumParams", "conv2d", "edum_forward", "transposed_conv2d",
    "EmptyStream", "EvalignError", "InvalidSpec", "NonFiniteLoss", "NonPositiveDelta", "OutOfBounds",
    "ParseError", "ShapeMismatch", "ValidationError",
    "Event", "EventStream", "VoxelGrid", "normalize_timestamps", "voxelize",
    "read_events", "write_events",
    "FlowField", "OptimizerConfig", "contrast_loss", "ecm_loss", "ecm_loss_grad", "optimize_flow",
    "smoothness_loss", "splat_iwe", "timestamp_images", "warp_events",
    "SSMParams", "discretize", "scan_chunked", "selective_scan",
    "SceneSpec", "generate",
]
