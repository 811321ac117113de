"""Surface-normal integration via relative scales of continuous components."""

from .cli import RunConfig
from .continuity import WeightParams
from .geometry import (
    CameraIntrinsics,
    LogDepthMap,
    NormalMap,
    RayField,
    depth_from_logdepth,
)
from .graph import (
    Partition,
    PixelGraph,
    QuotientGraph,
    build_pixel_graph,
    build_quotient,
    form_components,
    merge_components,
)
from .metrics import EvalReport, evaluate, min_theoretical_made
from .pipeline import PipelineResult, run_pipeline, run_pixel_baseline
from .solver import SolveSettings
from .synth import SceneSpec, perturb_normals, render_scene

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "EvalReport",
    "LogDepthMap",
    "NormalMap",
    "Partition",
    "PipelineResult",
    "PixelGraph",
    "QuotientGraph",
    "RayField",
    "RunConfig",
    "SceneSpec",
    "SolveSettings",
    "WeightParams",
    "build_pixel_graph",
    "build_quotient",
    "depth_from_logdepth",
    "evaluate",
    "form_components",
    "merge_components",
    "min_theoretical_made",
    "perturb_normals",
    "render_scene",
    "run_pipeline",
    "run_pixel_baseline",
]
