"""Temporally consistent stylized video streaming with interactive control."""

from .consistency import (
    ConsistencyParams,
    PRESETS,
    SessionState,
    SolverDivergence,
    adaptive_blend,
    consistency_weight,
    input_blend,
    local_blend,
    preset,
    screened_poisson_energy,
    solve_screened_poisson,
    stabilize_step,
    stabilize_stream,
    stream_end_step,
    warp_weight,
)
from .flow import (
    BuiltinFlow,
    CachingFlow,
    ConstantFlow,
    FloDirFlow,
    FlowOptions,
    ResolutionMismatch,
    backward_warp,
    endpoint_error,
    estimate_flow,
    flow_to_color,
    occlusion_mask,
)
from .imgio import (
    FlowField,
    FlowFormatError,
    FrameSource,
    ImageIOError,
    discover_source,
    load_frame,
    read_flo,
    save_frame,
    write_flo,
)
from .metrics import MetricReport, ssim, ssim_report, warping_error

__all__ = [
    "BuiltinFlow",
    "CachingFlow",
    "ConsistencyParams",
    "ConstantFlow",
    "FloDirFlow",
    "FlowField",
    "FlowFormatError",
    "FlowOptions",
    "FrameSource",
    "ImageIOError",
    "MetricReport",
    "PRESETS",
    "ResolutionMismatch",
    "SessionState",
    "SolverDivergence",
    "adaptive_blend",
    "backward_warp",
    "consistency_weight",
    "discover_source",
    "endpoint_error",
    "estimate_flow",
    "flow_to_color",
    "input_blend",
    "load_frame",
    "local_blend",
    "occlusion_mask",
    "preset",
    "read_flo",
    "save_frame",
    "screened_poisson_energy",
    "solve_screened_poisson",
    "ssim",
    "ssim_report",
    "stabilize_step",
    "stabilize_stream",
    "stream_end_step",
    "warp_weight",
    "warping_error",
    "write_flo",
]
