"""Video inpainting at low resolution with full-resolution residual aggregation.

The heavy lifting (joint alignment, temporal and spatial attention) happens
on downsampled frames; detail is restored by aggregating the high-frequency
residuals of the full-resolution frames with the same attention weights and
alignments.  All learned components are replaced by deterministic classical
ones (masked affine registration, pyramidal Lucas-Kanade flow, hand-made
feature encoder, patch-based spatial aggregation).
"""
from .core import (
    AlignmentUnavailable,
    InvalidInputError,
    NoUsableReference,
    SpatialContextUnavailable,
)
from .pipeline import PipelineConfig, VideoJob, process_frame, run, run_arrays

__all__ = [
    "AlignmentUnavailable",
    "InvalidInputError",
    "NoUsableReference",
    "SpatialContextUnavailable",
    "PipelineConfig",
    "VideoJob",
    "process_frame",
    "run",
    "run_arrays",
]

__version__ = "0.1.0"
