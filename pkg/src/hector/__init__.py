"""HECTOR: real-time endoscopic video MES scoring with clinician review."""

__version__ = "0.1.0"

from .domain import (
    DiscardReason,
    Frame,
    FrameVerdict,
    PipelineConfig,
    load_config,
    parse_config,
    render_config,
    validate_config,
)

__all__ = [
    "DiscardReason",
    "Frame",
    "FrameVerdict",
    "PipelineConfig",
    "load_config",
    "parse_config",
    "render_config",
    "validate_config",
    "__version__",
]
