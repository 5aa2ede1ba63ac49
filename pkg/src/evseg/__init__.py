"""Event-camera motion segmentation by cascaded two-level multi-model fitting."""

from .events import (Event, EventWindow, Iwe, accumulate_iwe, contrast_variance,
                     sample_bilinear, warp_event, warp_window)
from .motion import (Correspondence, DegenerateSample, FlowMotion,
                     FourParamMotion, NonConvergence, fit_minimal_dlt,
                     geometric_error, refine_model_geometric, warp_point)
from .synth import GroundTruth, InvalidSpec, ObjectSpec, SceneSpec, generate_scene

__all__ = [
    "Event", "EventWindow", "Iwe", "accumulate_iwe", "contrast_variance",
    "sample_bilinear", "warp_event", "warp_window",
    "Correspondence", "DegenerateSample", "FlowMotion", "FourParamMotion",
    "NonConvergence", "fit_minimal_dlt", "geometric_error",
    "refine_model_geometric", "warp_point",
    "GroundTruth", "InvalidSpec", "ObjectSpec", "SceneSpec", "generate_scene",
]

__version__ = "0.1.0"
