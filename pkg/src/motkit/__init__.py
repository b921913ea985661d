"""motkit: a desk-scale multi-object tracker with learned and photometric
motion models, a synthetic scenario simulator, and a MOT metrics suite."""

from . import backend
from .geometry import BBox, Detection, MotionDelta, SearchRegion, decode_motion, encode_motion, expand_search_region, iou

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Detection",
    "MotionDelta",
    "SearchRegion",
    "backend",
    "decode_motion",
    "encode_motion",
    "expand_search_region",
    "iou",
    "__version__",
]
