"""Entity-aware and motion-aware Transformers for language-driven temporal
action localization, on a small numpy autodiff core."""

from .config import RunConfig, load_config
from .model import Localizer
from .motion import decode_boundaries
from .metrics import evaluate, temporal_iou
from .synth import GenConfig, generate

__all__ = [
    "GenConfig",
    "Localizer",
    "RunConfig",
    "decode_boundaries",
    "evaluate",
    "generate",
    "load_config",
    "temporal_iou",
]
__version__ = "0.1.0"
