"""Feature-sampling visual tracker.

One backbone pass per frame; per-candidate features come from bilinear
resampling of two shared feature maps; positives are diversified online by
adversarially chosen dropout masks; a small two-class head is trained
online with hard-negative mining.
"""

__version__ = "0.1.0"

from .config import TrackerConfig, harness_config, paper_config
from .geometry import BBox
from .sequence import Sequence
from .tracker import Tracker, track_sequence

__all__ = [
    "BBox",
    "Sequence",
    "Tracker",
    "TrackerConfig",
    "harness_config",
    "paper_config",
    "track_sequence",
    "__version__",
]
