"""Keyword spotting with vocal-tract-length warped MFCC features."""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
from .warp import WarpConfig, WarpGrid, default_grid, warp_frequency  # noqa: E402

__all__ = ["BACKEND", "WarpConfig", "WarpGrid", "default_grid", "warp_frequency", "__version__"]
