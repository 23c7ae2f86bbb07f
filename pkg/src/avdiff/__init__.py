"""Desk-scale two-stream text-to-audible-video latent diffusion."""

from .config import RunConfig
from .schedule import NoiseSchedule, make_linear_schedule

__all__ = ["RunConfig", "NoiseSchedule", "make_linear_schedule"]
__version__ = "0.1.0"
