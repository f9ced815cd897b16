"""Continuous-scale super-resolution with a neural-operator-conditioned diffusion model."""

from .schedule import NoiseSchedule, inference_subsequence, make_schedule, sample_gamma

__version__ = "0.1.0"

__all__ = ["NoiseSchedule", "make_schedule", "sample_gamma", "inference_subsequence", "__version__"]
