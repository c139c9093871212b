"""Regeneration-based watermark removal testbed.

A toy latent-diffusion stack (codec, noise-predicting U-Net, semantic and
spatial control networks), three watermark schemes spanning the
low/high-perturbation axis, the four regeneration attacks, and the
detection/quality metrics used to score them.
"""

__version__ = "0.1.0"

from rewash.schedule import (
    NoiseSchedule,
    ScheduleError,
    default_schedule,
    forward_noise,
    make_schedule,
    reverse_step,
    strided_times,
)

__all__ = [
    "NoiseSchedule",
    "ScheduleError",
    "default_schedule",
    "forward_noise",
    "make_schedule",
    "reverse_step",
    "strided_times",
    "__version__",
]
