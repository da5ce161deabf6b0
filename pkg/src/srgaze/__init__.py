"""Super-resolution-assisted appearance-based gaze estimation pipeline."""

from .geometry import (angular_error_deg, mean_angular_error,
                       pitchyaw_to_vector, vector_to_pitchyaw)
from .imutils import psnr_db, PSNR_INF

__all__ = [
    "angular_error_deg", "mean_angular_error",
    "pitchyaw_to_vector", "vector_to_pitchyaw",
    "psnr_db", "PSNR_INF",
]

__version__ = "0.1.0"
