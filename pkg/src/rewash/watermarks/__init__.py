"""Watermark schemes spanning the perturbation axis behind one interface."""

from rewash.watermarks.base import DetectionOutcome, WatermarkError, random_payload
from rewash.watermarks.qim import (
    QIM_PAYLOAD_BITS,
    QimWatermarker,
    dwtdctsvd_embed,
    dwtdctsvd_extract,
)

__all__ = [
    "DetectionOutcome",
    "WatermarkError",
    "random_payload",
    "QIM_PAYLOAD_BITS",
    "QimWatermarker",
    "dwtdctsvd_embed",
    "dwtdctsvd_extract",
]
