"""Common watermark types: detection outcomes and payload helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class WatermarkError(ValueError):
    """Invalid watermark inputs (payload length, image size, parameters)."""


@dataclass
class DetectionOutcome:
    """Per-image detection result: higher score = more watermark-like."""

    score: float
    bits: np.ndarray | None = None
    warning: str | None = None

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise WatermarkError(f"detection score must be finite, got {self.score}")


def random_payload(n_bits: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, n_bits).astype(np.int64)


def payload_to_hex(bits: np.ndarray) -> str:
    """Bit vector to hex string (manifest serialization)."""
    value = int("".join(str(int(b)) for b in bits), 2)
    width = (len(bits) + 3) // 4
    return f"{value:0{width}x}"


def hex_to_payload(hex_str: str, n_bits: int) -> np.ndarray:
    value = int(hex_str, 16)
    return np.array([(value >> (n_bits - 1 - i)) & 1 for i in range(n_bits)], dtype=np.int64)
