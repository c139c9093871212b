"""Classical low-perturbation watermark: Haar DWT, block DCT, SVD, and
quantization-index modulation of the leading singular value.

The luminance channel (0-255 scale) is decomposed one Haar level; the LL
band is cut into 4x4 blocks, each block DCT-transformed and SVD-factored,
and the top singular value is snapped to one of two interleaved grids:
(k + 0.25) q for bit 0, (k + 0.75) q for bit 1. Payload bits are assigned
to blocks cyclically and recovered by majority vote. Chroma is untouched.
Any distortion moving a singular value by less than q/4 leaves its bit
intact.
"""

from __future__ import annotations

import numpy as np

from rewash.watermarks.base import DetectionOutcome, WatermarkError

QIM_PAYLOAD_BITS = 32
DEFAULT_QIM_STEP = 36.0
BLOCK = 4

_DCT4 = None


def _dct_matrix() -> np.ndarray:
    global _DCT4
    if _DCT4 is None:
        n = BLOCK
        k = np.arange(n)[:, None]
        m = np.arange(n)[None, :]
        mat = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * m + 1) * k / (2 * n))
        mat[0] /= np.sqrt(2.0)
        _DCT4 = mat
    return _DCT4


def rgb_to_ycbcr(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 0.5
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 0.5
    return y, cb, cr


def ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    r = y + 1.402 * (cr - 0.5)
    g = y - 0.344136 * (cb - 0.5) - 0.714136 * (cr - 0.5)
    b = y + 1.772 * (cb - 0.5)
    return np.stack([r, g, b], axis=-1)


def haar2d(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One orthonormal Haar level; input dims must be even."""
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    ll = (a + b + c + d) / 2.0
    lh = (a - b + c - d) / 2.0
    hl = (a + b - c - d) / 2.0
    hh = (a - b - c + d) / 2.0
    return ll, lh, hl, hh


def ihaar2d(ll, lh, hl, hh) -> np.ndarray:
    a = (ll + lh + hl + hh) / 2.0
    b = (ll - lh + hl - hh) / 2.0
    c = (ll + lh - hl - hh) / 2.0
    d = (ll - lh - hl + hh) / 2.0
    h, w = ll.shape
    out = np.empty((h * 2, w * 2), dtype=ll.dtype)
    out[0::2, 0::2] = a
    out[0::2, 1::2] = b
    out[1::2, 0::2] = c
    out[1::2, 1::2] = d
    return out


def split_blocks(band: np.ndarray) -> np.ndarray:
    """(H, W) band -> (n_blocks, 4, 4) in row-major block order."""
    h, w = band.shape
    bh, bw = h // BLOCK, w // BLOCK
    cropped = band[: bh * BLOCK, : bw * BLOCK]
    return (
        cropped.reshape(bh, BLOCK, bw, BLOCK).transpose(0, 2, 1, 3).reshape(-1, BLOCK, BLOCK)
    )


def join_blocks(blocks: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    bh, bw = h // BLOCK, w // BLOCK
    out = blocks.reshape(bh, bw, BLOCK, BLOCK).transpose(0, 2, 1, 3).reshape(bh * BLOCK, bw * BLOCK)
    if out.shape != shape:
        full = np.zeros(shape)
        full[: out.shape[0], : out.shape[1]] = out
        return full
    return out


def block_dct(blocks: np.ndarray) -> np.ndarray:
    d = _dct_matrix()
    return d @ blocks @ d.T


def block_idct(blocks: np.ndarray) -> np.ndarray:
    d = _dct_matrix()
    return d.T @ blocks @ d


def _check_geometry(img: np.ndarray, n_bits: int) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise WatermarkError(f"expected HxWx3 image, got shape {img.shape}")
    h, w = img.shape[:2]
    if h % 2 or w % 2:
        raise WatermarkError(f"image dims must be even for the Haar level, got {h}x{w}")
    n_blocks = (h // 2 // BLOCK) * (w // 2 // BLOCK)
    if n_blocks < n_bits:
        raise WatermarkError(
            f"{h}x{w} image yields {n_blocks} blocks, fewer than {n_bits} payload bits"
        )


def dwtdctsvd_embed(img: np.ndarray, payload: np.ndarray, q: float = DEFAULT_QIM_STEP) -> np.ndarray:
    """Embed a 32-bit payload; returns a new image clipped to [0, 1]."""
    payload = np.asarray(payload)
    if len(payload) != QIM_PAYLOAD_BITS:
        raise WatermarkError(f"payload must be {QIM_PAYLOAD_BITS} bits, got {len(payload)}")
    _check_geometry(img, len(payload))
    y, cb, cr = rgb_to_ycbcr(np.asarray(img, dtype=np.float64))
    ll, lh, hl, hh = haar2d(y * 255.0)
    blocks = split_blocks(ll)
    dct = block_dct(blocks)
    u, s, vt = np.linalg.svd(dct)
    bits = payload[np.arange(len(blocks)) % len(payload)]
    s[:, 0] = (np.floor(s[:, 0] / q) + 0.25 + 0.5 * bits) * q
    rebuilt = u @ (s[:, :, None] * vt)
    ll_new = join_blocks(block_idct(rebuilt), ll.shape)
    y_new = ihaar2d(ll_new, lh, hl, hh) / 255.0
    return np.clip(ycbcr_to_rgb(y_new, cb, cr), 0.0, 1.0).astype(np.float32)


def dwtdctsvd_extract(
    img: np.ndarray, q: float = DEFAULT_QIM_STEP, n_bits: int = QIM_PAYLOAD_BITS
) -> np.ndarray:
    """Recover the payload bits by majority vote over each bit's blocks."""
    _check_geometry(img, n_bits)
    y, _, _ = rgb_to_ycbcr(np.asarray(img, dtype=np.float64))
    ll, _, _, _ = haar2d(y * 255.0)
    blocks = split_blocks(ll)
    s = np.linalg.svd(block_dct(blocks), compute_uv=False)
    block_bits = ((s[:, 0] % q) > q / 2).astype(np.int64)
    positions = np.arange(len(blocks)) % n_bits
    votes = np.zeros(n_bits)
    counts = np.zeros(n_bits)
    np.add.at(votes, positions, block_bits)
    np.add.at(counts, positions, 1)
    return (votes / counts >= 0.5).astype(np.int64)


class QimWatermarker:
    """Embed/detect wrapper carrying a fixed payload and step size."""

    name = "dwtdctsvd"
    n_bits = QIM_PAYLOAD_BITS

    def __init__(self, payload: np.ndarray, q: float = DEFAULT_QIM_STEP):
        if len(payload) != QIM_PAYLOAD_BITS:
            raise WatermarkError(f"payload must be {QIM_PAYLOAD_BITS} bits")
        self.payload = np.asarray(payload, dtype=np.int64)
        self.q = float(q)

    def embed(self, img: np.ndarray) -> np.ndarray:
        return dwtdctsvd_embed(img, self.payload, self.q)

    def detect(self, img: np.ndarray) -> DetectionOutcome:
        bits = dwtdctsvd_extract(img, self.q)
        score = float(np.mean(bits == self.payload))
        return DetectionOutcome(score=score, bits=bits)

    def to_config(self) -> dict:
        from rewash.watermarks.base import payload_to_hex

        return {"scheme": self.name, "q": self.q, "payload": payload_to_hex(self.payload)}
