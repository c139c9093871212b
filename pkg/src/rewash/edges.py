"""Canny edge detection producing the binary spatial condition.

Implemented from first principles: Gaussian blur, Sobel gradients,
non-maximum suppression along the quantized gradient direction, and
hysteresis thresholding. Border handling replicates edge pixels so a
constant intensity offset never creates gradients.
"""

from __future__ import annotations

import numpy as np

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


class EdgeError(ValueError):
    """Invalid edge-detection parameters."""


def to_grayscale(x: np.ndarray) -> np.ndarray:
    """Luminance conversion with weights 0.299/0.587/0.114; HxW passes through."""
    if x.ndim == 2:
        return x.astype(np.float64)
    if x.ndim == 3 and x.shape[2] == 3:
        return x.astype(np.float64) @ LUMA_WEIGHTS
    raise EdgeError(f"expected HxW or HxWx3 image, got shape {x.shape}")


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (ax / sigma) ** 2)
    return k / k.sum()


def _correlate2d(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Cross-correlation with replicate padding (keeps offsets gradient-free)."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(img, ((ph, ph), (pw, pw)), mode="edge")
    out = np.zeros_like(img, dtype=np.float64)
    for di in range(kh):
        for dj in range(kw):
            if kernel[di, dj] == 0.0:
                continue
            out += kernel[di, dj] * padded[di : di + img.shape[0], dj : dj + img.shape[1]]
    return out


def gaussian_blur(img: np.ndarray, sigma: float, radius: int = 2) -> np.ndarray:
    k = gaussian_kernel(sigma, radius)
    return _correlate2d(_correlate2d(img, k[None, :]), k[:, None])


def sobel_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _correlate2d(img, SOBEL_X), _correlate2d(img, SOBEL_Y)


def _nms(mag: np.ndarray, angle_deg: np.ndarray) -> np.ndarray:
    """Suppress non-maxima along the gradient direction, 4 quantized bins.

    Ties break toward the forward neighbor: a pixel survives only if it is
    strictly greater than the forward neighbor and >= the backward one, so a
    symmetric two-pixel ridge collapses to a single-pixel edge.
    """
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")

    def shifted(di: int, dj: int) -> np.ndarray:
        return padded[1 + di : 1 + di + h, 1 + dj : 1 + dj + w]

    ang = np.mod(angle_deg, 180.0)
    bin0 = (ang < 22.5) | (ang >= 157.5)
    bin1 = (ang >= 22.5) & (ang < 67.5)
    bin2 = (ang >= 67.5) & (ang < 112.5)
    bin3 = (ang >= 112.5) & (ang < 157.5)

    fwd = np.zeros_like(mag)
    bwd = np.zeros_like(mag)
    for mask, (fi, fj) in ((bin0, (0, 1)), (bin1, (1, -1)), (bin2, (1, 0)), (bin3, (-1, -1))):
        fwd = np.where(mask, shifted(fi, fj), fwd)
        bwd = np.where(mask, shifted(-fi, -fj), bwd)
    keep = (mag > fwd) & (mag >= bwd)
    return np.where(keep, mag, 0.0)


def _hysteresis(nms: np.ndarray, low: float, high: float) -> np.ndarray:
    """Grow strong edges through 8-connected weak pixels until fixpoint."""
    strong = nms >= high
    weak = nms >= low
    current = strong.copy()
    while True:
        padded = np.pad(current, 1, mode="constant")
        h, w = current.shape
        neighbor_any = np.zeros_like(current)
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                neighbor_any |= padded[1 + di : 1 + di + h, 1 + dj : 1 + dj + w]
        grown = current | (weak & neighbor_any)
        if np.array_equal(grown, current):
            return current.astype(np.uint8)
        current = grown


def canny(
    x: np.ndarray,
    sigma: float = 1.4,
    low: float = 0.1,
    high: float = 0.2,
    blur_radius: int = 2,
) -> np.ndarray:
    """Binary edge map of an image with values in [0, 1].

    Thresholds apply to the raw Sobel gradient magnitude of the blurred
    luminance; defaults are the conventional 8-bit thresholds rescaled to
    the unit intensity range. Returns a uint8 HxW array with 1 on edges.
    """
    if not low < high:
        raise EdgeError(f"need low < high, got low={low}, high={high}")
    gray = to_grayscale(x)
    blurred = gaussian_blur(gray, sigma, blur_radius)
    gx, gy = sobel_gradients(blurred)
    mag = np.hypot(gx, gy)
    angle = np.degrees(np.arctan2(gy, gx))
    suppressed = _nms(mag, angle)
    return _hysteresis(suppressed, low, high)


def edge_to_rgb(edge: np.ndarray) -> np.ndarray:
    """Replicate a binary HxW edge map to HxWx3 float for conv encoders."""
    e = edge.astype(np.float32)
    return np.repeat(e[:, :, None], 3, axis=2)
