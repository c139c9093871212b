"""Loop-based reference Canny used as the oracle for the vectorized detector.

Written directly from the textbook definition (blur, Sobel, 4-bin NMS with
forward-strict tie breaking, 8-connected hysteresis) with explicit Python
loops and no shared code with the production path beyond constants.
"""

import math

import numpy as np


def reference_canny(
    x: np.ndarray,
    sigma: float = 1.4,
    low: float = 0.1,
    high: float = 0.2,
    blur_radius: int = 2,
) -> np.ndarray:
    if x.ndim == 3:
        gray = 0.299 * x[:, :, 0] + 0.587 * x[:, :, 1] + 0.114 * x[:, :, 2]
    else:
        gray = x.astype(np.float64)
    h, w = gray.shape

    def at(img, i, j):
        return img[min(max(i, 0), img.shape[0] - 1), min(max(j, 0), img.shape[1] - 1)]

    ax = np.arange(-blur_radius, blur_radius + 1, dtype=np.float64)
    k1 = np.exp(-0.5 * (ax / sigma) ** 2)
    k1 /= k1.sum()
    kernel = np.outer(k1, k1)

    blurred = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(-blur_radius, blur_radius + 1):
                for dj in range(-blur_radius, blur_radius + 1):
                    acc += kernel[di + blur_radius, dj + blur_radius] * at(gray, i + di, j + dj)
            blurred[i, j] = acc

    sx = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
    mag = np.zeros((h, w))
    ang = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            gx = 0.0
            gy = 0.0
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    gx += sx[di + 1][dj + 1] * at(blurred, i + di, j + dj)
                    gy += sx[dj + 1][di + 1] * at(blurred, i + di, j + dj)
            mag[i, j] = math.hypot(gx, gy)
            ang[i, j] = math.degrees(math.atan2(gy, gx)) % 180.0

    def mag_at(i, j):
        if 0 <= i < h and 0 <= j < w:
            return mag[i, j]
        return 0.0

    nms = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            a = ang[i, j]
            if a < 22.5 or a >= 157.5:
                f, b = mag_at(i, j + 1), mag_at(i, j - 1)
            elif a < 67.5:
                f, b = mag_at(i + 1, j - 1), mag_at(i - 1, j + 1)
            elif a < 112.5:
                f, b = mag_at(i + 1, j), mag_at(i - 1, j)
            else:
                f, b = mag_at(i - 1, j - 1), mag_at(i + 1, j + 1)
            if mag[i, j] > f and mag[i, j] >= b:
                nms[i, j] = mag[i, j]

    strong = {(i, j) for i in range(h) for j in range(w) if nms[i, j] >= high}
    weak = {(i, j) for i in range(h) for j in range(w) if nms[i, j] >= low}
    frontier = list(strong)
    kept = set(strong)
    while frontier:
        i, j = frontier.pop()
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                q = (i + di, j + dj)
                if q in weak and q not in kept:
                    kept.add(q)
                    frontier.append(q)
    out = np.zeros((h, w), dtype=np.uint8)
    for i, j in kept:
        out[i, j] = 1
    return out
