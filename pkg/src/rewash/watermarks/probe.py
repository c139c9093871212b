"""Perturbation-distance probe: how far a scheme moves images in pixel and
latent space, the axis separating low- from high-perturbation watermarks."""

from __future__ import annotations

import numpy as np


def pair_distances(clean: np.ndarray, marked: np.ndarray, codec) -> tuple[float, float]:
    """(pixel_l2, latent_l2) for one clean/watermarked pair."""
    if clean.shape != marked.shape:
        raise ValueError(f"pair shapes differ: {clean.shape} vs {marked.shape}")
    pixel = float(np.linalg.norm((marked - clean).ravel()))
    za = codec.encode(clean).numpy().ravel()
    zb = codec.encode(marked).numpy().ravel()
    latent = float(np.linalg.norm(zb - za))
    return pixel, latent


def perturbation_probe(watermarker, codec, images) -> dict:
    """Mean pixel/latent l2 displacement of an embed-style scheme."""
    pixels, latents = [], []
    for img in images:
        marked = watermarker.embed(img)
        p, l = pair_distances(img, marked, codec)
        pixels.append(p)
        latents.append(l)
    return {
        "scheme": watermarker.name,
        "pixel_l2": float(np.mean(pixels)),
        "latent_l2": float(np.mean(latents)),
        "n_pairs": len(pixels),
    }


def probe_report(probes: list[dict]) -> dict:
    """Rank schemes by pixel displacement; the top half is high-perturbation."""
    ordered = sorted(probes, key=lambda p: p["pixel_l2"], reverse=True)
    n_high = max(1, len(ordered) // 2) if len(ordered) > 1 else 1
    for i, p in enumerate(ordered):
        p["perturbation_class"] = "high" if i < n_high else "low"
    return {"ranking": [p["scheme"] for p in ordered], "probes": ordered}
