"""Dataset ingestion and the procedurally generated corpus.

Folders of images are read in lexicographic order, center-cropped, resized
to the working resolution, and split train/val/eval by a seeded hash of the
file name so the assignment is stable across runs and machines.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
SPLIT_FRACTIONS = {"train": 0.8, "val": 0.1, "eval": 0.1}


class DataError(ValueError):
    """Unusable corpus directory or dataset request."""


@dataclass
class ImageDataset:
    images: np.ndarray  # (N, H, W, C) float32 in [0, 1]
    names: list[str]
    splits: dict[str, np.ndarray]
    resolution: int
    source: str = ""

    def __len__(self) -> int:
        return len(self.names)

    def split(self, name: str) -> np.ndarray:
        if name not in self.splits:
            raise DataError(f"unknown split {name!r}, have {sorted(self.splits)}")
        return self.images[self.splits[name]]

    def split_names(self, name: str) -> list[str]:
        return [self.names[i] for i in self.splits[name]]


def _split_of(name: str, seed: int) -> str:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    frac = int.from_bytes(digest[:8], "big") / 2**64
    if frac < SPLIT_FRACTIONS["train"]:
        return "train"
    if frac < SPLIT_FRACTIONS["train"] + SPLIT_FRACTIONS["val"]:
        return "val"
    return "eval"


def _load_one(path: Path, resolution: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        side = min(w, h)
        left = (w - side) // 2
        top = (h - side) // 2
        im = im.crop((left, top, left + side, top + side))
        if side != resolution:
            im = im.resize((resolution, resolution), Image.BILINEAR)
        return np.asarray(im, dtype=np.float32) / 255.0


def ingest(directory: str | Path, resolution: int, seed: int = 0) -> ImageDataset:
    """Load every decodable image under a directory into one dataset.

    Ordering is lexicographic over file names; undecodable files produce a
    warning and are skipped. Raises DataError when nothing loads.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    paths = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    images: list[np.ndarray] = []
    names: list[str] = []
    for p in paths:
        try:
            images.append(_load_one(p, resolution))
            names.append(p.name)
        except Exception as exc:  # undecodable file
            warnings.warn(f"skipping {p.name}: {exc}", stacklevel=2)
    if not images:
        raise DataError(f"no decodable images in {directory}")
    splits: dict[str, list[int]] = {"train": [], "val": [], "eval": []}
    for idx, name in enumerate(names):
        splits[_split_of(name, seed)].append(idx)
    return ImageDataset(
        images=np.stack(images),
        names=names,
        splits={k: np.array(v, dtype=np.int64) for k, v in splits.items()},
        resolution=resolution,
        source=str(directory),
    )


# ---------------------------------------------------------------------------
# Procedural corpus: gradient backgrounds with flat geometric shapes. Simple
# enough for a small autoencoder, structured enough for edge conditioning,
# and generated deterministically from a seed in place of a network fetch.

PALETTE = np.array(
    [
        [0.85, 0.25, 0.22],
        [0.22, 0.55, 0.82],
        [0.28, 0.72, 0.38],
        [0.90, 0.72, 0.24],
        [0.62, 0.36, 0.74],
        [0.90, 0.50, 0.20],
        [0.25, 0.70, 0.68],
        [0.55, 0.55, 0.58],
    ]
)
VALUE_MARGIN = 0.06  # keep pixels off the [0,1] rails so embedding never clips


def _render_image(rng: np.random.Generator, resolution: int) -> np.ndarray:
    ss = 4  # supersampling factor for smooth shape boundaries
    size = resolution * ss
    c0, c1 = PALETTE[rng.choice(len(PALETTE), size=2, replace=False)]
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size] / size
    t = (np.cos(theta) * xx + np.sin(theta) * yy + 1.0) / 2.0
    base = c0[None, None, :] + (c1 - c0)[None, None, :] * t[:, :, None]
    im = Image.fromarray((base * 255).astype(np.uint8))
    draw = ImageDraw.Draw(im)
    for _ in range(int(rng.integers(1, 3))):
        color = PALETTE[rng.integers(len(PALETTE))]
        fill = tuple(int(v * 255) for v in color)
        cx, cy = rng.uniform(0.2, 0.8, 2) * size
        r = rng.uniform(0.10, 0.28) * size
        kind = rng.integers(3)
        if kind == 0:
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=fill)
        elif kind == 1:
            ang = rng.uniform(0, np.pi / 2)
            dx, dy = r * np.cos(ang), r * np.sin(ang)
            draw.polygon(
                [(cx - dx, cy - dy), (cx + dy, cy - dx), (cx + dx, cy + dy), (cx - dy, cy + dx)],
                fill=fill,
            )
        else:
            pts = [
                (cx + r * np.cos(a), cy + r * np.sin(a))
                for a in rng.uniform(0, 2 * np.pi) + np.array([0, 2.094, 4.189])
            ]
            draw.polygon(pts, fill=fill)
    im = im.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(im, dtype=np.float32) / 255.0
    return VALUE_MARGIN + arr * (1.0 - 2 * VALUE_MARGIN)


def make_synthetic_corpus(
    out_dir: str | Path, n_images: int, resolution: int = 64, seed: int = 0
) -> dict:
    """Write a deterministic PNG corpus plus a pinned checksum manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    file_hashes = {}
    for i in range(n_images):
        rng = np.random.default_rng([seed, i])
        arr = _render_image(rng, resolution)
        name = f"img_{i:05d}.png"
        path = out_dir / name
        Image.fromarray((arr * 255).round().astype(np.uint8)).save(path)
        file_hashes[name] = hashlib.sha256(path.read_bytes()).hexdigest()
    corpus_hash = hashlib.sha256(
        json.dumps(file_hashes, sort_keys=True).encode()
    ).hexdigest()
    manifest = {
        "n_images": n_images,
        "resolution": resolution,
        "seed": seed,
        "corpus_sha256": corpus_hash,
    }
    (out_dir / "corpus_manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest
