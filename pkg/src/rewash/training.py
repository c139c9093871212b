"""Shared training plumbing: configs, seed streams, parameter checksums,
and checkpoint files with fingerprint headers."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch


class TrainingError(RuntimeError):
    """Training aborted (divergence, empty corpus, frozen-parameter update)."""


class FingerprintError(RuntimeError):
    """Checkpoint fingerprints do not match the components they were trained with."""


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    lr: float = 2e-4
    seed: int = 0
    val_every: int = 200
    grad_clip: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def derive_seed(base: int, *labels) -> int:
    """Deterministic 63-bit stream seed from a base seed and labels."""
    key = json.dumps([int(base), *[str(x) for x in labels]])
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def torch_generator(seed: int) -> torch.Generator:
    g = torch.Generator(device="cpu")
    g.manual_seed(seed)
    return g


def numpy_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def param_checksum(module: torch.nn.Module, prefix: str = "") -> str:
    """SHA-256 over the named parameters (and buffers) in name order.

    Used to prove that frozen groups were untouched by a training stage.
    """
    h = hashlib.sha256()
    items = list(module.named_parameters()) + list(module.named_buffers())
    for name, tensor in sorted(items, key=lambda kv: kv[0]):
        if prefix and not name.startswith(prefix):
            continue
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def assert_unchanged(label: str, before: str, after: str) -> None:
    if before != after:
        raise TrainingError(f"frozen parameter group {label!r} changed during training")


def config_fingerprint(config: dict) -> str:
    """Stable fingerprint of a JSON-serializable config dict."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def save_checkpoint(
    path: str | Path,
    kind: str,
    config: dict,
    state_dict: dict,
    fingerprints: dict | None = None,
) -> None:
    """Write a checkpoint with an embedded config and fingerprint header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "kind": kind,
        "config": config,
        "fingerprint": config_fingerprint(config),
        "upstream": fingerprints or {},
        "state": state_dict,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path, kind: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != kind:
        raise FingerprintError(
            f"checkpoint {path} holds kind {payload.get('kind')!r}, expected {kind!r}"
        )
    return payload


def check_upstream(payload: dict, expected: dict, path: str | Path = "?") -> None:
    """Verify the upstream fingerprints a checkpoint was trained against."""
    for name, fp in expected.items():
        have = payload.get("upstream", {}).get(name)
        if have is not None and have != fp:
            raise FingerprintError(
                f"checkpoint {path}: trained against {name} fingerprint {have}, "
                f"current component has {fp}"
            )


def check_finite(loss: torch.Tensor, stage: str, step: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingError(f"{stage}: non-finite loss at step {step}")
