"""Declarative experiment configuration.

One JSON file per experiment; every random draw in a run derives from the
single recorded seed through named streams, so a config replay reproduces
the run exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from rewash.training import TrainConfig, config_fingerprint, derive_seed


class ConfigError(ValueError):
    """Malformed experiment configuration."""


@dataclass
class TrainParams:
    steps: int = 0
    batch_size: int = 16
    lr: float = 2e-3

    def to_train_config(self, base_seed: int, stage: str) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=derive_seed(base_seed, "train", stage),
        )


@dataclass
class AttackSpec:
    """One attack setting; grid attacks expand to one run per t_star."""

    name: str
    t_star: int | None = None
    k: int | None = None
    t_star_grid: list[int] | None = None

    VALID = ("regen", "rinse", "ctrl_regen", "ctrl_regen_plus")

    def __post_init__(self):
        if self.name not in self.VALID:
            raise ConfigError(f"unknown attack {self.name!r}, expected one of {self.VALID}")
        if self.name == "rinse" and self.k is None:
            self.k = 2
        if self.name in ("regen", "rinse") and self.t_star is None and not self.t_star_grid:
            self.t_star = 70

    def expand(self) -> list["AttackSpec"]:
        if self.t_star_grid:
            return [AttackSpec(self.name, t_star=t, k=self.k) for t in self.t_star_grid]
        return [self]

    def label(self) -> str:
        parts = [self.name]
        if self.t_star is not None:
            parts.append(f"t{self.t_star}")
        if self.name == "rinse":
            parts.append(f"k{self.k}")
        return "_".join(parts)


DEFAULT_ATTACKS = [
    {"name": "regen", "t_star": 70},
    {"name": "rinse", "t_star": 70, "k": 2},
    {"name": "ctrl_regen"},
    {"name": "ctrl_regen_plus", "t_star_grid": [100, 200, 300, 400, 500, 1000]},
]


@dataclass
class ExperimentConfig:
    workdir: str = "runs/exp"
    seed: int = 0
    resolution: int = 64

    corpus_dir: str = "corpus"
    synth_corpus_images: int = 400  # 0 = corpus_dir must already hold images

    schedule_T: int = 1000
    schedule_beta_min: float = 1e-4
    schedule_beta_max: float = 0.02
    schedule_kind: str = "linear"

    codec_variant: str = "autoencoder"  # or "identity"
    codec_downsample: int = 4
    codec_latent_channels: int = 4
    codec_base_width: int = 16
    codec_train: TrainParams = field(default_factory=lambda: TrainParams(steps=1200))

    backbone_widths: list[int] = field(default_factory=lambda: [32, 64, 96])
    backbone_ctx_dim: int = 32
    backbone_time_dim: int = 64
    backbone_train: TrainParams = field(
        default_factory=lambda: TrainParams(steps=2000, batch_size=32)
    )

    semantic_n_tokens: int = 4
    semantic_train: TrainParams = field(
        default_factory=lambda: TrainParams(steps=1500, batch_size=32)
    )

    spatial_train: TrainParams = field(
        default_factory=lambda: TrainParams(steps=1500, batch_size=32, lr=1e-3)
    )

    stega_budget: float = 0.10
    stega_train: TrainParams = field(default_factory=lambda: TrainParams(steps=2500))

    qim_step: float = 36.0
    payload_seed: int = 99

    ring_radius_lo: float = 6.0
    ring_radius_hi: float = 10.0
    ring_key_seed: int = 777

    n_sample_steps: int = 50
    schemes: list[str] = field(default_factory=lambda: ["dwtdctsvd", "stega_toy", "ring"])
    attacks: list[dict] = field(default_factory=lambda: [dict(a) for a in DEFAULT_ATTACKS])

    eval_images: int = 48
    eval_negatives: int = 200
    ring_eval_samples: int = 200

    # ------------------------------------------------------------------

    def attack_specs(self) -> list[AttackSpec]:
        return [AttackSpec(**a) for a in self.attacks]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        for key in ("codec_train", "backbone_train", "semantic_train", "spatial_train", "stega_train"):
            if key in data and isinstance(data[key], dict):
                data[key] = TrainParams(**data[key])
        unknown = set(data) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        for spec in cfg.attack_specs():  # validate attack entries eagerly
            spec.expand()
        if cfg.schemes and set(cfg.schemes) - {"dwtdctsvd", "stega_toy", "ring"}:
            raise ConfigError(f"unknown schemes in {cfg.schemes}")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.to_dict())

    # paths ------------------------------------------------------------

    def checkpoint_path(self, stage: str) -> Path:
        return Path(self.workdir) / "checkpoints" / f"{stage}.pt"

    @property
    def train_manifest_path(self) -> Path:
        return Path(self.workdir) / "train_manifest.json"

    @property
    def eval_dir(self) -> Path:
        return Path(self.workdir) / "eval"
