"""Experiment harness: config files, stage training, attack evaluation,
report rendering, and the command-line interface."""

from rewash.harness.config import AttackSpec, ExperimentConfig
from rewash.harness.stages import load_components, run_pipeline_train
from rewash.harness.evalrun import run_attack_eval

__all__ = [
    "AttackSpec",
    "ExperimentConfig",
    "load_components",
    "run_pipeline_train",
    "run_attack_eval",
]
