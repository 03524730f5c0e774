"""Run configuration loaded from YAML.

Relative paths are resolved against the directory holding the config file.
The output directory is chosen, in order, from the ``--out`` flag, the
``RESTOREQ_OUT`` environment variable, and the ``output_dir`` key.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .evaluation import DEFAULT_FRACTIONS
from .metrics import SsimParams
from .training import TrainingConfig

OUT_ENV = "RESTOREQ_OUT"
MEASURES = ("q_mse", "q_ssim", "q_disc")


@dataclass
class SynthConfig:
    n_subjects: int = 50
    n_variants: int = 6


@dataclass
class EvaluationConfig:
    target_fnmr: float = 0.10
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    n_nonmated_per_image: int = 5
    pair_seed: int = 0
    quality_measure: str = "q_ssim"

    def __post_init__(self):
        self.fractions = tuple(float(r) for r in self.fractions)
        if not 0.0 < self.target_fnmr < 1.0:
            raise ConfigError("target_fnmr must lie in (0, 1)")
        if any(not 0.0 <= r < 1.0 for r in self.fractions):
            raise ConfigError("fractions must lie in [0, 1)")
        if self.quality_measure not in MEASURES:
            raise ConfigError(f"quality_measure must be one of {MEASURES}")


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: Path = Path("runs/default")
    manifest: Path | None = None
    generator: Path | None = None
    discriminator: Path | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    ssim: SsimParams = field(default_factory=SsimParams)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    source_text: str = ""

    def with_seed(self, seed: int) -> "RunConfig":
        self.seed = seed
        self.training.seed = seed
        return self


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def load_config(path=None, out=None, seed=None) -> RunConfig:
    """Read ``path`` (or use defaults) and apply command-line overrides."""
    text = ""
    doc = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        text = path.read_text()
        doc = yaml.safe_load(text) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base = path.parent
    known = {"seed", "output_dir", "manifest", "checkpoints", "synth", "training", "ssim", "evaluation"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    def resolve(p):
        return None if p is None else (base / p).resolve()

    run_seed = int(doc.get("seed", 0))
    training = dict(doc.get("training") or {})
    training.setdefault("seed", run_seed)
    checkpoints = doc.get("checkpoints") or {}
    cfg = RunConfig(
        seed=run_seed,
        output_dir=resolve(doc.get("output_dir", "runs/default")),
        manifest=resolve(doc.get("manifest")),
        generator=resolve(checkpoints.get("generator")),
        discriminator=resolve(checkpoints.get("discriminator")),
        synth=_section(SynthConfig, doc.get("synth"), "synth"),
        training=_section(TrainingConfig, training, "training"),
        ssim=_section(SsimParams, doc.get("ssim"), "ssim"),
        evaluation=_section(EvaluationConfig, doc.get("evaluation"), "evaluation"),
        source_text=text,
    )
    env_out = os.environ.get(OUT_ENV)
    if out is not None:
        cfg.output_dir = Path(out).resolve()
    elif env_out:
        cfg.output_dir = Path(env_out).resolve()
    if seed is not None:
        cfg.with_seed(int(seed))
    return cfg
