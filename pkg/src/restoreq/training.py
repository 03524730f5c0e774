"""Two-stage training.

Stage 1 pretrains the generator alone, minimising ``1 - SSIM`` between its
restoration of a variant and the subject's anchor.

Stage 2 repeats, per iteration: a discriminator pass over the data
(anchors labelled 1, restorations labelled 0, binary cross-entropy) with
the discriminator weights clipped after every update, followed by a
generator pass against the frozen discriminator
(``bce(D(G(x)), 1) + recon_weight * (1 - SSIM)``).
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint  # noqa: F401  (re-exported)
from .errors import ConfigError, DivergenceError, ManifestError
from .imaging import Manifest, load_face
from .metrics import WINDOWS, SsimParams, ssim_loss_torch
from .model import Network, clip_weights_, max_abs_weight, to_tensor

log = logging.getLogger(__name__)

ITERATION_UNITS = ("epoch", "batch_step")


@dataclass
class TrainingConfig:
    stage1_iterations: int = 50
    stage2_iterations: int = 50
    batch_size: int = 64
    learning_rate: float = 0.001
    clip_c: float = 0.05
    seed: int = 0
    recon_weight: float = 0.0
    iteration_unit: str = "epoch"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    loss_window: str = "global"

    def __post_init__(self):
        self.adam_betas = tuple(float(b) for b in self.adam_betas)
        for name in ("stage1_iterations", "stage2_iterations", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.clip_c <= 0:
            raise ConfigError("clip_c must be positive")
        if self.recon_weight < 0:
            raise ConfigError("recon_weight must be >= 0")
        if self.loss_window not in WINDOWS:
            raise ConfigError(f"loss_window must be one of {WINDOWS}")
        if self.iteration_unit not in ITERATION_UNITS:
            raise ConfigError(f"iteration_unit must be one of {ITERATION_UNITS}")

    @property
    def ssim_params(self) -> SsimParams:
        return SsimParams(window=self.loss_window)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


@dataclass
class TrainingPair:
    input_id: str
    target_id: str
    subject_id: str
    input: np.ndarray
    target: np.ndarray


@dataclass
class TrainingLog:
    stage1_loss: list[float] = field(default_factory=list)
    stage2_d_loss: list[float] = field(default_factory=list)
    stage2_g_loss: list[float] = field(default_factory=list)
    # Largest |conv/FC weight| of D observed right after each D update.
    d_max_abs_weight: list[float] = field(default_factory=list)
    wall_clock: list[tuple[str, int, float]] = field(default_factory=list)

    def rows(self):
        for i, v in enumerate(self.stage1_loss):
            yield i, "stage1", "ssim_loss", v
        for i, v in enumerate(self.stage2_d_loss):
            yield i, "stage2", "d_bce", v
        for i, v in enumerate(self.stage2_g_loss):
            yield i, "stage2", "g_loss", v

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "stage", "loss_name", "value"])
            for it, stage, name, value in self.rows():
                w.writerow([it, stage, name, repr(float(value))])

    def merged(self, other: "TrainingLog") -> "TrainingLog":
        return TrainingLog(
            self.stage1_loss + other.stage1_loss,
            self.stage2_d_loss + other.stage2_d_loss,
            self.stage2_g_loss + other.stage2_g_loss,
            self.d_max_abs_weight + other.d_max_abs_weight,
            self.wall_clock + other.wall_clock,
        )


def make_training_pairs(manifest: Manifest, loader=None) -> list[TrainingPair]:
    """One (variant, anchor) pair per variant; anchors are never inputs."""
    loader = loader or (lambda image_id: load_face(manifest.resolve(image_id)))
    pairs = []
    for s in manifest.subjects:
        if not s.anchor:
            raise ManifestError(f"subject {s.subject_id!r} has no anchor")
        if not s.variants:
            raise ManifestError(f"subject {s.subject_id!r} has no variants")
        target = loader(s.anchor)
        for v in s.variants:
            if v == s.anchor:
                raise ManifestError(f"subject {s.subject_id!r} lists its anchor as a variant")
            pairs.append(TrainingPair(v, s.anchor, s.subject_id, loader(v), target))
    return pairs


def split_pairs(pairs: list[TrainingPair], holdout_fraction: float, seed: int):
    """Seeded split into ``(train, held_out)`` over variants."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n_hold = int(round(holdout_fraction * len(pairs)))
    held = set(order[:n_hold].tolist())
    train = [p for i, p in enumerate(pairs) if i not in held]
    test = [p for i, p in enumerate(pairs) if i in held]
    return train, test


@contextmanager
def _deterministic():
    prev = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prev)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _iteration_batches(n, cfg, rng):
    """Batches making up one iteration (a full epoch, or a single step)."""
    batches = _batches(n, cfg.batch_size, rng)
    return batches if cfg.iteration_unit == "epoch" else batches[:1]


def _stack(pairs):
    x = to_tensor(np.stack([p.input for p in pairs]))
    y = to_tensor(np.stack([p.target for p in pairs]))
    return x, y


def _check_finite(value: float, what: str, it: int) -> float:
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became non-finite at iteration {it}")
    return value


def train_stage1(g: Network, pairs: list[TrainingPair], cfg: TrainingConfig, iterations: int | None = None):
    """Pretrain ``g`` on ``pairs``; returns ``(new_g, TrainingLog)``.

    The input network is not modified.
    """
    if not pairs:
        raise ValueError("no training pairs")
    iterations = cfg.stage1_iterations if iterations is None else iterations
    g = copy.deepcopy(g).train()
    x_all, y_all = _stack(pairs)
    opt = torch.optim.Adam(g.parameters(), lr=cfg.learning_rate, betas=cfg.adam_betas)
    rng = np.random.default_rng(cfg.seed)
    params = cfg.ssim_params
    out = TrainingLog()
    with _deterministic():
        for it in range(iterations):
            total, count = 0.0, 0
            for idx in _iteration_batches(len(pairs), cfg, rng):
                idx = torch.from_numpy(idx)
                opt.zero_grad()
                loss = ssim_loss_torch(g(x_all[idx]), y_all[idx], params)
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
                count += len(idx)
            out.stage1_loss.append(_check_finite(total / count, "stage-1 loss", it))
            out.wall_clock.append(("stage1", it, time.time()))
            log.debug("stage1 it=%d loss=%.5f", it, out.stage1_loss[-1])
    g.eval()
    return g, out


def _set_frozen(net: Network, frozen: bool) -> None:
    for p in net.parameters():
        p.requires_grad_(not frozen)


def discriminator_step(d, opt, reals, fakes, clip_c):
    """One D update on reals (label 1) and fakes (label 0), then clipping."""
    d.train()
    x = torch.cat([reals, fakes])
    y = torch.cat([torch.ones(len(reals)), torch.zeros(len(fakes))]).to(x.dtype)
    opt.zero_grad()
    loss = F.binary_cross_entropy(d(x).reshape(-1), y)
    loss.backward()
    opt.step()
    clip_weights_(d, clip_c)
    return loss.item()


def generator_step(g, d, opt, x, target, recon_weight, params=None):
    """One G update against a frozen D; ``d`` is left bit-identical."""
    d.eval()
    _set_frozen(d, True)
    try:
        opt.zero_grad()
        restored = g(x)
        scores = d(restored).reshape(-1)
        loss = F.binary_cross_entropy(scores, torch.ones_like(scores))
        if recon_weight:
            loss = loss + recon_weight * ssim_loss_torch(restored, target, params or SsimParams(window="global"))
        loss.backward()
        opt.step()
    finally:
        _set_frozen(d, False)
    return loss.item()


def train_stage2(
    g: Network,
    d: Network,
    pairs: list[TrainingPair],
    anchors: np.ndarray,
    cfg: TrainingConfig,
    iterations: int | None = None,
):
    """Adversarial stage; returns ``(new_g, new_d, TrainingLog)``.

    ``anchors`` is an array of genuine high-quality faces ``(M, 32, 32, 3)``
    from which each D batch draws as many reals as it has fakes.
    """
    if not pairs:
        raise ValueError("no training pairs")
    iterations = cfg.stage2_iterations if iterations is None else iterations
    g, d = copy.deepcopy(g), copy.deepcopy(d)
    clip_weights_(d, cfg.clip_c)
    x_all, y_all = _stack(pairs)
    reals_all = to_tensor(np.asarray(anchors))
    g_opt = torch.optim.Adam(g.parameters(), lr=cfg.learning_rate, betas=cfg.adam_betas)
    d_opt = torch.optim.Adam(d.parameters(), lr=cfg.learning_rate, betas=cfg.adam_betas)
    rng = np.random.default_rng(cfg.seed + 1)
    out = TrainingLog()
    with _deterministic():
        for it in range(iterations):
            g.eval()
            d_total, n = 0.0, 0
            for idx in _iteration_batches(len(pairs), cfg, rng):
                with torch.no_grad():
                    fakes = g(x_all[torch.from_numpy(idx)])
                reals = reals_all[torch.from_numpy(rng.integers(0, len(reals_all), size=len(idx)))]
                d_total += discriminator_step(d, d_opt, reals, fakes, cfg.clip_c) * len(idx)
                n += len(idx)
                out.d_max_abs_weight.append(max_abs_weight(d))
            out.stage2_d_loss.append(_check_finite(d_total / n, "stage-2 D loss", it))

            g.train()
            g_total, n = 0.0, 0
            for idx in _iteration_batches(len(pairs), cfg, rng):
                idx = torch.from_numpy(idx)
                g_total += generator_step(g, d, g_opt, x_all[idx], y_all[idx], cfg.recon_weight, cfg.ssim_params) * len(idx)
                n += len(idx)
            out.stage2_g_loss.append(_check_finite(g_total / n, "stage-2 G loss", it))
            out.wall_clock.append(("stage2", it, time.time()))
            log.debug("stage2 it=%d d=%.5f g=%.5f", it, out.stage2_d_loss[-1], out.stage2_g_loss[-1])
    g.eval()
    d.eval()
    return g, d, out
