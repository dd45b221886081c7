"""Teacher training, student distillation and held-out evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..autodiff import Adam, Tape, Tensor, cosine_lr, no_grad
from ..datagen import SceneSample, slice_multiplane
from ..errors import DivergenceError
from ..losses import TRAIN_WEIGHTS, KD_TEMPERATURE, LossReport, combine, distill_loss, train_loss
from ..optics import OpticalConfig
from ..propagation import batch_volume_intensity, volume_spectra
from ..solver import DEFAULT_VARIABLE_SET, sweep_configurations
from .model import STUDENT, ToyModel, forward

log = logging.getLogger(__name__)

TRAIN_COMPONENTS = ("recon", "light", "depth")


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    lr_floor: float = 1e-6
    betas: tuple = (0.9, 0.99)
    alpha: tuple = TRAIN_WEIGHTS
    fixed_epochs: int | None = None   # epochs on the fixed config; None means half
    seed: int = 0
    temperature: float = KD_TEMPERATURE
    use_charbonnier: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    def stage_one_epochs(self) -> int:
        return self.epochs // 2 if self.fixed_epochs is None else min(self.fixed_epochs, self.epochs)


@dataclass
class TrainHistory:
    """Per-epoch means of the total and of every unweighted loss component."""

    epochs: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    seconds: float = 0.0

    def series(self, name: str) -> np.ndarray:
        return np.array([e[name] for e in self.epochs])


class _Accumulator:
    def __init__(self):
        self.sums: dict[str, float] = {}
        self.count = 0

    def add(self, report: LossReport) -> None:
        self.sums["total"] = self.sums.get("total", 0.0) + report.total
        for k, v in report.components.items():
            self.sums[k] = self.sums.get(k, 0.0) + float(v.item() if isinstance(v, Tensor) else v)
        self.count += 1

    def means(self) -> dict:
        return {k: v / max(self.count, 1) for k, v in self.sums.items()}


def fixed_config(resolution: tuple = (64, 64)) -> OpticalConfig:
    return OpticalConfig(resolution=tuple(resolution))


def permutation_configs(resolution: tuple = (64, 64)) -> list[OpticalConfig]:
    return sweep_configurations(fixed_config(resolution), DEFAULT_VARIABLE_SET)


class _Batches:
    """Stacked inputs and cached per-config targets for a list of samples."""

    def __init__(self, samples: Sequence[SceneSample]):
        self.samples = list(samples)
        self.rgb = np.stack([s.rgb for s in self.samples])
        self.depth = np.stack([s.depth for s in self.samples])
        self._targets: dict = {}
        self._spectra: dict = {}

    def targets(self, idx, config: OpticalConfig) -> list:
        key = config.config_hash()
        cache = self._targets.setdefault(key, {})
        out = []
        for i in idx:
            if i not in cache:
                cache[i] = slice_multiplane(self.samples[i], config)
            out.append(cache[i])
        return out

    def spectra(self, config: OpticalConfig) -> np.ndarray:
        key = config.config_hash()
        if key not in self._spectra:
            self._spectra[key] = volume_spectra(config)
        return self._spectra[key]


def _train_report(model: ToyModel, data: _Batches, idx, config: OpticalConfig,
                  alpha: Sequence[float]):
    out = forward(model, data.rgb[idx], config)
    recon = batch_volume_intensity(out.phase, out.powers, config, data.spectra(config))
    report = train_loss(recon, data.targets(idx, config), out.powers, out.depth,
                        data.depth[idx], config.brightness_scale, alpha)
    return report, out


def _check(report: LossReport, epoch: int) -> None:
    if not np.isfinite(report.total):
        raise DivergenceError(f"non-finite training loss at epoch {epoch + 1}")


def _run(model: ToyModel, samples: Sequence[SceneSample], settings: TrainSettings,
         step_fn) -> TrainHistory:
    data = _Batches(samples)
    n = len(data.samples)
    rng = np.random.default_rng(settings.seed)
    resolution = data.rgb.shape[-2:]
    stage_one = settings.stage_one_epochs()
    base = fixed_config(resolution)
    perms = permutation_configs(resolution)
    batches_per_epoch = -(-n // settings.batch_size)
    total_steps = settings.epochs * batches_per_epoch
    opt = Adam(model.parameters(), lr=settings.lr, betas=settings.betas)
    history = TrainHistory()
    step = 0
    t0 = time.perf_counter()
    for epoch in range(settings.epochs):
        order = rng.permutation(n)
        acc = _Accumulator()
        for b in range(batches_per_epoch):
            idx = np.sort(order[b * settings.batch_size:(b + 1) * settings.batch_size])
            config = base if epoch < stage_one else perms[step % len(perms)]
            lr = cosine_lr(settings.lr, step, total_steps, settings.lr_floor)
            opt.set_lr(lr)
            with Tape():
                report = step_fn(data, idx, config)
                _check(report, epoch)
                report.tensor.backward()
            opt.step()
            acc.add(report)
            step += 1
        history.epochs.append(acc.means())
        history.lrs.append(lr)
        log.info("epoch %d/%d loss %.5g", epoch + 1, settings.epochs, history.epochs[-1]["total"])
    history.seconds = time.perf_counter() - t0
    return history


def train_teacher(model: ToyModel, samples: Sequence[SceneSample],
                  settings: TrainSettings = TrainSettings()) -> TrainHistory:
    """Fixed-config stage followed by a stage cycling through every permutation per batch."""

    def step_fn(data, idx, config):
        report, _ = _train_report(model, data, idx, config, settings.alpha)
        return report

    return _run(model, samples, settings, step_fn)


def distill_student(teacher: ToyModel, samples: Sequence[SceneSample],
                    settings: TrainSettings = TrainSettings(),
                    student: ToyModel | None = None) -> tuple[ToyModel, TrainHistory]:
    """Train a student on the distillation terms plus the multi-task loss; the teacher is frozen."""
    if student is None:
        student = ToyModel(STUDENT, seed=settings.seed)

    def step_fn(data, idx, config):
        with no_grad():
            t = forward(teacher, data.rgb[idx], config)
        t_out = {"phase": t.phase.data, "depth": t.depth.data}
        report, out = _train_report(student, data, idx, config, settings.alpha)
        d = distill_loss({"phase": out.phase, "depth": out.depth}, t_out,
                         settings.temperature, use_charbonnier=settings.use_charbonnier)
        return combine(d, report)

    history = _run(student, samples, settings, step_fn)
    return student, history


def evaluate_model(model: ToyModel, samples: Sequence[SceneSample],
                   configs: Sequence[OpticalConfig] | None = None,
                   alpha: Sequence[float] = TRAIN_WEIGHTS, batch_size: int = 8) -> dict:
    """Mean training-loss components over ``samples`` and ``configs`` without gradients."""
    data = _Batches(samples)
    if configs is None:
        configs = [fixed_config(data.rgb.shape[-2:])]
    acc = _Accumulator()
    for config in configs:
        for start in range(0, len(data.samples), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data.samples)))
            report, _ = _train_report(model, data, idx, config, alpha)
            acc.add(report)
    return acc.means()


def phase_total_variation(model: ToyModel, samples: Sequence[SceneSample],
                          config: OpticalConfig) -> float:
    """Mean absolute neighbour difference of predicted phases (wrapped)."""
    rgb = np.stack([s.rgb for s in samples])
    ph = forward(model, rgb, config).phase.data
    dx = np.angle(np.exp(1j * np.diff(ph, axis=-1)))
    dy = np.angle(np.exp(1j * np.diff(ph, axis=-2)))
    return float((np.abs(dx).sum() + np.abs(dy).sum()) / (dx.size + dy.size))
