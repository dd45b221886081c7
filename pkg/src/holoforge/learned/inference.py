"""Hologram prediction from a single RGB image, with simulation and scoring."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..autodiff import Tensor, no_grad
from ..io import write_csv, write_pfm, write_png8
from ..metrics import psnr, ssim
from ..optics import LaserPowers, MultiplaneTarget, OpticalConfig, PhaseHologram
from ..propagation import reconstruct_volume
from ..solver import quantize_phase
from .model import ToyModel, forward


@dataclass
class InferenceResult:
    hologram: PhaseHologram
    powers: LaserPowers
    depth: np.ndarray
    volume: np.ndarray
    branch: str
    seconds: float
    plane_metrics: list   # (psnr, ssim) per plane, empty without a reference

    def write(self, directory) -> list[Path]:
        directory = Path(directory)
        files = []
        for t, level in enumerate(quantize_phase(self.hologram)):
            files.append(directory / f"phase_t{t}.png")
            write_png8(files[-1], level)
        files.append(directory / "powers.csv")
        p = self.powers.shape[1]
        write_csv(files[-1], [f"p{j}" for j in range(p)], self.powers.values.tolist())
        files.append(directory / "depth.pfm")
        write_pfm(files[-1], self.depth)
        return files


def infer(model: ToyModel, rgb: np.ndarray, config: OpticalConfig,
          reference: MultiplaneTarget | None = None, strict_z: bool = False) -> InferenceResult:
    """Forward one (3, H, W) image, reconstruct the volume and score it per plane."""
    rgb = np.asarray(rgb, dtype=np.float64)
    t0 = time.perf_counter()
    with no_grad():
        out = forward(model, Tensor(rgb[None]), config, strict_z=strict_z)
    seconds = time.perf_counter() - t0
    hologram = PhaseHologram(out.phase.data[0])
    powers = LaserPowers(np.clip(out.powers.data[0], 0.0, 1.0))
    volume = reconstruct_volume(hologram, powers, config)
    metrics = []
    if reference is not None:
        s = config.brightness_scale
        for k in range(volume.shape[0]):
            # in-focus region of plane k against the matching slice of the target
            a = np.clip(volume[k] / s, 0.0, 1.0) * reference.masks[k]
            b = reference.intensities[k]
            metrics.append((psnr(a, b), ssim(a, b)))
    return InferenceResult(hologram, powers, out.depth.data[0], volume, out.branch, seconds,
                           metrics)


def time_forward(model: ToyModel, rgb: np.ndarray, config: OpticalConfig,
                 repeats: int = 5) -> float:
    """Median forward wall-clock in seconds for one image."""
    x = Tensor(np.asarray(rgb, dtype=np.float64)[None])
    times = []
    with no_grad():
        forward(model, x, config)
        for _ in range(repeats):
            t0 = time.perf_counter()
            forward(model, x, config)
            times.append(time.perf_counter() - t0)
    return float(np.median(times))
