"""Image quality metrics and the metrics table format."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ShapeError
from .io import write_csv

PSNR_CAP = 100.0
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5, an 11x11 window at sigma 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 dB for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(data_range ** 2 / mse))


def _ssim_2d(a: np.ndarray, b: np.ndarray, data_range: float) -> float:
    c1 = SSIM_C1 * data_range ** 2
    c2 = SSIM_C2 * data_range ** 2

    def blur(x):
        return gaussian_filter(x, SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    smap = num / den
    r = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    # border pixels see a reflected window; leave them out of the mean
    return float(smap[r:-r, r:-r].mean())


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Gaussian-window SSIM; (C, H, W) inputs are averaged over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return _ssim_2d(a, b, data_range)
    if a.ndim == 3:
        return float(np.mean([_ssim_2d(x, y, data_range) for x, y in zip(a, b)]))
    raise ShapeError("ssim expects (H, W) or (C, H, W)")


METRIC_COLUMNS = ["config_hash", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std"]


def summarize(psnrs: Sequence[float], ssims: Sequence[float]) -> dict:
    p = np.asarray(psnrs, dtype=float)
    s = np.asarray(ssims, dtype=float)
    return {"psnr_mean": float(p.mean()), "psnr_std": float(p.std()),
            "ssim_mean": float(s.mean()), "ssim_std": float(s.std())}


def write_metrics_csv(path, rows: Sequence[dict], loss_names: Sequence[str] = ()) -> None:
    """One row per configuration: hash, PSNR/SSIM statistics, then loss components."""
    extra = [k for k in rows[0] if k not in METRIC_COLUMNS] if rows else []
    for name in loss_names:
        if name not in extra:
            extra.append(name)
    header = METRIC_COLUMNS + extra
    write_csv(path, header, [[r.get(c, "") for c in header] for r in rows])


def in_focus_quality(volume: np.ndarray, target, s: float) -> tuple[float, float]:
    """PSNR and SSIM of the in-focus composite, brightness-normalized by ``s``.

    No clipping is applied, so over- and under-shoot both count as error.
    """
    from .losses import in_focus

    masks = np.asarray(target.masks, dtype=float)
    scale = s if s > 0 else 1.0
    recon = in_focus(np.asarray(volume), masks) / scale
    ref = in_focus(np.asarray(target.intensities), masks)
    return psnr(recon, ref), ssim(recon, ref)
