"""Iterative hologram synthesis by gradient descent, plus 8-bit phase quantization."""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .autodiff import Adam, Tape, Tensor, ops
from .errors import DivergenceError, ShapeError
from .losses import LossReport, image_loss, light_loss
from .metrics import in_focus_quality, summarize
from .optics import (LaserPowers, MultiplaneTarget, OpticalConfig, PhaseHologram, validate_config,
                     wrap_phase)
from .propagation import reconstruct_volume, volume_intensity, volume_spectra

LEVELS = 256
LEVEL_STEP = 2.0 * np.pi / LEVELS


@dataclass(frozen=True)
class SolveSettings:
    iterations: int = 500
    step_size: float = 0.05
    power_step_size: float = 0.01
    power_mode: str = "identity"
    seed: int = 0
    quantize_each_eval: bool = False
    power_init: float = 0.9
    padded: bool = False
    max_backtracks: int = 4
    restarts: int = 4
    restart_iterations: int = 100

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (self.step_size > 0 and self.power_step_size > 0):
            raise ValueError("step sizes must be positive")
        if self.power_mode not in ("identity", "free"):
            raise ValueError(f"unknown power mode {self.power_mode!r}")
        if not 0 < self.power_init < 1:
            raise ValueError("power_init must lie in (0, 1)")
        if self.restarts < 1 or self.restart_iterations < 1:
            raise ValueError("restarts and restart_iterations must be >= 1")


class SolveResult(NamedTuple):
    hologram: PhaseHologram
    powers: LaserPowers
    trace: list


def quantize_phase(h: PhaseHologram | np.ndarray) -> np.ndarray:
    """Nearest of 256 uniform levels on [-pi, pi); -pi is level 0 and 0 is level 128.

    Phases just below +pi round onto level 0, which is the same physical phase.
    """
    phases = h.phases if isinstance(h, PhaseHologram) else wrap_phase(h)
    q = np.rint((phases + np.pi) / LEVEL_STEP).astype(np.int64) % LEVELS
    return q.astype(np.uint8)


def dequantize_phase(levels: np.ndarray) -> PhaseHologram:
    q = np.asarray(levels)
    if q.dtype != np.uint8:
        raise ValueError("quantized phases must be uint8")
    return PhaseHologram(-np.pi + q.astype(np.float64) * LEVEL_STEP)


def _check_target(target: MultiplaneTarget, config: OpticalConfig) -> None:
    if target.resolution != tuple(config.resolution):
        raise ShapeError(f"target resolution {target.resolution} != config {config.resolution}")
    if target.plane_count != config.plane_count:
        raise ShapeError(f"target has {target.plane_count} planes, config says {config.plane_count}")
    if target.primary_count != config.primary_count:
        raise ShapeError(f"target has {target.primary_count} primaries, config says "
                         f"{config.primary_count}")


def optimize_hologram(target: MultiplaneTarget, config: OpticalConfig,
                      settings: SolveSettings = SolveSettings(),
                      initial_phases: np.ndarray | None = None,
                      callback: Callable[[int, LossReport], None] | None = None) -> SolveResult:
    """Minimize the masked multiplane image loss over phases (and powers in free mode).

    Each iteration proposes an Adam step and halves it until the loss drops;
    a step that never improves is rejected, so the trace is non-increasing.
    With ``restarts > 1`` the first ``restarts * restart_iterations``
    iterations of the budget go to short runs from independent random starts
    and the best one continues (per subframe in identity mode, where the loss
    separates by primary). The returned trace covers the continuation only.
    Single starts are used when an initial phase is given or the budget is
    too small.
    Phases stay inside [-pi, pi) after every step so the loss always describes
    the hologram that would actually be displayed.
    """
    validate_config(config)
    _check_target(target, config)
    t_count, p_count = config.subframe_count, config.primary_count
    identity = settings.power_mode == "identity"
    if identity and t_count != p_count:
        raise ShapeError("identity powers need subframe_count == primary_count")
    h, w = config.resolution
    s = config.brightness_scale
    rng = np.random.default_rng(settings.seed)
    if initial_phases is None:
        theta = rng.uniform(-np.pi, np.pi, size=(t_count, h, w))
    else:
        theta = wrap_phase(np.array(initial_phases, dtype=np.float64))
        if theta.shape != (t_count, h, w):
            raise ShapeError(f"initial phases {theta.shape} != {(t_count, h, w)}")
    # Subframes seen only at ratio 1 are 2*pi periodic and may wrap freely. Any
    # other ratio makes the wrap a jump in the loss, so those phases are clipped.
    ratios = np.array([config.wavelength_ratio(p) for p in range(p_count)])
    if identity:
        periodic = ratios == 1.0
    else:
        periodic = np.full(t_count, bool(np.all(ratios == 1.0)))
    # clipped phases stop half a level below pi so 8-bit export never wraps them
    upper = np.nextafter(np.pi - LEVEL_STEP / 2, 0.0)

    def project(th):
        out = np.clip(th, -np.pi, upper)
        out[periodic] = wrap_phase(th[periodic])
        return out

    theta = project(theta)
    logit0 = np.log(settings.power_init / (1.0 - settings.power_init))
    logits = None if identity else np.full((t_count, p_count), logit0)
    spectra = volume_spectra(config, padded=settings.padded)

    def display(th):
        if settings.quantize_each_eval:
            return dequantize_phase(quantize_phase(th)).phases
        return th

    def evaluate(th, lg):
        # returns (loss tensor, phase leaf, logit leaf) recorded on a fresh tape
        ph = Tensor(th, requires_grad=True)
        # straight-through: quantization is skipped in the backward pass
        shown = ops.add(ph, Tensor(display(th) - th)) if settings.quantize_each_eval else ph
        lt = None
        powers = None
        if lg is not None:
            lt = Tensor(lg, requires_grad=True)
            powers = ops.sigmoid(lt)
        recon = volume_intensity(shown, powers, config, spectra=spectra, padded=settings.padded)
        loss = image_loss(recon, target, s)
        if not np.isfinite(loss.item()):
            raise DivergenceError(f"loss became non-finite ({loss.item()})")
        return loss, ph, lt, powers

    def report(loss, powers):
        light = light_loss(powers).item() if powers is not None else light_loss(np.eye(t_count)).item()
        return LossReport(loss.item(), {"recon": loss.item(), "light": light},
                          {"recon": 1.0, "light": 0.0})

    def descend(theta, logits, iterations, offset):
        params_np = [theta] if identity else [theta, logits]
        leaves = [Tensor(p) for p in params_np]
        lrs = [settings.step_size] + ([] if identity else [settings.power_step_size])
        opt = Adam(leaves, lr=lrs)
        tape = Tape()
        with tape:
            loss, ph, lt, powers = evaluate(theta, logits)
            loss.backward()
        trace = [report(loss, powers)]
        current = loss.item()
        grads = [ph.grad] + ([] if identity else [lt.grad])

        # persistent step multiplier: shrinks on backtracking, recovers on success
        base_scale = 1.0
        for it in range(1, iterations + 1):
            for leaf, g in zip(leaves, grads):
                leaf.grad = g
            steps = opt.proposal()
            accepted = False
            scale = base_scale
            for _ in range(settings.max_backtracks + 1):
                th_new = project(theta + scale * steps[0])
                lg_new = None if identity else logits + scale * steps[1]
                tape.clear()
                with tape:
                    loss, ph, lt, powers = evaluate(th_new, lg_new)
                    if loss.item() <= current:
                        loss.backward()
                        accepted = True
                        break
                scale *= 0.5
            base_scale = min(1.0, scale * 1.25) if accepted else max(scale, 1e-6)
            if accepted:
                theta, logits = th_new, lg_new
                current = loss.item()
                grads = [ph.grad] + ([] if identity else [lt.grad])
                rep = report(loss, powers)
            else:
                rep = trace[-1]
            trace.append(rep)
            if callback is not None:
                callback(offset + it, rep)
        tape.clear()
        return theta, logits, trace

    explore = settings.restart_iterations
    multi = (initial_phases is None and settings.restarts > 1
             and settings.restarts * explore < settings.iterations)
    if not multi:
        theta, logits, trace = descend(theta, logits, settings.iterations, 0)
    else:
        # short runs from several random starts; the lowest loss one continues
        cands = []
        for k in range(settings.restarts):
            start = theta if k == 0 else project(rng.uniform(-np.pi, np.pi, size=theta.shape))
            cands.append(descend(start, logits, explore, 0))
        if identity:
            # the loss separates by primary, so each subframe takes its best start
            scores = np.array([_per_primary_loss(c[0], config, target, spectra, settings.padded)
                               for c in cands])
            pick = np.argmin(scores, axis=0)
            theta = np.stack([cands[pick[p]][0][p] for p in range(p_count)])
        else:
            theta, logits, _ = min(cands, key=lambda c: c[2][-1].total)
        rest = settings.iterations - settings.restarts * explore
        theta, logits, trace = descend(theta, logits, rest, settings.restarts * explore)

    hologram = PhaseHologram(display(theta))
    if identity:
        final_powers = LaserPowers.single_color(t_count)
    else:
        final_powers = LaserPowers(np.clip(1.0 / (1.0 + np.exp(-logits)), 0.0, 1.0))
    return SolveResult(hologram, final_powers, trace)


def _per_primary_loss(theta, config, target, spectra, padded) -> np.ndarray:
    recon = volume_intensity(Tensor(theta), None, config, spectra=spectra, padded=padded).data
    out = []
    for p in range(config.primary_count):
        sub = MultiplaneTarget(target.intensities[:, p:p + 1], target.masks, target.bin_edges)
        out.append(image_loss(recon[:, p:p + 1], sub, config.brightness_scale).item())
    return np.array(out)


def evaluate_solution(result: SolveResult, target: MultiplaneTarget,
                      config: OpticalConfig) -> tuple[float, float]:
    """In-focus PSNR and SSIM of a solved hologram."""
    volume = reconstruct_volume(result.hologram, result.powers, config)
    return in_focus_quality(volume, target, config.brightness_scale)


SWEEP_KEYS = ("wavelengths", "brightness_scale", "volume_depth", "location_offset", "pixel_pitch")

DEFAULT_VARIABLE_SET = {
    "wavelengths": [(639e-9, 515e-9, 473e-9)],
    "brightness_scale": [1.0, 1.4, 1.8],
    "volume_depth": [4e-3],
    "location_offset": [2e-3, 10e-3],
    "pixel_pitch": [3.74e-6],
}


def _dedup(values) -> list:
    out = []
    for v in values:
        key = tuple(v) if isinstance(v, (list, tuple, np.ndarray)) else v
        if key not in out:
            out.append(key)
    return out


def sweep_configurations(base: OpticalConfig, variable_set: Mapping[str, Sequence]) -> list[OpticalConfig]:
    """Cartesian product of the variable set applied to ``base``, duplicates removed."""
    unknown = set(variable_set) - set(SWEEP_KEYS)
    if unknown:
        raise ValueError(f"unknown sweep variables {sorted(unknown)}")
    keys = [k for k in SWEEP_KEYS if k in variable_set]
    axes = [_dedup(variable_set[k]) for k in keys]
    if not keys or any(len(a) == 0 for a in axes):
        return []
    return [validate_config(base.replace(**dict(zip(keys, combo))))
            for combo in itertools.product(*axes)]


def worker_count(default: int = 1) -> int:
    env = os.environ.get("HOLOFORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return default


def sweep_configs(targets_for: Callable[[OpticalConfig], Sequence[MultiplaneTarget]],
                  variable_set: Mapping[str, Sequence], base: OpticalConfig = OpticalConfig(),
                  settings: SolveSettings = SolveSettings()) -> list[dict]:
    """Solve every configuration of the sweep and return one metrics row each.

    ``targets_for`` builds the targets for a configuration (plane count and
    resolution come from the config).
    """
    configs = sweep_configurations(base, variable_set)

    def run(cfg: OpticalConfig) -> dict:
        psnrs, ssims, losses = [], [], []
        for tgt in targets_for(cfg):
            res = optimize_hologram(tgt, cfg, settings)
            p, q = evaluate_solution(res, tgt, cfg)
            psnrs.append(p)
            ssims.append(q)
            losses.append(res.trace[-1].components["recon"])
        row = {"config_hash": cfg.config_hash()}
        row.update(summarize(psnrs, ssims))
        row.update({"recon": float(np.mean(losses)), "brightness_scale": cfg.brightness_scale,
                    "location_offset": cfg.location_offset, "volume_depth": cfg.volume_depth,
                    "pixel_pitch": cfg.pixel_pitch})
        return row

    workers = min(worker_count(), max(len(configs), 1))
    if workers <= 1:
        return [run(c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, configs))
