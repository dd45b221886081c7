"""Training and synthesis objectives built on the autodiff ops.

Every function accepts tensors or arrays and returns a scalar :class:`Tensor`
so that gradients flow when called on a live tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor, ops
from .errors import DomainError, ShapeError
from .optics import MultiplaneTarget

COLOR_WEIGHT = 0.1
SILOG_LAMBDA = 0.85
SILOG_SCALE = 10.0
TRAIN_WEIGHTS = (1.0, 1.0, 30.0)
KD_TEMPERATURE = 4.0
CHARBONNIER_EPS = 1e-3


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class LossReport:
    """Scalar total plus named components and the weights that combine them."""

    total: float
    components: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def recombine(self) -> float:
        return float(sum(self.weights[k] * v for k, v in self.components.items()))

    def as_row(self, names: Sequence[str]) -> list[float]:
        return [self.total] + [self.components.get(n, 0.0) for n in names]


def _report(parts: Mapping[str, Tensor], weights: Mapping[str, float]) -> LossReport:
    total = None
    for name, t in parts.items():
        term = ops.mul(t, float(weights[name]))
        total = term if total is None else ops.add(total, term)
    return LossReport(total.item(), {k: v.item() for k, v in parts.items()}, dict(weights), total)


def _stack_targets(target, lead: tuple) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(target, MultiplaneTarget):
        targets = [target]
    else:
        targets = list(target)
    inten = np.stack([t.intensities for t in targets])
    masks = np.stack([t.masks for t in targets])
    if not lead:
        if len(targets) != 1:
            raise ShapeError("unbatched reconstruction needs a single target")
        return inten[0], masks[0]
    if len(targets) != lead[0]:
        raise ShapeError(f"{len(targets)} targets for a batch of {lead[0]}")
    return inten, masks


def in_focus(volume: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Composite image that takes each pixel from the plane it belongs to.

    volume: (..., K, P, H, W); masks: (..., K, H, W) -> (..., P, H, W).
    """
    return np.sum(volume * masks[..., :, None, :, :], axis=-4)


def image_loss(recon, target, s: float, color_weight: float = COLOR_WEIGHT) -> Tensor:
    """Masked multiplane squared error against ``s`` times the target plus a color term.

    ``recon`` is (K, P, H, W) with one target, or (N, K, P, H, W) with N targets.
    The squared error is summed over in-focus pixels and divided by H*W*P (the
    masks partition the image). The color term compares per-primary means of
    the in-focus composite with those of the scaled target.
    """
    recon = _t(recon)
    if s < 0:
        raise DomainError("brightness scale must be nonnegative")
    if recon.ndim not in (4, 5):
        raise ShapeError(f"recon must be (K, P, H, W) or (N, K, P, H, W), got {recon.shape}")
    lead = recon.shape[:-4]
    inten, masks = _stack_targets(target, lead)
    if inten.shape != recon.shape:
        raise ShapeError(f"recon {recon.shape} does not match target {inten.shape}")
    n = int(np.prod(lead)) if lead else 1
    k, p, h, w = recon.shape[-4:]
    mfull = np.ascontiguousarray(np.broadcast_to(masks[..., :, None, :, :], recon.shape)).astype(float)

    diff = ops.mul(ops.sub(recon, s * inten), mfull)
    main = ops.mul(ops.sum_(ops.square(diff)), 1.0 / (n * h * w * p))

    # composite means per primary: sum over planes and pixels of the masked recon
    comp = ops.sum_(ops.mul(recon, mfull), axis=(0, 2, 3) if not lead else (1, 3, 4))
    comp_mean = ops.mul(comp, 1.0 / (h * w))
    tgt_mean = s * in_focus(inten, masks).mean(axis=(-2, -1))
    color = ops.mul(ops.sum_(ops.square(ops.sub(comp_mean, tgt_mean))), 1.0 / (n * p))
    return ops.add(main, ops.mul(color, color_weight))


def light_loss(powers) -> Tensor:
    """Mean squared laser power."""
    return ops.mean(ops.square(_t(powers)))


def _per_image(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise ShapeError("depth maps need at least two axes")
    h, w = x.shape[-2:]
    return ops.reshape(x, (-1, h * w)) if x.ndim > 2 else ops.reshape(x, (1, h * w))


def silog_loss(pred, gt, lam: float = SILOG_LAMBDA, scale: float = SILOG_SCALE) -> Tensor:
    """Scale-invariant log error, averaged over images in a batch."""
    pred, gt = _t(pred), _t(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"silog: {pred.shape} vs {gt.shape}")
    if np.any(pred.data <= 0) or np.any(gt.data <= 0):
        raise DomainError("silog needs strictly positive depths")
    d = _per_image(ops.sub(ops.log(pred), ops.log(gt)))
    m2 = ops.mean(ops.square(d), axis=1)
    m1 = ops.mean(d, axis=1)
    per = ops.sqrt_clamped(ops.sub(m2, ops.mul(ops.square(m1), lam)))
    return ops.mul(ops.mean(per), scale)


def _finite_diffs(x: Tensor) -> tuple[Tensor, Tensor]:
    h, w = x.shape[-2:]
    lead = (slice(None),) * (x.ndim - 2)
    dx = ops.sub(ops.getitem(x, lead + (slice(None), slice(1, w))),
                 ops.getitem(x, lead + (slice(None), slice(0, w - 1))))
    dy = ops.sub(ops.getitem(x, lead + (slice(1, h), slice(None))),
                 ops.getitem(x, lead + (slice(0, h - 1), slice(None))))
    return dx, dy


def _mean_abs_diffs(x: Tensor) -> Tensor:
    # one pooled mean over every horizontal and vertical forward difference
    dx, dy = _finite_diffs(x)
    count = dx.size + dy.size
    return ops.mul(ops.add(ops.sum_(ops.abs_(dx)), ops.sum_(ops.abs_(dy))), 1.0 / count)


def tv_loss(pred) -> Tensor:
    """Anisotropic total variation, pooled over both difference directions."""
    pred = _t(pred)
    h, w = pred.shape[-2:]
    if h < 2 or w < 2:
        raise ShapeError("tv needs at least 2x2 maps")
    return _mean_abs_diffs(pred)


def gradient_matching_loss(pred, gt) -> Tensor:
    pred, gt = _t(pred), _t(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"gradient matching: {pred.shape} vs {gt.shape}")
    return _mean_abs_diffs(ops.sub(pred, gt))


def depth_parts(pred, gt) -> dict:
    return {"silog": silog_loss(pred, gt), "gm": gradient_matching_loss(pred, gt),
            "tv": tv_loss(pred)}


def depth_loss(pred, gt) -> Tensor:
    """Unweighted sum of silog, gradient matching and TV."""
    parts = depth_parts(pred, gt)
    return ops.add(ops.add(parts["silog"], parts["gm"]), parts["tv"])


def train_loss(recon, target, powers, pred_depth, gt_depth, s: float,
               alpha: Sequence[float] = TRAIN_WEIGHTS) -> LossReport:
    """Weighted multi-task objective over reconstruction, light and depth."""
    parts = {"recon": image_loss(recon, target, s), "light": light_loss(powers),
             "depth": depth_loss(pred_depth, gt_depth)}
    return _report(parts, dict(zip(("recon", "light", "depth"), alpha)))


def kd_loss(y_student, y_teacher, temperature: float = KD_TEMPERATURE,
            teacher_first: bool = False) -> Tensor:
    """Temperature-softened KL divergence between spatial softmaxes, times T^2.

    Maps are flattened over their last two axes; any leading axes index
    separate distributions whose divergences are averaged. By default the
    student distribution sits in the first slot of the KL; ``teacher_first``
    swaps the order.
    """
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    ys, yt = _t(y_student), _t(y_teacher)
    if ys.shape != yt.shape:
        raise ShapeError(f"kd: {ys.shape} vs {yt.shape}")
    ls = ops.log_softmax(ops.mul(_per_image(ys), 1.0 / temperature), axis=1)
    lt = ops.log_softmax(ops.mul(_per_image(yt), 1.0 / temperature), axis=1)
    first, second = (lt, ls) if teacher_first else (ls, lt)
    kl = ops.sum_(ops.mul(ops.exp(first), ops.sub(first, second)), axis=1)
    return ops.mul(ops.mean(kl), temperature ** 2)


def charbonnier_loss(y_student, y_teacher, eps: float = CHARBONNIER_EPS) -> Tensor:
    """mean(sqrt(d^2 + eps^2)) - eps, zero for identical inputs."""
    ys, yt = _t(y_student), _t(y_teacher)
    if ys.shape != yt.shape:
        raise ShapeError(f"charbonnier: {ys.shape} vs {yt.shape}")
    d = ops.sub(ys, yt)
    return ops.sub(ops.mean(ops.sqrt(ops.add(ops.square(d), eps * eps))), eps)


def distill_loss(student: Mapping, teacher: Mapping, temperature: float = KD_TEMPERATURE,
                 teacher_first: bool = False, use_charbonnier: bool = True) -> LossReport:
    """Phase and depth distillation terms; the depth loss treats teacher depth as truth.

    ``student`` and ``teacher`` map "phase" and "depth" to tensors; teacher
    values are used as constants.
    """
    tp = _t(teacher["phase"]).detach()
    td = _t(teacher["depth"]).detach()
    parts = {"kd_phase": kd_loss(student["phase"], tp, temperature, teacher_first)}
    if use_charbonnier:
        parts["charbonnier"] = charbonnier_loss(student["phase"], tp)
    parts["kd_depth"] = kd_loss(student["depth"], td, temperature, teacher_first)
    parts["depth_vs_teacher"] = depth_loss(student["depth"], td)
    return _report(parts, {k: 1.0 for k in parts})


def combine(*reports: LossReport) -> LossReport:
    """Sum reports whose component names do not clash (distill + train)."""
    parts, weights = {}, {}
    total = None
    for r in reports:
        for k, v in r.components.items():
            if k in parts:
                raise ValueError(f"component {k!r} appears twice")
            parts[k] = v
            weights[k] = r.weights[k]
        total = r.tensor if total is None else ops.add(total, r.tensor)
    return LossReport(total.item(), parts, weights, total)
