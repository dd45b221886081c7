"""Configuration-conditioned multi-head U-Net (phase, laser powers, depth).

A compact encoder-decoder stands in for large pretrained backbones. The
decoder is modulated per channel by an MLP over the optical configuration,
two phase heads cover short and long propagation distances, a light head
predicts the T x P power matrix and a depth head decodes depth as a softmax
over predicted bin centers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import ConfigError, ShapeError
from ..optics import OpticalConfig
from ..propagation import make_transfer_function

log = logging.getLogger(__name__)

BRANCH_SWITCH_Z = 4e-3
TRAINED_Z = (2e-3, 10e-3)
DEPTH_BINS = 16


@dataclass(frozen=True)
class ArchSpec:
    """Channel widths and layer style of a model family."""

    widths: tuple = (16, 32, 64)
    refine_width: int = 16
    separable_decoder: bool = False
    cond_hidden: int = 32
    head_hidden: int = 32
    subframes: int = 3
    primaries: int = 3
    bins: int = DEPTH_BINS

    def to_dict(self) -> dict:
        return {"widths": list(self.widths), "refine_width": self.refine_width,
                "separable_decoder": self.separable_decoder, "cond_hidden": self.cond_hidden,
                "head_hidden": self.head_hidden, "subframes": self.subframes,
                "primaries": self.primaries, "bins": self.bins}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


TEACHER = ArchSpec()
STUDENT = ArchSpec(widths=(8, 16, 32), refine_width=8, separable_decoder=True,
                   cond_hidden=16, head_hidden=16)

# fixed affine maps onto [0, 1]
_NORMALIZERS = {
    "wavelength": (400e-9, 700e-9),
    "brightness_scale": (1.0, 2.0),
    "pixel_pitch": (3e-6, 9e-6),
    "location_offset": (0.0, 12e-3),
    "volume_depth": (0.0, 8e-3),
}


def _norm(value: float, key: str) -> float:
    lo, hi = _NORMALIZERS[key]
    return float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))


@dataclass(frozen=True)
class ConditionVector:
    """Normalized conditioning inputs: three wavelengths, s, d_x, Z and VD."""

    values: np.ndarray

    @classmethod
    def from_config(cls, config: OpticalConfig) -> "ConditionVector":
        if config.primary_count != 3:
            raise ShapeError("conditioning expects three primaries")
        v = [_norm(lam, "wavelength") for lam in config.wavelengths]
        v += [_norm(config.brightness_scale, "brightness_scale"),
              _norm(config.pixel_pitch, "pixel_pitch"),
              _norm(config.location_offset, "location_offset"),
              _norm(config.volume_depth, "volume_depth")]
        arr = np.array(v)
        arr.setflags(write=False)
        return cls(arr)

    def __len__(self) -> int:
        return len(self.values)


COND_SIZE = 7


class ToyModel:
    """Parameters plus the layer graph; the forward pass lives in :func:`forward`."""

    def __init__(self, arch: ArchSpec = TEACHER, seed: int = 0):
        self.arch = arch
        self.seed = int(seed)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        self._build(rng)

    # -- parameter construction ------------------------------------------------
    def _conv(self, rng, name, cin, cout, k=3, gain=2.0, bias=0.0):
        std = np.sqrt(gain / (cin * k * k))
        self.params[name + ".w"] = Tensor(rng.normal(0.0, std, (cout, cin, k, k)), requires_grad=True)
        self.params[name + ".b"] = Tensor(np.full(cout, float(bias)), requires_grad=True)

    def _dw(self, rng, name, c, k=3):
        self.params[name + ".w"] = Tensor(rng.normal(0.0, np.sqrt(2.0 / (k * k)), (c, 1, k, k)),
                                          requires_grad=True)
        self.params[name + ".b"] = Tensor(np.zeros(c), requires_grad=True)

    def _fc(self, rng, name, cin, cout, gain=2.0, bias=0.0):
        self.params[name + ".w"] = Tensor(rng.normal(0.0, np.sqrt(gain / cin), (cin, cout)),
                                          requires_grad=True)
        self.params[name + ".b"] = Tensor(np.full(cout, float(bias)), requires_grad=True)

    def _decoder_conv(self, rng, name, cin, cout):
        if self.arch.separable_decoder:
            self._dw(rng, name + ".dw", cin)
            self._conv(rng, name + ".pw", cin, cout, k=1)
        else:
            self._conv(rng, name, cin, cout)

    def _build(self, rng):
        a = self.arch
        c1, c2, c3 = a.widths
        t, p = a.subframes, a.primaries
        self._conv(rng, "enc1a", 3, c1)
        self._conv(rng, "enc1b", c1, c1)
        self._conv(rng, "enc2a", c1, c2)
        self._conv(rng, "enc2b", c2, c2)
        self._conv(rng, "enc3a", c2, c3)
        self._conv(rng, "enc3b", c3, c3)
        self._decoder_conv(rng, "dec2", c3 + c2, c2)
        self._decoder_conv(rng, "dec1", c2 + c1, c1)
        self._conv(rng, "fuse2", c2, c1, k=1)
        # conditioning MLP: per-channel (scale, shift) for both decoder stages
        self._fc(rng, "cond1", COND_SIZE, a.cond_hidden)
        self._fc(rng, "cond2", a.cond_hidden, 2 * (c2 + c1), gain=0.1)
        # phase heads emit pseudo amplitude and phase per subframe
        self._conv(rng, "phase_short", c1, 2 * t, gain=1.0)
        self._conv(rng, "phase_long", c1, 2 * t, gain=1.0)
        r = a.refine_width
        self._conv(rng, "refine0", t, r)
        for i in range(1, 4):
            self._conv(rng, f"refine{i}", r, r)
        self._conv(rng, "refine4", r, t, gain=0.01)
        # light head; output bias starts every power near 0.9
        self._conv(rng, "light_conv1", c1, a.head_hidden)
        self._conv(rng, "light_conv2", a.head_hidden, a.head_hidden, gain=1.0)
        self._fc(rng, "light_fc1", a.head_hidden, a.head_hidden)
        self._fc(rng, "light_fc2", a.head_hidden, t * p, gain=0.1, bias=np.log(0.9 / 0.1))
        # depth head and bin-center predictor
        self._dw(rng, "depth_dw", c1)
        self._conv(rng, "depth_logits", c1, a.bins, k=1, gain=1.0)
        self._fc(rng, "bins_fc1", c3, a.head_hidden)
        self._fc(rng, "bins_fc2", a.head_hidden, a.bins, gain=1.0)
        init_centers = (np.arange(a.bins) + 0.5) / a.bins
        self.params["bins_fc2.b"].data = np.log(init_centers / (1.0 - init_centers))

    # -- bookkeeping -----------------------------------------------------------
    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in sorted(self.params.items())}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = set(self.params) ^ set(state)
            raise ShapeError(f"state dict keys differ: {sorted(missing)[:5]}")
        for k, v in state.items():
            if v.shape != self.params[k].shape:
                raise ShapeError(f"{k}: {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def copy(self) -> "ToyModel":
        other = ToyModel.__new__(ToyModel)
        other.arch = self.arch
        other.seed = self.seed
        other.params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return other

    def p(self, name: str) -> Tensor:
        return self.params[name]


@dataclass
class ModelOutput:
    phase: Tensor          # (N, T, H, W) wrapped hologram phases
    powers: Tensor         # (N, T, P) in [0, 1]
    depth: Tensor          # (N, H, W) in the bin-center hull
    centers: Tensor        # (N, B)
    branch: str
    refine_delta: Tensor | None = None
    extras: dict = field(default_factory=dict)


def _conv(model, x, name, relu=True):
    y = ops.conv2d(x, model.p(name + ".w"), model.p(name + ".b"))
    return ops.relu(y) if relu else y


def _decoder_conv(model, x, name):
    if model.arch.separable_decoder:
        y = ops.depthwise_conv2d(x, model.p(name + ".dw.w"), model.p(name + ".dw.b"))
        return _conv(model, y, name + ".pw")
    return _conv(model, x, name)


def _fc(model, x, name):
    y = ops.matmul(x, model.p(name + ".w"))
    n = x.shape[0]
    return ops.add(y, ops.expand(ops.reshape(model.p(name + ".b"), (1, -1)), (n, y.shape[1])))


def select_branch(z: float, strict: bool = False) -> str:
    """'long' above 4 mm, 'short' otherwise; strict mode only accepts trained distances."""
    if not any(abs(z - t) <= 1e-12 for t in TRAINED_Z):
        if strict:
            raise ConfigError(f"Z = {z * 1e3:g} mm is outside the trained set {{2, 10}} mm")
        log.warning("Z = %g mm was not seen in training; using the nearest branch", z * 1e3)
    return "long" if z > BRANCH_SWITCH_Z else "short"


def _backprop_spectra(config: OpticalConfig, t_count: int, padded: bool = False) -> np.ndarray:
    # subframe t is matched to primary t; the pseudo field travels back by Z
    return np.stack([make_transfer_function(config.wavelengths[t % config.primary_count],
                                            -config.location_offset, config.pixel_pitch,
                                            config.resolution, padded).spectrum
                     for t in range(t_count)])


def forward(model: ToyModel, rgb, config: OpticalConfig, strict_z: bool = False) -> ModelOutput:
    """Run every head on a batch of (N, 3, H, W) images that share one configuration."""
    x = rgb if isinstance(rgb, Tensor) else Tensor(np.asarray(rgb, dtype=np.float64))
    if x.ndim == 3:
        x = ops.reshape(x, (1,) + x.shape)
    n, c, h, w = x.shape
    a = model.arch
    if c != 3:
        raise ShapeError(f"expected 3 input channels, got {c}")
    if h % 4 or w % 4:
        raise ShapeError(f"input size {h}x{w} must be divisible by 4")
    if (h, w) != tuple(config.resolution):
        raise ShapeError(f"input {h}x{w} does not match config resolution {config.resolution}")
    branch = select_branch(config.location_offset, strict_z)
    c1, c2, c3 = a.widths
    t = a.subframes

    # encoder
    e1 = _conv(model, _conv(model, x, "enc1a"), "enc1b")
    e2 = _conv(model, _conv(model, ops.avg_pool2d(e1), "enc2a"), "enc2b")
    e3 = _conv(model, _conv(model, ops.avg_pool2d(e2), "enc3a"), "enc3b")

    # conditioning: one configuration per batch gives one (scale, shift) per channel
    cond = Tensor(ConditionVector.from_config(config).values.reshape(1, -1))
    film = _fc(model, ops.relu(_fc(model, cond, "cond1")), "cond2")
    film = ops.reshape(film, (2 * (c2 + c1),))
    g2 = ops.add(ops.getitem(film, slice(0, c2)), 1.0)
    b2 = ops.getitem(film, slice(c2, 2 * c2))
    g1 = ops.add(ops.getitem(film, slice(2 * c2, 2 * c2 + c1)), 1.0)
    b1 = ops.getitem(film, slice(2 * c2 + c1, 2 * (c2 + c1)))

    # decoder with skips; features are modulated after each stage
    d2 = _decoder_conv(model, ops.concat([ops.upsample_nearest(e3), e2], axis=1), "dec2")
    d2 = ops.affine(d2, g2, b2, axis=1)
    d1 = _decoder_conv(model, ops.concat([ops.upsample_nearest(d2), e1], axis=1), "dec1")
    d1 = ops.affine(d1, g1, b1, axis=1)
    fused = ops.add(d1, ops.upsample_nearest(_conv(model, d2, "fuse2", relu=False)))

    # phase: pseudo field -> back-propagate -> angle, plus refinement on the long branch
    raw = _conv(model, fused, "phase_long" if branch == "long" else "phase_short", relu=False)
    amp = ops.sigmoid(ops.getitem(raw, (slice(None), slice(0, t))))
    psi = ops.getitem(raw, (slice(None), slice(t, 2 * t)))
    field_ = ops.mul(amp, ops.complex_exp(psi))
    spec = _backprop_spectra(config, t)
    spec = np.ascontiguousarray(np.broadcast_to(spec, (n,) + spec.shape))
    at_slm = ops.ifft2(ops.mul(ops.fft2(field_), spec))
    phase = ops.angle(at_slm)
    delta = None
    if branch == "long":
        r = _conv(model, phase, "refine0")
        for i in range(1, 4):
            r = _conv(model, r, f"refine{i}")
        delta = _conv(model, r, "refine4", relu=False)
        phase = ops.add(phase, delta)
    phase = ops.wrap_phase(phase)

    # light head; it ends in a global pool, so it runs on 4x downsampled features
    lh = ops.avg_pool2d(fused, 4)
    lh = ops.sigmoid(_conv(model, lh, "light_conv1", relu=False))
    lh = ops.global_avg_pool(_conv(model, lh, "light_conv2"))
    lh = ops.relu(_fc(model, lh, "light_fc1"))
    powers = ops.reshape(ops.sigmoid(_fc(model, lh, "light_fc2")), (n, t, a.primaries))

    # depth head: per-pixel softmax over bins weighted by predicted centers
    centers = ops.sigmoid(_fc(model, ops.relu(_fc(model, ops.global_avg_pool(e3), "bins_fc1")),
                              "bins_fc2"))
    logits = ops.conv2d(ops.depthwise_conv2d(fused, model.p("depth_dw.w"), model.p("depth_dw.b")),
                        model.p("depth_logits.w"), model.p("depth_logits.b"))
    probs = ops.softmax(logits, axis=1)
    cmap = ops.expand(ops.reshape(centers, (n, a.bins, 1, 1)), (n, a.bins, h, w))
    depth = ops.sum_(ops.mul(probs, cmap), axis=1)

    return ModelOutput(phase, powers, depth, centers, branch, delta)
