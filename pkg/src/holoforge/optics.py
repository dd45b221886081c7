"""Domain types: optical configuration, fields, holograms, powers and targets.

All lengths are meters internally. JSON files carry unit-suffixed strings
("639nm", "3.74um", "10mm") which are converted through :mod:`decimal` so
that values round-trip exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from .errors import ConfigError, DimensionError, ShapeError

AS_PRINTED = "as_printed"
RECIPROCAL = "reciprocal"
RATIO_CONVENTIONS = (AS_PRINTED, RECIPROCAL)

_UNITS = {"m": "1", "mm": "1e-3", "um": "1e-6", "µm": "1e-6", "nm": "1e-9"}
_LENGTH_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(m|mm|um|µm|nm)\s*$")


def parse_length(text) -> float:
    """Convert a unit-suffixed length string to meters."""
    if not isinstance(text, str):
        raise ConfigError(f"length {text!r} needs an explicit unit suffix (m, mm, um, nm)")
    m = _LENGTH_RE.match(text)
    if not m:
        raise ConfigError(f"cannot parse length {text!r}")
    return float(Decimal(m.group(1)) * Decimal(_UNITS[m.group(2)]))


def format_length(value: float, unit: str) -> str:
    """Inverse of :func:`parse_length` for a chosen unit; exact for any float."""
    q = Decimal(repr(float(value))) / Decimal(_UNITS[unit])
    return f"{q.normalize():f}{unit}"


def wrap_phase(theta):
    """Wrap angles to [-pi, pi); values already in range are returned unchanged."""
    t = np.asarray(theta, dtype=np.float64)
    w = np.mod(t + np.pi, 2.0 * np.pi) - np.pi
    # the shifted mod can round a value just below pi onto -pi
    w = np.where(w >= np.pi, -np.pi, w)
    return np.where((t >= -np.pi) & (t < np.pi), t, w)


@dataclass(frozen=True)
class OpticalConfig:
    """Display parameters conditioning every computation.

    Defaults are the fixed training setting: RGB primaries at
    (639, 515, 473) nm, s = 1.0, VD = 4 mm, Z = 10 mm, d_x = 3.74 um.
    """

    wavelengths: tuple = (639e-9, 515e-9, 473e-9)
    anchor_index: int = 0
    pixel_pitch: float = 3.74e-6
    location_offset: float = 10e-3
    volume_depth: float = 4e-3
    plane_count: int = 3
    brightness_scale: float = 1.0
    subframe_count: int = 3
    wavelength_ratio_convention: str = AS_PRINTED
    resolution: tuple = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "wavelengths", tuple(float(v) for v in self.wavelengths))
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))

    @property
    def primary_count(self) -> int:
        return len(self.wavelengths)

    @property
    def anchor_wavelength(self) -> float:
        return self.wavelengths[self.anchor_index]

    def wavelength_ratio(self, p: int) -> float:
        """Factor multiplying the displayed phase when primary ``p`` illuminates it."""
        lam = self.wavelengths[p]
        if self.wavelength_ratio_convention == AS_PRINTED:
            return lam / self.anchor_wavelength
        return self.anchor_wavelength / lam

    def replace(self, **changes) -> "OpticalConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "wavelengths": [format_length(v, "nm") for v in self.wavelengths],
            "anchor_index": self.anchor_index,
            "pixel_pitch": format_length(self.pixel_pitch, "um"),
            "location_offset": format_length(self.location_offset, "mm"),
            "volume_depth": format_length(self.volume_depth, "mm"),
            "plane_count": self.plane_count,
            "brightness_scale": self.brightness_scale,
            "subframe_count": self.subframe_count,
            "wavelength_ratio_convention": self.wavelength_ratio_convention,
            "resolution": list(self.resolution),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OpticalConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "wavelengths" in kw:
            kw["wavelengths"] = tuple(parse_length(v) for v in kw["wavelengths"])
        for key in ("pixel_pitch", "location_offset", "volume_depth"):
            if key in kw:
                kw[key] = parse_length(kw[key])
        if "resolution" in kw:
            kw["resolution"] = tuple(kw["resolution"])
        for key in ("anchor_index", "plane_count", "subframe_count"):
            if key in kw and not isinstance(kw[key], int):
                raise ConfigError(f"{key} must be an integer")
        if "brightness_scale" in kw:
            kw["brightness_scale"] = float(kw["brightness_scale"])
        return validate_config(cls(**kw))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "OpticalConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(d)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def validate_config(config: OpticalConfig) -> OpticalConfig:
    """Return ``config`` unchanged if every invariant holds."""
    lengths = {
        "pixel_pitch": config.pixel_pitch,
        "volume_depth": config.volume_depth,
    }
    lengths.update({f"wavelengths[{i}]": v for i, v in enumerate(config.wavelengths)})
    for name, v in lengths.items():
        if not (math.isfinite(v) and v > 0):
            raise DimensionError(f"{name} must be a positive length, got {v}")
    if not math.isfinite(config.location_offset):
        raise DimensionError("location_offset must be finite")
    for name, v in (("plane_count", config.plane_count), ("subframe_count", config.subframe_count),
                    ("primary_count", config.primary_count)):
        if v < 1:
            raise ShapeError(f"{name} must be >= 1, got {v}")
    if not 0 <= config.anchor_index < config.primary_count:
        raise IndexError(f"anchor_index {config.anchor_index} outside [0, {config.primary_count})")
    if len(config.resolution) != 2 or min(config.resolution) < 2:
        raise ShapeError(f"resolution must be two integers >= 2, got {config.resolution}")
    if not (math.isfinite(config.brightness_scale) and config.brightness_scale >= 0):
        raise ConfigError(f"brightness_scale must be >= 0, got {config.brightness_scale}")
    if config.wavelength_ratio_convention not in RATIO_CONVENTIONS:
        raise ConfigError(f"unknown wavelength_ratio_convention {config.wavelength_ratio_convention!r}")
    return config


def plane_depths(config: OpticalConfig) -> np.ndarray:
    """Bin-midpoint plane distances, strictly increasing and centered on Z."""
    k = config.plane_count
    vd = config.volume_depth
    return config.location_offset - vd / 2 + (np.arange(k) + 0.5) * vd / k


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ComplexField:
    data: np.ndarray
    pixel_pitch: float
    wavelength: float

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.complex128)
        if d.ndim != 2 or min(d.shape) < 2:
            raise ShapeError(f"field must be a 2D grid at least 2x2, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("field contains non-finite values")
        if self.pixel_pitch <= 0 or self.wavelength <= 0:
            raise DimensionError("pixel_pitch and wavelength must be positive")
        object.__setattr__(self, "data", _readonly(d))

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def intensity(self) -> np.ndarray:
        return np.abs(self.data) ** 2


@dataclass(frozen=True)
class PhaseHologram:
    """T phase maps stored wrapped to [-pi, pi)."""

    phases: np.ndarray
    bit_depth: int = field(default=8, init=False)

    def __post_init__(self):
        p = np.asarray(self.phases, dtype=np.float64)
        if p.ndim == 2:
            p = p[None]
        if p.ndim != 3:
            raise ShapeError(f"phases must be (T, H, W), got {p.shape}")
        object.__setattr__(self, "phases", _readonly(wrap_phase(p)))

    @property
    def subframe_count(self) -> int:
        return self.phases.shape[0]

    @property
    def resolution(self) -> tuple:
        return self.phases.shape[1:]


@dataclass(frozen=True)
class LaserPowers:
    """T x P peak-brightness matrix with entries in [0, 1]."""

    values: np.ndarray
    mode: str = "free"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"powers must be T x P, got {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > 1:
            raise ValueError("laser powers must lie in [0, 1]")
        if self.mode not in ("identity", "free"):
            raise ValueError(f"unknown power mode {self.mode!r}")
        if self.mode == "identity" and (v.shape[0] != v.shape[1] or not np.array_equal(v, np.eye(v.shape[0]))):
            raise ValueError("single-color powers must equal the identity matrix")
        object.__setattr__(self, "values", _readonly(v))

    @classmethod
    def single_color(cls, t: int, p: int | None = None) -> "LaserPowers":
        if p is not None and p != t:
            raise ShapeError("single-color holograms need T == P")
        return cls(np.eye(t), mode="identity")

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def __eq__(self, other):
        if isinstance(other, LaserPowers):
            return self.shape == other.shape and np.array_equal(self.values, other.values)
        return NotImplemented

    __hash__ = None


@dataclass(frozen=True)
class MultiplaneTarget:
    """Per-plane, per-primary intensity targets with in-focus masks.

    intensities: (K, P, H, W) nonnegative; masks: (K, H, W) booleans that
    partition the image; bin_edges: K + 1 monotone normalized depths.
    """

    intensities: np.ndarray
    masks: np.ndarray
    bin_edges: np.ndarray

    def __post_init__(self):
        it = np.asarray(self.intensities, dtype=np.float64)
        mk = np.asarray(self.masks, dtype=bool)
        be = np.asarray(self.bin_edges, dtype=np.float64)
        if it.ndim != 4 or mk.ndim != 3 or it.shape[0] != mk.shape[0] or it.shape[2:] != mk.shape[1:]:
            raise ShapeError(f"intensities {it.shape} and masks {mk.shape} disagree")
        if be.shape != (mk.shape[0] + 1,) or np.any(np.diff(be) <= 0):
            raise ShapeError("bin_edges must be K + 1 strictly increasing values")
        if not np.all(np.isfinite(it)) or it.min() < 0:
            raise ValueError("intensities must be finite and nonnegative")
        if not np.all(mk.sum(axis=0) == 1):
            raise ValueError("masks must partition the image")
        object.__setattr__(self, "intensities", _readonly(it))
        object.__setattr__(self, "masks", _readonly(mk))
        object.__setattr__(self, "bin_edges", _readonly(be))

    @property
    def plane_count(self) -> int:
        return self.masks.shape[0]

    @property
    def primary_count(self) -> int:
        return self.intensities.shape[1]

    @property
    def resolution(self) -> tuple:
        return self.masks.shape[1:]

    @classmethod
    def single_plane(cls, intensity: np.ndarray) -> "MultiplaneTarget":
        """One plane holding the full (P, H, W) image."""
        intensity = np.asarray(intensity, dtype=np.float64)
        h, w = intensity.shape[1:]
        return cls(intensity[None], np.ones((1, h, w), dtype=bool), np.array([0.0, 1.0]))

