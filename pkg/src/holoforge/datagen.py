"""Deterministic synthetic RGB-D scenes and their multiplane targets.

Scenes are drawn with a xorshift64* generator seeded through splitmix64, so a
seed produces the same bytes on every platform. Depth 0 is the near edge of
the volume and 1 the far edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .io import ensure_dir, to_uint8, write_pfm, write_png8
from .optics import MultiplaneTarget, OpticalConfig

_MASK64 = (1 << 64) - 1


class XorShift64Star:
    """xorshift64* (Vigna 2014) with a splitmix64-scrambled seed."""

    def __init__(self, seed: int):
        z = (int(seed) + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        self.state = (z ^ (z >> 31)) or 0x2545F4914F6CDD1D

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * (1.0 / (1 << 53)))

    def integer(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi]."""
        return lo + int(self.uniform() * (hi - lo + 1))


@dataclass(frozen=True)
class SceneSample:
    rgb: np.ndarray
    depth: np.ndarray
    seed: int

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        depth = np.asarray(self.depth, dtype=np.float64)
        if rgb.ndim != 3 or depth.shape != rgb.shape[1:]:
            raise ShapeError(f"rgb {rgb.shape} and depth {depth.shape} disagree")
        for name, a in (("rgb", rgb), ("depth", depth)):
            if not np.all(np.isfinite(a)) or a.min() < 0 or a.max() > 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        rgb.setflags(write=False)
        depth.setflags(write=False)
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "depth", depth)


SHADE_SLOPE = 0.6


def _color(rng: XorShift64Star, channels: int) -> np.ndarray:
    # random hue at full value; brightness is set by depth shading
    c = np.array([rng.uniform(0.05, 1.0) for _ in range(channels)])
    return c / c.max()


def shade(depth):
    """Brightness falloff with depth, a monocular cue for the depth head."""
    return 1.0 - SHADE_SLOPE * np.asarray(depth)


def synth_scene(seed: int, height: int = 64, width: int = 64, object_count: int | None = None,
                channels: int = 3) -> SceneSample:
    """Rectangles, ellipses and gradient-filled boxes composited far to near.

    Colors have a maximum channel of 1 before shading by :func:`shade`, so
    nearer surfaces are brighter.
    """
    rng = XorShift64Star(seed)
    if object_count is None:
        object_count = rng.integer(3, 7)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    rgb = np.empty((channels, height, width))
    rgb[:] = _color(rng, channels)[:, None, None] * shade(1.0)
    depth = np.ones((height, width))

    shapes = []
    for _ in range(object_count):
        kind = rng.integer(0, 2)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry = rng.uniform(0.1, 0.35) * height
        rx = rng.uniform(0.1, 0.35) * width
        d = rng.uniform(0.05, 0.95)
        c0, c1 = _color(rng, channels), _color(rng, channels)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        shapes.append((d, kind, cy, cx, ry, rx, c0, c1, angle))
    # painter's algorithm: farthest first so nearer shapes overwrite
    shapes.sort(key=lambda s: -s[0])
    for d, kind, cy, cx, ry, rx, c0, c1, angle in shapes:
        if kind == 1:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        else:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        if not mask.any():
            continue
        if kind == 2:
            u = ((xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)) / (2.0 * max(rx, ry))
            u = np.clip(u + 0.5, 0.0, 1.0)
            fill = c0[:, None, None] * (1.0 - u) + c1[:, None, None] * u
        else:
            fill = np.broadcast_to(c0[:, None, None], rgb.shape)
        rgb = np.where(mask, fill * shade(d), rgb)
        depth = np.where(mask, d, depth)
    return SceneSample(rgb, depth, int(seed))


def make_dataset(count: int, seed: int = 0, height: int = 64, width: int = 64,
                 object_count: int | None = None) -> list[SceneSample]:
    return [synth_scene(seed + i, height, width, object_count) for i in range(count)]


def bin_edges(plane_count: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, plane_count + 1)


def depth_bins(depth: np.ndarray, plane_count: int) -> np.ndarray:
    """Bin index per pixel; a value on an edge belongs to the nearer bin."""
    edges = bin_edges(plane_count)
    idx = np.searchsorted(edges, depth, side="left") - 1
    return np.clip(idx, 0, plane_count - 1)


def slice_multiplane(sample: SceneSample, config: OpticalConfig) -> MultiplaneTarget:
    """Split an RGB-D sample into K in-focus intensity targets."""
    if sample.rgb.shape[1:] != tuple(config.resolution):
        raise ShapeError(f"sample {sample.rgb.shape[1:]} != config resolution {config.resolution}")
    if sample.rgb.shape[0] != config.primary_count:
        raise ShapeError(f"sample has {sample.rgb.shape[0]} channels, config has "
                         f"{config.primary_count} primaries")
    k = config.plane_count
    idx = depth_bins(sample.depth, k)
    masks = np.stack([idx == i for i in range(k)])
    intensities = sample.rgb[None] * masks[:, None]
    return MultiplaneTarget(intensities, masks, bin_edges(k))


def export_sample(sample: SceneSample, directory) -> list[Path]:
    d = ensure_dir(directory)
    rgb_path, depth_path = d / "rgb.png", d / "depth.pfm"
    write_png8(rgb_path, to_uint8(np.moveaxis(sample.rgb, 0, -1)))
    write_pfm(depth_path, sample.depth)
    return [rgb_path, depth_path]


def export_dataset(samples: list[SceneSample], directory, params: dict) -> list[Path]:
    """Write each sample under ``scene_<seed>`` plus a manifest.json."""
    d = ensure_dir(directory)
    files = []
    entries = []
    for s in samples:
        sub = f"scene_{s.seed:06d}"
        files += export_sample(s, d / sub)
        entries.append({"seed": s.seed, "dir": sub})
    manifest = d / "manifest.json"
    manifest.write_text(json.dumps({"generator": "xorshift64*", "params": params,
                                    "samples": entries}, indent=2, sort_keys=True) + "\n")
    files.append(manifest)
    return files
