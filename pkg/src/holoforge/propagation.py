"""Band-limited angular-spectrum propagation and multiplane reconstruction."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor
from .errors import DimensionError, ShapeError
from .optics import (ComplexField, LaserPowers, OpticalConfig, PhaseHologram, plane_depths,
                     validate_config)


@dataclass(frozen=True)
class TransferFunction:
    """Frequency-domain kernel in DFT layout (zero frequency at index 0)."""

    spectrum: np.ndarray
    band_mask: np.ndarray
    wavelength: float
    distance: float
    pixel_pitch: float
    padded: bool = False

    @property
    def shape(self) -> tuple:
        return self.spectrum.shape


def band_limit(wavelength: float, distance: float, pixel_pitch: float, n: int) -> float:
    """Largest alias-free frequency along an axis of ``n`` samples."""
    du = 1.0 / (n * pixel_pitch)
    return 1.0 / (wavelength * np.sqrt((2.0 * du * distance) ** 2 + 1.0))


@lru_cache(maxsize=256)
def _tf_arrays(wavelength: float, distance: float, pixel_pitch: float, h: int, w: int,
               band_limited: bool):
    fy = np.fft.fftfreq(h, d=pixel_pitch)[:, None]
    fx = np.fft.fftfreq(w, d=pixel_pitch)[None, :]
    arg = 1.0 / wavelength ** 2 - fx ** 2 - fy ** 2
    mask = arg > 0
    if band_limited:
        mask = (mask
                & (np.abs(fx) <= band_limit(wavelength, distance, pixel_pitch, w))
                & (np.abs(fy) <= band_limit(wavelength, distance, pixel_pitch, h)))
    kz = np.sqrt(np.where(mask, arg, 0.0))
    spectrum = np.where(mask, np.exp(1j * 2.0 * np.pi * distance * kz), 0.0)
    spectrum.setflags(write=False)
    mask.setflags(write=False)
    return spectrum, mask


def make_transfer_function(wavelength: float, distance: float, pixel_pitch: float,
                           shape: tuple, padded: bool = False,
                           band_limited: bool = True) -> TransferFunction:
    """Band-limited ASM kernel for a grid of ``shape`` (doubled when ``padded``).

    ``band_limited=False`` keeps every propagating frequency; evanescent
    components are always zeroed.
    """
    if not (wavelength > 0 and pixel_pitch > 0):
        raise DimensionError("wavelength and pixel_pitch must be positive")
    h, w = shape
    if h < 2 or w < 2:
        raise ShapeError("grid must be at least 2x2")
    if padded:
        h, w = 2 * h, 2 * w
    spectrum, mask = _tf_arrays(float(wavelength), float(distance), float(pixel_pitch),
                                int(h), int(w), bool(band_limited))
    return TransferFunction(spectrum, mask, float(wavelength), float(distance),
                            float(pixel_pitch), padded)


def _check_grid(shape: tuple, tf: TransferFunction) -> None:
    expect = tuple(2 * s for s in shape) if tf.padded else tuple(shape)
    if tf.shape != expect:
        raise ShapeError(f"field grid {shape} does not match transfer function {tf.shape}")


def propagate_array(u: np.ndarray, tf: TransferFunction) -> np.ndarray:
    """IFFT(FFT(u) * H) over the last two axes, with optional 2x zero padding."""
    shape = u.shape[-2:]
    _check_grid(shape, tf)
    if not tf.padded:
        return np.fft.ifft2(np.fft.fft2(u) * tf.spectrum)
    h, w = shape
    ph, pw = h // 2, w // 2
    widths = [(0, 0)] * (u.ndim - 2) + [(ph, h - ph), (pw, w - pw)]
    out = np.fft.ifft2(np.fft.fft2(np.pad(u, widths)) * tf.spectrum)
    return out[..., ph:ph + h, pw:pw + w]


def propagate(field: ComplexField, tf: TransferFunction) -> ComplexField:
    """Transport ``field`` over ``tf.distance``; linear in the field."""
    _check_grid(field.shape, tf)
    if not np.isclose(field.pixel_pitch, tf.pixel_pitch, rtol=1e-12, atol=0) or \
            not np.isclose(field.wavelength, tf.wavelength, rtol=1e-12, atol=0):
        raise ShapeError("field and transfer function disagree on pixel pitch or wavelength")
    return ComplexField(propagate_array(field.data, tf), field.pixel_pitch, field.wavelength)


def propagate_tensor(u: Tensor, spectrum: np.ndarray, padded: bool = False) -> Tensor:
    """Differentiable propagation; ``spectrum`` must match ``u``'s (padded) shape."""
    if not padded:
        return ops.ifft2(ops.mul(ops.fft2(u), spectrum))
    h, w = u.shape[-2:]
    up = ops.pad2d(u, h // 2, w // 2)
    out = ops.ifft2(ops.mul(ops.fft2(up), spectrum))
    idx = (Ellipsis, slice(h // 2, h // 2 + h), slice(w // 2, w // 2 + w))
    return ops.getitem(out, idx)


def volume_spectra(config: OpticalConfig, distances=None, padded: bool = False) -> np.ndarray:
    """Stacked (K, P, H', W') transfer spectra for every plane and primary."""
    zs = plane_depths(config) if distances is None else np.atleast_1d(distances)
    return np.stack([
        np.stack([make_transfer_function(lam, z, config.pixel_pitch, config.resolution,
                                         padded).spectrum for lam in config.wavelengths])
        for z in zs
    ])


def volume_intensity(phases: Tensor, powers: Tensor | None, config: OpticalConfig,
                     spectra: np.ndarray | None = None, padded: bool = False) -> Tensor:
    """Differentiable multiplane intensity stack (K, P, H, W).

    intensity[k, p] = sum_t | l[t, p] * prop_{p,k}(exp(i r_p phi_t)) |^2 with
    r_p the configured wavelength ratio. ``powers=None`` means single-color
    identity powers (T == P), where only the t == p terms are nonzero and the
    zero terms are skipped.
    """
    t_count, h, w = phases.shape
    p_count = config.primary_count
    if (h, w) != tuple(config.resolution):
        raise ShapeError(f"phases {phases.shape[1:]} do not match resolution {config.resolution}")
    if spectra is None:
        spectra = volume_spectra(config, padded=padded)
    k_count = spectra.shape[0]
    ratios = [config.wavelength_ratio(p) for p in range(p_count)]

    if powers is None:
        if t_count != p_count:
            raise ShapeError("identity powers need T == P")
        # (P, H, W): subframe p lit by primary p only
        scaled = ops.stack([ops.mul(phases[p], ratios[p]) for p in range(p_count)])
        u = _transport(ops.complex_exp(scaled), spectra, k_count, padded)
        return ops.modulus_squared(u)

    if powers.shape != (t_count, p_count):
        raise ShapeError(f"powers {powers.shape} != ({t_count}, {p_count})")
    # (P, T, H, W): every subframe seen through every primary
    scaled = ops.stack([ops.mul(phases, ratios[p]) for p in range(p_count)])
    spec = np.ascontiguousarray(np.broadcast_to(
        spectra[:, :, None], (k_count, p_count, t_count) + spectra.shape[-2:]))
    u = _transport(ops.complex_exp(scaled), spec, k_count, padded)
    u = ops.reshape(u, (k_count, p_count * t_count, h, w))
    gains = ops.reshape(ops.transpose(powers, (1, 0)), (p_count * t_count,))
    u = ops.affine(u, gains, np.zeros(p_count * t_count), axis=1)
    inten = ops.reshape(ops.modulus_squared(u), (k_count, p_count, t_count, h, w))
    return ops.sum_(inten, axis=2)


def batch_volume_intensity(phases: Tensor, powers: Tensor, config: OpticalConfig,
                           spectra: np.ndarray | None = None) -> Tensor:
    """(N, K, P, H, W) intensities for N holograms (N, T, H, W) with powers (N, T, P).

    Same model as :func:`volume_intensity` in free mode, evaluated for a whole
    batch at once; |l u|^2 is computed as l^2 |u|^2.
    """
    n, t_count, h, w = phases.shape
    p_count = config.primary_count
    if (h, w) != tuple(config.resolution):
        raise ShapeError(f"phases {phases.shape[2:]} do not match resolution {config.resolution}")
    if powers.shape != (n, t_count, p_count):
        raise ShapeError(f"powers {powers.shape} != ({n}, {t_count}, {p_count})")
    if spectra is None:
        spectra = volume_spectra(config)
    k_count = spectra.shape[0]
    full = (n, k_count, p_count, t_count, h, w)
    scaled = ops.stack([ops.mul(phases, config.wavelength_ratio(p)) for p in range(p_count)],
                       axis=1)
    f = ops.fft2(ops.complex_exp(scaled))
    f = ops.expand(ops.reshape(f, (n, 1, p_count, t_count, h, w)), full)
    spec = np.ascontiguousarray(np.broadcast_to(spectra[None, :, :, None], full))
    inten = ops.modulus_squared(ops.ifft2(ops.mul(f, spec)))
    gains = ops.square(ops.transpose(powers, (0, 2, 1)))
    gains = ops.expand(ops.reshape(gains, (n, 1, p_count, t_count, 1, 1)), full)
    return ops.sum_(ops.mul(inten, gains), axis=3)


def _transport(field: Tensor, spectra: np.ndarray, k_count: int, padded: bool) -> Tensor:
    # one FFT per field, then one inverse FFT per plane
    h, w = field.shape[-2:]
    if padded:
        field = ops.pad2d(field, h // 2, w // 2)
    f = ops.fft2(field)
    f = ops.expand(ops.reshape(f, (1,) + f.shape), (k_count,) + f.shape)
    u = ops.ifft2(ops.mul(f, spectra))
    if padded:
        u = ops.getitem(u, (Ellipsis, slice(h // 2, h // 2 + h), slice(w // 2, w // 2 + w)))
    return u


def reconstruct_volume(hologram: PhaseHologram, powers: LaserPowers, config: OpticalConfig,
                       padded: bool = False) -> np.ndarray:
    """K x P x H x W intensity stack of a displayed hologram."""
    validate_config(config)
    if hologram.subframe_count != config.subframe_count:
        raise ShapeError(f"hologram has {hologram.subframe_count} subframes, config says "
                         f"{config.subframe_count}")
    if powers.shape != (config.subframe_count, config.primary_count):
        raise ShapeError(f"powers shape {powers.shape} != (T, P)")
    out = volume_intensity(Tensor(hologram.phases), Tensor(powers.values), config,
                           padded=padded)
    return out.data


def rayleigh_sommerfeld(u0: np.ndarray, wavelength: float, distance: float,
                        pixel_pitch: float) -> np.ndarray:
    """Direct first Rayleigh-Sommerfeld double sum over every source pixel.

    Independent O(N^4) reference for :func:`propagate`; only for small grids.
    """
    h, w = u0.shape
    k = 2.0 * np.pi / wavelength
    ys = (np.arange(h) - h // 2) * pixel_pitch
    xs = (np.arange(w) - w // 2) * pixel_pitch
    out = np.zeros((h, w), dtype=np.complex128)
    for iy in range(h):
        for ix in range(w):
            dy = ys[:, None] - ys[iy]
            dx = xs[None, :] - xs[ix]
            r = np.sqrt(dx * dx + dy * dy + distance * distance)
            kern = distance / (2.0 * np.pi * r * r) * (1.0 / r - 1j * k) * np.exp(1j * k * r)
            out += u0[iy, ix] * kern
    return out * pixel_pitch * pixel_pitch
