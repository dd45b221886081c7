import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from holoforge.errors import ConfigError, DimensionError, ShapeError
from holoforge.optics import (LaserPowers, MultiplaneTarget, OpticalConfig, PhaseHologram,
                              format_length, parse_length, plane_depths, validate_config,
                              wrap_phase)


def test_defaults_are_valid():
    cfg = validate_config(OpticalConfig())
    assert cfg.wavelengths == (639e-9, 515e-9, 473e-9)
    assert cfg.brightness_scale == 1.0
    assert cfg.volume_depth == 4e-3
    assert cfg.location_offset == 10e-3
    assert cfg.pixel_pitch == 3.74e-6


def test_validation_errors():
    with pytest.raises(DimensionError):
        validate_config(OpticalConfig(pixel_pitch=0.0))
    with pytest.raises(DimensionError):
        validate_config(OpticalConfig(wavelengths=(639e-9, -1e-9, 473e-9)))
    with pytest.raises(IndexError):
        validate_config(OpticalConfig(anchor_index=3))
    with pytest.raises(ShapeError):
        validate_config(OpticalConfig(plane_count=0))
    with pytest.raises(ShapeError):
        validate_config(OpticalConfig(subframe_count=0))
    with pytest.raises(ShapeError):
        validate_config(OpticalConfig(wavelengths=()))


def test_plane_depths_examples():
    cfg = OpticalConfig(location_offset=2e-3, plane_count=1)
    np.testing.assert_allclose(plane_depths(cfg), [2e-3], rtol=1e-15)
    cfg = OpticalConfig(plane_count=4)
    np.testing.assert_allclose(plane_depths(cfg), [8.5e-3, 9.5e-3, 10.5e-3, 11.5e-3], rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(k=st.integers(1, 40), z=st.floats(1e-4, 1.0), vd=st.floats(1e-5, 1e-1))
def test_plane_depths_symmetric(k, z, vd):
    cfg = OpticalConfig(plane_count=k, location_offset=z, volume_depth=vd)
    d = plane_depths(cfg)
    assert len(d) == k
    assert np.all(np.diff(d) > 0)
    assert abs(d.mean() - z) <= 1e-12 * z
    np.testing.assert_allclose(2 * z - d[::-1], d, rtol=1e-12, atol=1e-12 * z)
    assert d[0] >= z - vd / 2 - 1e-15 and d[-1] <= z + vd / 2 + 1e-15


@settings(max_examples=200, deadline=None)
@given(theta=st.floats(-50.0, 50.0), n=st.integers(-10, 10))
def test_wrap_phase_periodic(theta, n):
    a = wrap_phase(theta + 2 * np.pi * n)
    b = wrap_phase(theta)
    assert -np.pi <= a < np.pi
    # circular distance so values straddling the cut at -pi compare equal
    assert abs(np.angle(np.exp(1j * (a - b)))) <= 1e-9


def test_lengths_round_trip():
    assert parse_length("3.74um") == 3.74e-6
    assert parse_length("639nm") == 639e-9
    assert parse_length("10mm") == 0.01
    assert parse_length("3.74µm") == 3.74e-6
    for v, unit in [(3.74e-6, "um"), (639e-9, "nm"), (0.002, "mm"), (1 / 3, "m")]:
        assert parse_length(format_length(v, unit)) == v
    with pytest.raises(ConfigError):
        parse_length(0.01)
    with pytest.raises(ConfigError):
        parse_length("10 furlongs")


def test_config_json_round_trip():
    cfg = OpticalConfig(location_offset=2e-3, brightness_scale=1.4, plane_count=5)
    text = cfg.to_json()
    d = json.loads(text)
    assert d["pixel_pitch"] == "3.74um"
    assert d["wavelengths"] == ["639nm", "515nm", "473nm"]
    back = OpticalConfig.from_json(text)
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    assert cfg.replace(brightness_scale=1.8).config_hash() != cfg.config_hash()
    with pytest.raises(ConfigError):
        OpticalConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        OpticalConfig.from_json("{not json")


def test_wavelength_ratio_conventions():
    cfg = OpticalConfig()
    assert cfg.wavelength_ratio(0) == 1.0
    assert cfg.wavelength_ratio(1) == pytest.approx(515 / 639)
    rec = cfg.replace(wavelength_ratio_convention="reciprocal")
    assert rec.wavelength_ratio(1) == pytest.approx(639 / 515)
    with pytest.raises(ConfigError):
        validate_config(cfg.replace(wavelength_ratio_convention="sideways"))


def test_single_color_powers_equal_identity():
    for t in (1, 2, 3, 5):
        lp = LaserPowers.single_color(t)
        assert lp == LaserPowers(np.eye(t))
        assert np.array_equal(lp.values, np.eye(t))
    with pytest.raises(ShapeError):
        LaserPowers.single_color(3, 2)
    with pytest.raises(ValueError):
        LaserPowers(np.full((3, 3), 1.5))


def test_hologram_wraps_and_is_readonly():
    h = PhaseHologram(np.full((2, 4, 4), 3 * np.pi))
    assert np.all(h.phases >= -np.pi) and np.all(h.phases < np.pi)
    assert h.bit_depth == 8
    with pytest.raises(ValueError):
        h.phases[0, 0, 0] = 0.0


def test_target_partition_invariant():
    inten = np.ones((2, 3, 4, 4))
    masks = np.zeros((2, 4, 4), bool)
    masks[0, :2] = True
    masks[1, 2:] = True
    t = MultiplaneTarget(inten, masks, np.array([0, 0.5, 1.0]))
    assert t.plane_count == 2 and t.primary_count == 3
    masks[1, 0, 0] = True
    with pytest.raises(ValueError):
        MultiplaneTarget(inten, masks, np.array([0, 0.5, 1.0]))
    with pytest.raises(ValueError):
        MultiplaneTarget(-inten, np.ones((2, 4, 4), bool) & np.arange(2)[:, None, None].astype(bool),
                         np.array([0, 0.5, 1.0]))
