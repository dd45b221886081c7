import numpy as np
import pytest

from holoforge.io import (read_complex_pfm, read_csv, read_pfm, read_png8, to_uint8, write_complex_pfm,
                          write_csv, write_pfm, write_png8)
from holoforge.optics import ComplexField


def test_pfm_gray_round_trip(tmp_path, rng):
    a = rng.normal(size=(5, 7)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", a)
    assert np.array_equal(read_pfm(tmp_path / "a.pfm"), a)


def test_pfm_layout(tmp_path):
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    write_pfm(tmp_path / "a.pfm", a)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    # bottom row first, little-endian float32
    assert np.array_equal(np.frombuffer(raw[-16:], "<f4"), [3.0, 4.0, 1.0, 2.0])


def test_pfm_color_round_trip(tmp_path, rng):
    a = rng.uniform(size=(4, 3, 3)).astype(np.float32)
    write_pfm(tmp_path / "c.pfm", a)
    assert np.array_equal(read_pfm(tmp_path / "c.pfm"), a)


def test_pfm_errors(tmp_path):
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 2)))
    (tmp_path / "bad.pfm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(OSError):
        read_pfm(tmp_path / "bad.pfm")
    with pytest.raises(OSError):
        read_pfm(tmp_path / "missing.pfm")


def test_complex_pair(tmp_path, rng):
    f = ComplexField(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)), 3.74e-6, 639e-9)
    write_complex_pfm(tmp_path / "u", f)
    g = read_complex_pfm(tmp_path / "u", 3.74e-6, 639e-9)
    assert np.allclose(g.data, f.data, rtol=1e-6)


def test_png_round_trip_and_determinism(tmp_path, rng):
    a = rng.integers(0, 256, size=(6, 9), dtype=np.uint8)
    write_png8(tmp_path / "a.png", a)
    write_png8(tmp_path / "b.png", a)
    assert np.array_equal(read_png8(tmp_path / "a.png"), a)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    with pytest.raises(ValueError):
        write_png8(tmp_path / "f.png", a.astype(float))


def test_to_uint8():
    assert np.array_equal(to_uint8(np.array([-1.0, 0.0, 0.5, 1.0, 2.0])), [0, 0, 128, 255, 255])


def test_csv_exact_floats(tmp_path):
    v = 0.1 + 0.2
    write_csv(tmp_path / "t.csv", ["a", "b"], [[1, v]])
    rows = read_csv(tmp_path / "t.csv")
    assert rows[0] == ["a", "b"] and float(rows[1][1]) == v
