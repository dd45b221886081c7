"""File formats: PFM float maps, 8-bit PNGs and CSV tables.

PFM files are written little-endian (negative scale in the header) with rows
stored bottom to top, as the format prescribes.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .optics import ComplexField


def _fail(path, exc) -> OSError:
    return OSError(f"{path}: {exc}")


def write_pfm(path, image: np.ndarray) -> None:
    """Write an (H, W) or (H, W, 3) float array as float32 PFM."""
    a = np.asarray(image, dtype="<f4")
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM holds (H, W) or (H, W, 3) arrays, got {a.shape}")
    h, w = a.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a float32 array with the first row at the top."""
    try:
        with open(path, "rb") as fh:
            tag = fh.readline().strip()
            dims = fh.readline().split()
            scale = float(fh.readline().strip())
            payload = fh.read()
    except (OSError, ValueError) as exc:
        raise _fail(path, exc) from exc
    if tag not in (b"Pf", b"PF") or len(dims) != 2:
        raise _fail(path, "not a PFM file")
    w, h = int(dims[0]), int(dims[1])
    ch = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    a = np.frombuffer(payload, dtype=dtype, count=w * h * ch)
    shape = (h, w, 3) if ch == 3 else (h, w)
    return a.reshape(shape)[::-1].astype(np.float32)


def write_complex_pfm(stem, field: ComplexField) -> tuple[Path, Path]:
    """Store a field as ``<stem>_re.pfm`` and ``<stem>_im.pfm``."""
    stem = Path(stem)
    re_path = stem.with_name(stem.name + "_re.pfm")
    im_path = stem.with_name(stem.name + "_im.pfm")
    write_pfm(re_path, field.data.real)
    write_pfm(im_path, field.data.imag)
    return re_path, im_path


def read_complex_pfm(stem, pixel_pitch: float, wavelength: float) -> ComplexField:
    stem = Path(stem)
    re = read_pfm(stem.with_name(stem.name + "_re.pfm")).astype(np.float64)
    im = read_pfm(stem.with_name(stem.name + "_im.pfm")).astype(np.float64)
    return ComplexField(re + 1j * im, pixel_pitch, wavelength)


def write_png8(path, image: np.ndarray) -> None:
    """Save uint8 (H, W) or (H, W, 3) data losslessly with deterministic bytes."""
    a = np.asarray(image)
    if a.dtype != np.uint8:
        raise ValueError("write_png8 expects uint8 data")
    Image.fromarray(a).save(path, format="PNG", optimize=False, compress_level=6)


def read_png8(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im)
    except OSError as exc:
        raise _fail(path, exc) from exc


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 8 bits with rounding and clipping."""
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def format_float(v) -> str:
    # repr keeps the shortest exact decimal, which makes CSV output reproducible
    return repr(float(v))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        if header:
            wr.writerow(header)
        for row in rows:
            wr.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path) -> list[list[str]]:
    try:
        with open(path, newline="") as fh:
            return list(csv.reader(fh))
    except OSError as exc:
        raise _fail(path, exc) from exc


def ensure_dir(path) -> Path:
    p = Path(path)
    try:
        os.makedirs(p, exist_ok=True)
    except OSError as exc:
        raise _fail(path, exc) from exc
    return p
