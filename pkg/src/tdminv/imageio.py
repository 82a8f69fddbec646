"""PGM/PFM image files and sinogram headers.

PGM (binary ``P5``, 8 or 16 bit) is for viewing; intensities are mapped
linearly between 0 and the maximum value.  PFM (``Pf``, little-endian float32,
scale ``-1.0``) is lossless up to float32 rounding.  Array row ``i`` is image
row ``i`` from the top; PFM stores rows bottom-up as the format requires.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


def _read_header(data, count):
    """Return ``count`` whitespace-separated header tokens and the payload offset."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(data, pos)
        if m is None:
            raise ImageFormatError("truncated header")
        tokens.append(m.group(2))
        pos = m.end()
    # a single whitespace byte separates header and raster
    return tokens, pos + 1


def write_pgm(path, img, bits=8):
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    img = np.asarray(img, dtype=np.float64)
    maxval = 255 if bits == 8 else 65535
    q = np.round(np.clip(img, 0.0, 1.0) * maxval)
    raster = q.astype(np.uint8 if bits == 8 else ">u2").tobytes()
    n1, n2 = img.shape
    Path(path).write_bytes(f"P5\n{n2} {n1}\n{maxval}\n".encode() + raster)


def read_pgm(path):
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise ImageFormatError(f"{path}: not a binary PGM")
    (magic, w, h, maxval), off = _read_header(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    raster = np.frombuffer(data, dtype=dtype, count=w * h, offset=off)
    return raster.reshape(h, w).astype(np.float64) / maxval


def write_pfm(path, img):
    img = np.asarray(img, dtype=np.float64)
    n1, n2 = img.shape
    raster = np.ascontiguousarray(img[::-1]).astype("<f4").tobytes()
    Path(path).write_bytes(f"Pf\n{n2} {n1}\n-1.0\n".encode() + raster)


def read_pfm(path):
    data = Path(path).read_bytes()
    if not data.startswith(b"Pf"):
        raise ImageFormatError(f"{path}: not a greyscale PFM")
    (magic, w, h, scale), off = _read_header(data, 4)
    w, h, scale = int(w), int(h), float(scale)
    dtype = "<f4" if scale < 0 else ">f4"
    raster = np.frombuffer(data, dtype=dtype, count=w * h, offset=off)
    return raster.reshape(h, w)[::-1].astype(np.float64) * abs(scale)


def read_image(path):
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    raise ImageFormatError(f"{path}: unsupported image type (use .pgm or .pfm)")


def write_sinogram(path, values, op):
    """Write measurement data as PFM plus a ``.txt`` sidecar describing ``op``."""
    path = Path(path)
    write_pfm(path, values)
    lines = [f"{k} {v}" for k, v in op.geometry().items()]
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n")


def read_sidecar(path):
    """Parse the ``key value`` sidecar written by :func:`write_sinogram`."""
    meta = {}
    for line in Path(path).with_suffix(".txt").read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        meta[key] = value.strip()
    return meta
