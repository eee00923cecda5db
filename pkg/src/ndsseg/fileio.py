"""On-disk raster formats and the dataset manifest.

Two raster carriers are supported:

* 8-bit PNG, scaled to [0, 1] on read (masks: {0, 255} -> {0, 1});
* the "NDSR" binary format: magic ``NDSR``, version u16, h u32, w u32,
  c u16, then little-endian float32 values in row-major order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError
from .raster import Raster

NDSR_MAGIC = b"NDSR"
NDSR_VERSION = 1


def write_ndsr(path: Path, raster: Raster):
    path = Path(path)
    with open(path, "wb") as f:
        f.write(NDSR_MAGIC)
        f.write(struct.pack("<HIIH", NDSR_VERSION, raster.height, raster.width, raster.channels))
        f.write(raster.values.astype("<f4").tobytes())


def read_ndsr(path: Path) -> Raster:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != NDSR_MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}, expected NDSR")
        version, h, w, c = struct.unpack("<HIIH", f.read(12))
        if version != NDSR_VERSION:
            raise ValidationError(f"{path}: unsupported NDSR version {version}")
        data = np.frombuffer(f.read(h * w * c * 4), dtype="<f4")
    if data.size != h * w * c:
        raise ValidationError(f"{path}: truncated NDSR payload")
    return Raster(data.reshape(h, w, c).astype(np.float32))


def read_image(path: Path) -> Raster:
    """Read a raster from PNG (8-bit, scaled to [0,1]) or NDSR."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"raster file not found: {path}")
    if path.suffix.lower() == ".png":
        arr = np.asarray(Image.open(path), dtype=np.float32) / 255.0
        return Raster(arr)
    return read_ndsr(path)


def read_mask(path: Path) -> Raster:
    """Read a binary mask: single-channel PNG with {0,255} -> {0,1}, or NDSR."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mask file not found: {path}")
    if path.suffix.lower() == ".png":
        arr = np.asarray(Image.open(path).convert("L"), dtype=np.float32)
        return Raster((arr >= 128).astype(np.float32))
    r = read_ndsr(path)
    return Raster((r.values >= 0.5).astype(np.float32))


def write_mask_png(path: Path, mask: Raster):
    arr = (np.clip(mask.values[:, :, 0], 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def write_manifest(path: Path, entries: list[dict]):
    path = Path(path)
    with open(path, "w") as f:
        json.dump(entries, f, indent=2)
        f.write("\n")


def read_manifest(path: Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path) as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise ValidationError(f"{path}: manifest must be a top-level list")
    return entries
