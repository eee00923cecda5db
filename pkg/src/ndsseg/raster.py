"""Raster value model, vegetative indices, and input-channel assembly.

A :class:`Raster` is a (height, width, channels) float32 array holding
reflectance or probability values, normally in [0, 1].  Vegetative indices
are normalized band differences in [-1, 1]; pixels whose denominator is
zero map to 0 so downstream losses stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ShapeError, ValidationError

# Storage channel order for 4-band imagery.
RED, GREEN, BLUE, NIR = 0, 1, 2, 3


@dataclass(frozen=True)
class Raster:
    """Multi-channel 2D image with float32 values in row-major order."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ShapeError(f"raster must be (h, w, c), got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ShapeError(f"raster dims must be >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("raster contains non-finite values")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def channel(self, idx: int) -> np.ndarray:
        """One channel as a (h, w) view."""
        return self.values[:, :, idx]

    def same_shape_as(self, other: "Raster") -> bool:
        return self.values.shape[:2] == other.values.shape[:2]


class IndexKind(Enum):
    NDVI = "ndvi"
    GNDVI = "gndvi"
    NDWI = "ndwi"


class InputRepresentation(Enum):
    RGB = "rgb"
    NDVI_ONLY = "ndvi"
    RGB_PLUS_NDVI = "rgb+ndvi"
    RGB_PLUS_GNDVI = "rgb+gndvi"
    RGB_PLUS_NDWI = "rgb+ndwi"
    INDEX_TRIPLE = "ndvi,gndvi,ndwi"

    @property
    def channel_count(self) -> int:
        return _REPR_CHANNELS[self]


_REPR_CHANNELS = {
    InputRepresentation.RGB: 3,
    InputRepresentation.NDVI_ONLY: 1,
    InputRepresentation.RGB_PLUS_NDVI: 4,
    InputRepresentation.RGB_PLUS_GNDVI: 4,
    InputRepresentation.RGB_PLUS_NDWI: 4,
    InputRepresentation.INDEX_TRIPLE: 3,
}

# (numerator minuend, numerator subtrahend, denominator pair) per index.
_INDEX_BANDS = {
    IndexKind.NDVI: (NIR, RED),
    IndexKind.GNDVI: (NIR, GREEN),
    IndexKind.NDWI: (GREEN, NIR),
}


def _require_rgbn(rgbn: Raster):
    if rgbn.channels != 4:
        raise ShapeError(f"expected 4-channel RGBN raster, got {rgbn.channels} channels")


def compute_index(kind: IndexKind, rgbn: Raster) -> Raster:
    """Normalized-difference index over an RGBN raster.

    Zero-denominator pixels yield 0.  Output values lie in [-1, 1].
    """
    _require_rgbn(rgbn)
    a_idx, b_idx = _INDEX_BANDS[kind]
    a = rgbn.channel(a_idx).astype(np.float64)
    b = rgbn.channel(b_idx).astype(np.float64)
    num = a - b
    den = a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den == 0.0, 0.0, num / np.where(den == 0.0, 1.0, den))
    return Raster(out.astype(np.float32))


def build_representation(rgbn: Raster, repr_kind: InputRepresentation) -> Raster:
    """Assemble the model-input channel stack for one RGBN raster."""
    _require_rgbn(rgbn)
    rgb = rgbn.values[:, :, :3]

    def idx(kind):
        return compute_index(kind, rgbn).values

    if repr_kind is InputRepresentation.RGB:
        out = rgb
    elif repr_kind is InputRepresentation.NDVI_ONLY:
        out = idx(IndexKind.NDVI)
    elif repr_kind is InputRepresentation.RGB_PLUS_NDVI:
        out = np.concatenate([rgb, idx(IndexKind.NDVI)], axis=2)
    elif repr_kind is InputRepresentation.RGB_PLUS_GNDVI:
        out = np.concatenate([rgb, idx(IndexKind.GNDVI)], axis=2)
    elif repr_kind is InputRepresentation.RGB_PLUS_NDWI:
        out = np.concatenate([rgb, idx(IndexKind.NDWI)], axis=2)
    elif repr_kind is InputRepresentation.INDEX_TRIPLE:
        out = np.concatenate(
            [idx(IndexKind.NDVI), idx(IndexKind.GNDVI), idx(IndexKind.NDWI)], axis=2
        )
    else:  # pragma: no cover
        raise ValueError(f"unknown representation {repr_kind}")
    return Raster(np.array(out))
