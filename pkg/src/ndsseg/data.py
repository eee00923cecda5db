"""Dataset model, deterministic splitting, patch sampling, sequence-consistent
augmentation, and tile stitching for full-field inference.

Cropped sampling is a training-time concern; validation and test use
deterministic overlapping tiling (see :func:`tile_plan`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import cv2
import numpy as np

from .errors import CoverageError, NoPositiveRegion, ShapeError, ValidationError
from .fileio import read_image, read_manifest, read_mask
from .raster import Raster


class TaskKind(Enum):
    """Which window of flights feeds the model; the target is always G_t."""

    DETECTION = (0, 1, 2)
    PREDICTION_1_3 = (1, 2, 3)
    PREDICTION_2_4 = (2, 3, 4)

    @property
    def offsets(self) -> tuple[int, int, int]:
        """Flight offsets back from the target flight t, nearest first."""
        return self.value

    @property
    def timestep_labels(self) -> list[str]:
        """Row labels for per-timestep reports, newest output first."""
        return [f"t-{o}" if o else "t" for o in self.offsets]


@dataclass(frozen=True)
class FieldSequence:
    field_id: str
    flights: list[tuple[int, Raster]]
    target_mask: Raster
    target_flight_index: int
    resolution_m_per_px: float = 1.0
    flight_masks: dict[int, Raster] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        indices = [i for i, _ in self.flights]
        if indices != sorted(set(indices)):
            raise ValidationError(f"{self.field_id}: flight indices must be strictly ascending")
        if self.target_mask.channels != 1:
            raise ShapeError(f"{self.field_id}: target mask must be single-channel")
        for i, r in self.flights:
            if not r.same_shape_as(self.target_mask):
                raise ValidationError(
                    f"{self.field_id}: flight {i} is {r.height}x{r.width} but mask is "
                    f"{self.target_mask.height}x{self.target_mask.width}"
                )
        vals = np.unique(self.target_mask.values)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise ValidationError(f"{self.field_id}: target mask must be binary")

    @property
    def height(self) -> int:
        return self.target_mask.height

    @property
    def width(self) -> int:
        return self.target_mask.width

    def flight(self, index: int) -> Raster:
        for i, r in self.flights:
            if i == index:
                return r
        raise ValidationError(f"{self.field_id}: no flight with index {index}")

    def flights_for_task(self, task: TaskKind) -> list[Raster]:
        """Input rasters for a task, oldest first (most recent last)."""
        return [self.flight(self.target_flight_index - o) for o in reversed(task.offsets)]


@dataclass(frozen=True)
class SequenceSample:
    inputs: list[Raster]
    target: Raster
    field_id: str
    origin: tuple[int, int]
    task: TaskKind

    def __post_init__(self):
        if len(self.inputs) != 3:
            raise ValidationError(f"sequence sample needs 3 inputs, got {len(self.inputs)}")
        for r in self.inputs:
            if not r.same_shape_as(self.target):
                raise ShapeError("sample inputs and target must share dims")


class SamplingKind(Enum):
    FULL_RESCALE = "full_rescale"
    RANDOM_CROP = "random_crop"
    WISE_CROP = "wise_crop"


@dataclass(frozen=True)
class SamplingStrategy:
    kind: SamplingKind
    side: int

    def __post_init__(self):
        if self.side < 32 or self.side % 16 != 0:
            raise ValidationError(f"patch side must be >=32 and divisible by 16, got {self.side}")


@dataclass(frozen=True)
class AugmentParams:
    flip_h: bool = False
    flip_v: bool = False
    rotation_deg: float = 0.0
    shift_px: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not -15.0 <= self.rotation_deg <= 15.0:
            raise ValidationError("rotation must be within +/-15 degrees")

    @property
    def is_identity(self) -> bool:
        return (
            not self.flip_h
            and not self.flip_v
            and self.rotation_deg == 0.0
            and self.shift_px == (0, 0)
        )


def random_augment_params(rng: np.random.Generator, side: int) -> AugmentParams:
    max_shift = int(0.1 * side)
    return AugmentParams(
        flip_h=bool(rng.integers(0, 2)),
        flip_v=bool(rng.integers(0, 2)),
        rotation_deg=float(rng.uniform(-15.0, 15.0)),
        shift_px=(
            int(rng.integers(-max_shift, max_shift + 1)),
            int(rng.integers(-max_shift, max_shift + 1)),
        ),
    )


def load_manifest(path: Path) -> list[FieldSequence]:
    """Load a manifest JSON into validated field sequences.

    Image paths are resolved relative to the manifest's directory.
    """
    path = Path(path)
    entries = read_manifest(path)
    base = path.parent
    dataset = []
    for entry in entries:
        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        flights = [
            (int(fl["index"]), read_image(resolve(fl["image_path"])))
            for fl in entry["flights"]
        ]
        mask = read_mask(resolve(entry["mask_path"]))
        dataset.append(
            FieldSequence(
                field_id=str(entry["field_id"]),
                flights=flights,
                target_mask=mask,
                target_flight_index=int(entry["target_flight_index"]),
                resolution_m_per_px=float(entry.get("resolution_m_per_px", 1.0)),
            )
        )
    return dataset


def split_dataset(dataset: list, seed: int) -> tuple[list, list, list]:
    """Deterministic 60/20/20 split with floor/floor/remainder sizes."""
    n = len(dataset)
    if n < 3:
        raise ValidationError(f"need at least 3 items to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(0.6 * n))
    n_val = int(np.floor(0.2 * n))
    train = [dataset[i] for i in order[:n_train]]
    val = [dataset[i] for i in order[n_train : n_train + n_val]]
    test = [dataset[i] for i in order[n_train + n_val :]]
    return train, val, test


def _crop(raster: Raster, r0: int, c0: int, side: int) -> Raster:
    return Raster(np.array(raster.values[r0 : r0 + side, c0 : c0 + side, :]))


def _resize(raster: Raster, side: int, nearest: bool) -> Raster:
    interp = cv2.INTER_NEAREST if nearest else cv2.INTER_LINEAR
    out = cv2.resize(raster.values, (side, side), interpolation=interp)
    if out.ndim == 2:
        out = out[:, :, None]
    return Raster(out.astype(np.float32))


def wise_crop_origin(
    mask: Raster, side: int, rng: np.random.Generator
) -> tuple[int, int]:
    """Window origin guaranteed to cover a positive mask pixel.

    Samples a positive pixel uniformly, then a valid window containing it
    uniformly; bounded runtime regardless of mask sparsity.
    """
    pos = np.argwhere(mask.values[:, :, 0] > 0.5)
    if len(pos) == 0:
        raise NoPositiveRegion("mask has no positive pixels")
    r, c = pos[rng.integers(0, len(pos))]
    h, w = mask.height, mask.width
    r_lo, r_hi = max(0, r - side + 1), min(h - side, r)
    c_lo, c_hi = max(0, c - side + 1), min(w - side, c)
    return int(rng.integers(r_lo, r_hi + 1)), int(rng.integers(c_lo, c_hi + 1))


def sample_patch(
    seq: FieldSequence,
    task: TaskKind,
    strategy: SamplingStrategy,
    rng: np.random.Generator,
) -> SequenceSample:
    """Cut one training sample; the same window applies to every timestep."""
    inputs = seq.flights_for_task(task)
    side = strategy.side
    if strategy.kind is SamplingKind.FULL_RESCALE:
        return SequenceSample(
            inputs=[_resize(r, side, nearest=False) for r in inputs],
            target=_resize(seq.target_mask, side, nearest=True),
            field_id=seq.field_id,
            origin=(0, 0),
            task=task,
        )

    if seq.height < side or seq.width < side:
        raise ValidationError(
            f"{seq.field_id}: field {seq.height}x{seq.width} smaller than patch side {side}"
        )
    if strategy.kind is SamplingKind.RANDOM_CROP:
        r0 = int(rng.integers(0, seq.height - side + 1))
        c0 = int(rng.integers(0, seq.width - side + 1))
    else:
        r0, c0 = wise_crop_origin(seq.target_mask, side, rng)
    return SequenceSample(
        inputs=[_crop(r, r0, c0, side) for r in inputs],
        target=_crop(seq.target_mask, r0, c0, side),
        field_id=seq.field_id,
        origin=(r0, c0),
        task=task,
    )


def _shift_int(arr: np.ndarray, dr: int, dc: int) -> np.ndarray:
    out = np.zeros_like(arr)
    h, w = arr.shape[:2]
    src_r = slice(max(0, -dr), min(h, h - dr))
    src_c = slice(max(0, -dc), min(w, w - dc))
    dst_r = slice(max(0, dr), min(h, h + dr))
    dst_c = slice(max(0, dc), min(w, w + dc))
    out[dst_r, dst_c] = arr[src_r, src_c]
    return out


def _transform(arr: np.ndarray, params: AugmentParams, nearest: bool) -> np.ndarray:
    out = arr
    if params.flip_h:
        out = out[:, ::-1]
    if params.flip_v:
        out = out[::-1, :]
    dr, dc = params.shift_px
    if params.rotation_deg == 0.0:
        if (dr, dc) != (0, 0):
            out = _shift_int(out, dr, dc)
        return np.ascontiguousarray(out)
    h, w = out.shape[:2]
    m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), params.rotation_deg, 1.0)
    m[0, 2] += dc
    m[1, 2] += dr
    interp = cv2.INTER_NEAREST if nearest else cv2.INTER_LINEAR
    warped = cv2.warpAffine(
        out, m, (w, h), flags=interp, borderMode=cv2.BORDER_CONSTANT, borderValue=0
    )
    if warped.ndim == 2:
        warped = warped[:, :, None]
    return warped


def augment_sequence(sample: SequenceSample, params: AugmentParams) -> SequenceSample:
    """Apply one geometric transform to all 3 inputs and the mask.

    Only geometry, never photometry; masks resample nearest-neighbor so
    they stay binary.
    """
    if params.is_identity:
        return sample
    return SequenceSample(
        inputs=[Raster(_transform(r.values, params, nearest=False)) for r in sample.inputs],
        target=Raster(_transform(sample.target.values, params, nearest=True)),
        field_id=sample.field_id,
        origin=sample.origin,
        task=sample.task,
    )


def tile_plan(field_h: int, field_w: int, tile_side: int, overlap: int) -> list[tuple[int, int]]:
    """Window origins for overlapping full-field tiling.

    Stride is ``tile_side - overlap``; the last row/column of tiles is
    clamped to the border so coverage is complete.
    """
    if field_h < tile_side or field_w < tile_side:
        raise ValidationError(
            f"field {field_h}x{field_w} smaller than tile side {tile_side}"
        )
    stride = max(1, tile_side - overlap)

    def starts(extent):
        s = list(range(0, extent - tile_side + 1, stride))
        if s[-1] != extent - tile_side:
            s.append(extent - tile_side)
        return s

    return [(r, c) for r in starts(field_h) for c in starts(field_w)]


def stitch_tiles(
    tiles: list[tuple[tuple[int, int], Raster]], field_h: int, field_w: int
) -> Raster:
    """Average overlapping tile predictions into one full-field raster."""
    acc = np.zeros((field_h, field_w), dtype=np.float64)
    cnt = np.zeros((field_h, field_w), dtype=np.int64)
    for (r0, c0), tile in tiles:
        th, tw = tile.height, tile.width
        acc[r0 : r0 + th, c0 : c0 + tw] += tile.values[:, :, 0]
        cnt[r0 : r0 + th, c0 : c0 + tw] += 1
    uncovered = np.argwhere(cnt == 0)
    if len(uncovered) > 0:
        r, c = uncovered[0]
        raise CoverageError(int(r), int(c))
    return Raster((acc / cnt).astype(np.float32))
