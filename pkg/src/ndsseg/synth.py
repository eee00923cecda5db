"""Procedural generator of longitudinal field sequences.

Each synthetic field carries a fixed latent stress field; per-flight masks
are nested level sets of it, so stress regions grow monotonically after a
random onset flight.  Stressed pixels shift toward brighter green with
reduced NIR.  Per-flight smooth illumination nuisance mimics the stress
color signature but decorrelates across flights, so temporal consistency
is the reliable cue.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import FieldSequence
from .errors import ValidationError
from .fileio import write_manifest, write_mask_png, write_ndsr
from .raster import Raster

_BASE = np.array([0.12, 0.35, 0.10, 0.60], dtype=np.float64)  # R, G, B, NIR
# Color signature of stress (and of the nuisance that imitates it).
_STRESS_SHIFT = np.array([0.05, 0.15, 0.02, -0.20], dtype=np.float64)


@dataclass(frozen=True)
class SynthConfig:
    side: int = 64
    num_flights: int = 6
    blob_count_range: tuple[int, int] = (1, 3)
    growth_rate: float = 1.6
    target_prevalence: float = 0.21
    seamline: bool = True
    seamline_delta: float = 0.05
    row_period: int = 8
    noise_sigma: float = 0.02
    nuisance_amp: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_flights < 5:
            raise ValidationError("num_flights must be >= 5")
        if self.growth_rate <= 1.0:
            raise ValidationError("growth_rate must be > 1")
        if not 0.0 < self.target_prevalence <= 0.5:
            raise ValidationError("target_prevalence must be in (0, 0.5]")
        if not 0.0 <= self.seamline_delta <= 0.1:
            raise ValidationError("seamline_delta must be in [0, 0.1]")


def _latent_stress_field(rng: np.random.Generator, side: int, n_blobs: int) -> np.ndarray:
    """Smooth scalar field whose level sets are the stress masks."""
    u = np.zeros((side, side), dtype=np.float64)
    rows, cols = np.mgrid[0:side, 0:side].astype(np.float64)
    for _ in range(n_blobs):
        cr, cc = rng.uniform(0.15 * side, 0.85 * side, size=2)
        sr = rng.uniform(0.08 * side, 0.22 * side)
        sc = rng.uniform(0.08 * side, 0.22 * side)
        theta = rng.uniform(0, np.pi)
        dr, dc = rows - cr, cols - cc
        a = dr * np.cos(theta) + dc * np.sin(theta)
        b = -dr * np.sin(theta) + dc * np.cos(theta)
        u += np.exp(-0.5 * ((a / sr) ** 2 + (b / sc) ** 2))
    return gaussian_filter(u, sigma=side / 50.0)


def _mask_at_count(u: np.ndarray, count: int) -> np.ndarray:
    if count <= 0:
        return np.zeros_like(u, dtype=np.float32)
    flat = np.sort(u.ravel())
    thresh = flat[-count]
    return (u >= thresh).astype(np.float32)


def generate_field_sequence(config: SynthConfig, field_ordinal: int) -> FieldSequence:
    """Generate one field; deterministic in (config.seed, field_ordinal)."""
    rng = np.random.default_rng([config.seed, field_ordinal])
    side, n_flights = config.side, config.num_flights
    total = side * side

    n_blobs = int(rng.integers(config.blob_count_range[0], config.blob_count_range[1] + 1))
    u = _latent_stress_field(rng, side, n_blobs)
    final_count = int(round(config.target_prevalence * total)) if n_blobs > 0 else 0
    onset = int(rng.integers(0, 2))  # early onset so pre-target flights carry signal

    counts = []
    for k in range(n_flights):
        if n_blobs == 0 or k < onset:
            counts.append(0)
        else:
            counts.append(
                max(1, int(round(final_count / config.growth_rate ** (n_flights - 1 - k))))
            )
    masks = [_mask_at_count(u, c) for c in counts]

    # Static texture shared by all flights.
    rows, cols = np.mgrid[0:side, 0:side].astype(np.float64)
    row_tex = 0.02 * np.sin(2 * np.pi * rows / max(2, config.row_period))
    seam_col = int(rng.integers(side // 4, 3 * side // 4))
    seam = np.zeros((side, side), dtype=np.float64)
    if config.seamline:
        seam[:, seam_col:] = config.seamline_delta

    flights = []
    flight_masks = {}
    stress_amp_final = 1.0
    for k in range(n_flights):
        img = np.empty((side, side, 4), dtype=np.float64)
        # Stress intensity ramps with the same growth schedule as area.
        amp = stress_amp_final * (counts[k] / final_count) ** 0.25 if counts[k] > 0 else 0.0
        stress = gaussian_filter(masks[k].astype(np.float64), sigma=1.0) * amp
        nuis = gaussian_filter(rng.normal(size=(side, side)), sigma=side / 8.0)
        sd = nuis.std()
        nuis = (nuis / sd if sd > 0 else nuis) * config.nuisance_amp
        nuis = np.clip(nuis, 0.0, None)  # nuisance only brightens, like stress
        brightness = rng.uniform(-0.03, 0.03)
        for c in range(4):
            img[:, :, c] = (
                _BASE[c]
                + row_tex
                + stress * _STRESS_SHIFT[c]
                + nuis * _STRESS_SHIFT[c]
                + (seam if c < 3 else 0.0)
                + brightness
                + rng.normal(scale=config.noise_sigma, size=(side, side))
            )
        flights.append((k, Raster(np.clip(img, 0.0, 1.0).astype(np.float32))))
        flight_masks[k] = Raster(masks[k][:, :, None])

    return FieldSequence(
        field_id=f"synth_{field_ordinal:04d}",
        flights=flights,
        target_mask=Raster(masks[-1][:, :, None]),
        target_flight_index=n_flights - 1,
        resolution_m_per_px=1.0,
        flight_masks=flight_masks,
    )


def generate_benchmark(config: SynthConfig, num_fields: int, out_dir: Path) -> Path:
    """Write a benchmark dataset and return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(num_fields):
        seq = generate_field_sequence(config, i)
        flight_entries = []
        for k, raster in seq.flights:
            name = f"{seq.field_id}_flight_{k}.ndsr"
            write_ndsr(out_dir / name, raster)
            flight_entries.append({"index": k, "image_path": name})
        mask_name = f"{seq.field_id}_mask.png"
        write_mask_png(out_dir / mask_name, seq.target_mask)
        entries.append(
            {
                "field_id": seq.field_id,
                "flights": flight_entries,
                "mask_path": mask_name,
                "target_flight_index": seq.target_flight_index,
                "resolution_m_per_px": seq.resolution_m_per_px,
            }
        )
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, entries)
    return manifest_path
