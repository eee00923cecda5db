"""Benchmark experiment runners shared by scripts/ and the acceptance suite.

These wire the synthetic generator, trainer, and evaluator into the two
desk-scale studies: the architecture/task ordering benchmark and the
sampling-strategy comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .data import (
    SamplingKind,
    SamplingStrategy,
    TaskKind,
    load_manifest,
    split_dataset,
)
from .models import ArchitectureKind, ConvLstmSpec, ModelConfig, build_model
from .raster import InputRepresentation
from .synth import SynthConfig, generate_benchmark
from .train import TrainConfig, evaluate, load_model_checkpoint, train


def make_benchmark(out_dir: Path, num_fields: int = 200, side: int = 64,
                   num_flights: int = 6, seed: int = 0,
                   nuisance_amp: float = 1.2, target_prevalence: float = 0.05,
                   growth_rate: float = 1.3) -> Path:
    """Synthesize the benchmark dataset; 200 fields split 120/40/40.

    The strong per-flight nuisance makes single-flight detection ambiguous,
    so temporal context carries real signal in the comparisons.  Low stress
    prevalence keeps random crops positive-starved (so informed cropping
    helps) while the mild growth rate keeps early-flight masks visible
    enough that longer forecast offsets are strictly harder.
    """
    out_dir = Path(out_dir)
    manifest = out_dir / "manifest.json"
    if not manifest.exists():
        generate_benchmark(
            SynthConfig(side=side, num_flights=num_flights, seed=seed,
                        nuisance_amp=nuisance_amp,
                        target_prevalence=target_prevalence,
                        growth_rate=growth_rate),
            num_fields, out_dir,
        )
    return manifest


def benchmark_model_config(arch: ArchitectureKind, seed: int) -> ModelConfig:
    """Mid-width config: large enough to learn, small enough for CPU."""
    return ModelConfig(
        arch=arch,
        input_channels=9 if arch in (ArchitectureKind.NINE_CHANNEL,
                                     ArchitectureKind.NINE_CHANNEL_CONV1D) else 3,
        width_mult=0.25,
        convlstm=ConvLstmSpec(layers=2, hidden_channels=8, kernel=3),
        seed=seed,
    )


@dataclass(frozen=True)
class RunResult:
    name: str
    arch: str
    task: str
    seed: int
    best_val_iou: float
    test_iou: float

    def to_dict(self) -> dict:
        return {
            "name": self.name, "arch": self.arch, "task": self.task,
            "seed": self.seed, "best_val_iou": self.best_val_iou,
            "test_iou": self.test_iou,
        }


def train_and_score(
    manifest: Path,
    arch: ArchitectureKind,
    task: TaskKind,
    seed: int,
    out_dir: Path,
    epochs: int = 30,
    lr: float = 1e-3,
    strategy: SamplingStrategy | None = None,
    name: str | None = None,
) -> RunResult:
    """One training run on the benchmark; scores the newest-timestep output."""
    dataset = load_manifest(Path(manifest))
    train_fields, val_fields, test_fields = split_dataset(dataset, 0)
    cfg = TrainConfig(
        lr=lr,
        task=task,
        max_epochs=epochs,
        strategy=strategy or SamplingStrategy(SamplingKind.WISE_CROP, 64),
        repr=InputRepresentation.RGB,
        seed=seed,
    )
    model = build_model(benchmark_model_config(arch, seed))
    best, history = train(model, train_fields, val_fields, cfg, Path(out_dir))
    report = evaluate(load_model_checkpoint(best), test_fields, cfg)
    return RunResult(
        name=name or f"{arch.value}_{task.name.lower()}_s{seed}",
        arch=arch.value,
        task=task.name.lower(),
        seed=seed,
        best_val_iou=max(h["val_iou"] for h in history),
        test_iou=report.rows[0].iou,
    )


def median(xs: list[float]) -> float:
    xs = sorted(xs)
    n = len(xs)
    return xs[n // 2] if n % 2 else 0.5 * (xs[n // 2 - 1] + xs[n // 2])


def ordering_study(manifest: Path, out_dir: Path, seeds=(0, 1, 2),
                   epochs: int = 30, lr: float = 1e-3) -> dict:
    """Architecture/task ordering: proposed vs single, detection vs prediction.

    Returns 3-seed median test IOU per configuration plus the raw runs.
    """
    out_dir = Path(out_dir)
    configs = [
        ("proposed_det", ArchitectureKind.PROPOSED_SHARED, TaskKind.DETECTION),
        ("single_det", ArchitectureKind.SINGLE_UNET, TaskKind.DETECTION),
        ("proposed_t13", ArchitectureKind.PROPOSED_SHARED, TaskKind.PREDICTION_1_3),
        ("proposed_t24", ArchitectureKind.PROPOSED_SHARED, TaskKind.PREDICTION_2_4),
    ]
    runs = []
    for label, arch, task in configs:
        for seed in seeds:
            res = train_and_score(
                manifest, arch, task, seed, out_dir / f"{label}_s{seed}",
                epochs=epochs, lr=lr, name=label,
            )
            runs.append(res)
    medians = {
        label: median([r.test_iou for r in runs if r.name == label])
        for label, _, _ in configs
    }
    summary = {"medians": medians, "runs": [r.to_dict() for r in runs]}
    (out_dir / "ordering_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def sampling_study(manifest: Path, out_dir: Path, seeds=(0, 1, 2),
                   epochs: int = 30, lr: float = 1e-3, side: int = 32) -> dict:
    """Wise-crop vs random-crop for the single U-Net, 3-seed median val IOU."""
    out_dir = Path(out_dir)
    runs = []
    for kind in (SamplingKind.WISE_CROP, SamplingKind.RANDOM_CROP):
        for seed in seeds:
            res = train_and_score(
                manifest, ArchitectureKind.SINGLE_UNET, TaskKind.DETECTION, seed,
                out_dir / f"{kind.value}_s{seed}", epochs=epochs, lr=lr,
                strategy=SamplingStrategy(kind, side), name=kind.value,
            )
            runs.append(res)
    medians = {
        kind.value: median([r.best_val_iou for r in runs if r.name == kind.value])
        for kind in (SamplingKind.WISE_CROP, SamplingKind.RANDOM_CROP)
    }
    summary = {"medians": medians, "runs": [r.to_dict() for r in runs]}
    (out_dir / "sampling_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def overfit_study(out_dir: Path, num_fields: int = 4, epochs: int = 300,
                  seed: int = 0, lr: float = 1e-3, target_iou: float = 0.90) -> dict:
    """Memorization check on a tiny dataset.

    Validation is the training set itself (full-resolution deterministic
    samples), so the history's val_iou is the per-epoch train IOU.
    """
    out_dir = Path(out_dir)
    generate_benchmark(SynthConfig(side=64, num_flights=6, seed=seed),
                       num_fields, out_dir / "data")
    fields = load_manifest(out_dir / "data" / "manifest.json")
    cfg = TrainConfig(
        lr=lr, task=TaskKind.DETECTION, max_epochs=epochs,
        strategy=SamplingStrategy(SamplingKind.FULL_RESCALE, 64),
        repr=InputRepresentation.RGB, augment=False, seed=seed,
    )
    model = build_model(benchmark_model_config(ArchitectureKind.PROPOSED_SHARED, seed))
    _, history = train(model, fields, fields, cfg, out_dir / "run")
    ious = [h["val_iou"] for h in history]
    reached = next((i + 1 for i, x in enumerate(ious) if x >= target_iou), None)
    result = {
        "train_iou": max(ious), "epochs_to_target": reached,
        "epochs_run": len(ious), "target": target_iou,
    }
    (out_dir / "overfit_summary.json").write_text(json.dumps(result, indent=2) + "\n")
    return result
