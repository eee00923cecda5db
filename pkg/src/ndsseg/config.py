"""Run configuration: one JSON document wiring every pipeline together.

Sections are optional and default-filled; unknown keys are rejected.
Command-line flags override file values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .data import SamplingKind, SamplingStrategy, TaskKind
from .errors import ValidationError
from .losses import LossConfig
from .models import ArchitectureKind, BackboneKind, ConvLstmSpec, ModelConfig
from .raster import InputRepresentation
from .synth import SynthConfig
from .train import TrainConfig

TASK_NAMES = {
    "detection": TaskKind.DETECTION,
    "prediction13": TaskKind.PREDICTION_1_3,
    "prediction24": TaskKind.PREDICTION_2_4,
}


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    model: ModelConfig
    synth: SynthConfig
    manifest: str | None = None
    out_dir: str = "runs/default"


def _check_keys(section: str, d: dict, allowed: set[str]):
    unknown = set(d) - allowed
    if unknown:
        raise ValidationError(f"unknown key(s) in {section}: {sorted(unknown)}")


def _parse_strategy(d: dict) -> SamplingStrategy:
    _check_keys("train.strategy", d, {"kind", "side"})
    return SamplingStrategy(SamplingKind(d.get("kind", "wise_crop")), int(d.get("side", 64)))


def _parse_loss(d: dict) -> LossConfig:
    _check_keys("train.loss", d, {"focal_alpha", "focal_gamma", "dice_smooth", "eval_threshold"})
    return LossConfig(**d)


def _parse_train(d: dict) -> TrainConfig:
    _check_keys(
        "train",
        d,
        {
            "lr", "batch_size", "max_epochs", "plateau_patience", "plateau_factor",
            "task", "strategy", "repr", "loss", "augment", "tile_overlap", "seed",
        },
    )
    kwargs = dict(d)
    if "task" in kwargs:
        name = kwargs.pop("task")
        if name not in TASK_NAMES:
            raise ValidationError(f"unknown task {name!r}; expected one of {sorted(TASK_NAMES)}")
        kwargs["task"] = TASK_NAMES[name]
    if "strategy" in kwargs:
        kwargs["strategy"] = _parse_strategy(kwargs.pop("strategy"))
    if "repr" in kwargs:
        kwargs["repr"] = InputRepresentation(kwargs.pop("repr"))
    if "loss" in kwargs:
        kwargs["loss"] = _parse_loss(kwargs.pop("loss"))
    return TrainConfig(**kwargs)


def _parse_model(d: dict) -> ModelConfig:
    _check_keys(
        "model",
        d,
        {"arch", "backbone", "input_channels", "freeze_encoder", "convlstm", "width_mult", "seed"},
    )
    kwargs = dict(d)
    kwargs["arch"] = ArchitectureKind(kwargs.get("arch", "single_unet"))
    if "backbone" in kwargs:
        kwargs["backbone"] = BackboneKind(kwargs.pop("backbone"))
    if "convlstm" in kwargs:
        cl = kwargs.pop("convlstm")
        _check_keys("model.convlstm", cl, {"layers", "hidden_channels", "kernel"})
        kwargs["convlstm"] = ConvLstmSpec(**cl)
    return ModelConfig(**kwargs)


def _parse_synth(d: dict) -> SynthConfig:
    _check_keys(
        "synth",
        d,
        {
            "side", "num_flights", "blob_count_range", "growth_rate", "target_prevalence",
            "seamline", "seamline_delta", "row_period", "noise_sigma", "nuisance_amp", "seed",
        },
    )
    kwargs = dict(d)
    if "blob_count_range" in kwargs:
        kwargs["blob_count_range"] = tuple(kwargs["blob_count_range"])
    return SynthConfig(**kwargs)


def load_run_config(path: Path | None) -> RunConfig:
    if path is None:
        doc = {}
    else:
        with open(path) as f:
            doc = json.load(f)
    _check_keys("config", doc, {"train", "model", "synth", "manifest", "out_dir"})
    return RunConfig(
        train=_parse_train(doc.get("train", {})),
        model=_parse_model(doc.get("model", {"arch": "single_unet"})),
        synth=_parse_synth(doc.get("synth", {})),
        manifest=doc.get("manifest"),
        out_dir=doc.get("out_dir", "runs/default"),
    )


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return RunConfig(
        train=replace(cfg.train, seed=seed),
        model=replace(cfg.model, seed=seed),
        synth=replace(cfg.synth, seed=seed),
        manifest=cfg.manifest,
        out_dir=cfg.out_dir,
    )


def echo_config(cfg: RunConfig, out_dir: Path, version: str):
    """Write the resolved config before any compute, for reproducibility."""
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "artifact_version": version,
        "train": {
            "lr": cfg.train.lr,
            "batch_size": cfg.train.batch_size,
            "max_epochs": cfg.train.max_epochs,
            "plateau_patience": cfg.train.plateau_patience,
            "plateau_factor": cfg.train.plateau_factor,
            "task": next(k for k, v in TASK_NAMES.items() if v is cfg.train.task),
            "strategy": {"kind": cfg.train.strategy.kind.value, "side": cfg.train.strategy.side},
            "repr": cfg.train.repr.value,
            "loss": {
                "focal_alpha": cfg.train.loss.focal_alpha,
                "focal_gamma": cfg.train.loss.focal_gamma,
                "dice_smooth": cfg.train.loss.dice_smooth,
                "eval_threshold": cfg.train.loss.eval_threshold,
            },
            "augment": cfg.train.augment,
            "tile_overlap": cfg.train.tile_overlap,
            "seed": cfg.train.seed,
        },
        "model": json.loads(cfg.model.to_json()),
        "synth": {
            "side": cfg.synth.side,
            "num_flights": cfg.synth.num_flights,
            "blob_count_range": list(cfg.synth.blob_count_range),
            "growth_rate": cfg.synth.growth_rate,
            "target_prevalence": cfg.synth.target_prevalence,
            "seamline": cfg.synth.seamline,
            "seamline_delta": cfg.synth.seamline_delta,
            "row_period": cfg.synth.row_period,
            "noise_sigma": cfg.synth.noise_sigma,
            "nuisance_amp": cfg.synth.nuisance_amp,
            "seed": cfg.synth.seed,
        },
        "manifest": cfg.manifest,
        "out_dir": cfg.out_dir,
    }
    with open(out_dir / "run_config.json", "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
