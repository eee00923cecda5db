"""Training loop, per-timestep evaluation, and full-field tiled prediction.

Adam at lr 1e-4, batch size 2, up to 200 epochs; the learning rate decays
by the plateau factor when validation loss stalls for the patience window,
and the best checkpoint is the minimum-validation-loss epoch.

One "epoch" under cropped sampling is one pass of N sampled patches where
N is the number of training fields.  Validation uses deterministic center
tiles so losses are comparable across epochs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .data import (
    FieldSequence,
    SamplingKind,
    SamplingStrategy,
    SequenceSample,
    TaskKind,
    augment_sequence,
    random_augment_params,
    sample_patch,
    stitch_tiles,
    tile_plan,
)
from .errors import NdsError, ValidationError
from .losses import LossConfig, segmentation_scores, sequence_loss_t
from .models import (
    ModelConfig,
    NdsModel,
    PredictionSet,
    build_model,
    forward_sequence,
)
from .nn import load_checkpoint, save_checkpoint
from .raster import InputRepresentation, Raster, build_representation


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 2
    max_epochs: int = 200
    plateau_patience: int = 10
    plateau_factor: float = 10.0
    task: TaskKind = TaskKind.DETECTION
    strategy: SamplingStrategy = field(
        default_factory=lambda: SamplingStrategy(SamplingKind.WISE_CROP, 64)
    )
    repr: InputRepresentation = InputRepresentation.RGB
    loss: LossConfig = field(default_factory=LossConfig)
    augment: bool = True
    tile_overlap: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError("lr must be > 0")
        if self.plateau_patience < 1:
            raise ValidationError("plateau_patience must be >= 1")
        if self.plateau_factor <= 1:
            raise ValidationError("plateau_factor must be > 1")


@dataclass(frozen=True)
class MetricsRow:
    timestep: str
    f1: float
    iou: float
    loss: float


@dataclass(frozen=True)
class MetricsReport:
    rows: list[MetricsRow]
    total_loss: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "rows": [
                    {"timestep": r.timestep, "f1": r.f1, "iou": r.iou, "loss": r.loss}
                    for r in self.rows
                ],
                "total_loss": self.total_loss,
            },
            indent=2,
        )


class PlateauScheduler:
    """Divide lr by `factor` after `patience` epochs without improvement."""

    def __init__(self, lr: float, patience: int, factor: float):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = float("inf")
        self.stale = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr /= self.factor
                self.stale = 0
        return self.lr


def _prepare_inputs(sample: SequenceSample, repr_kind: InputRepresentation,
                    num_inputs: int) -> list[Raster]:
    reps = [build_representation(r, repr_kind) for r in sample.inputs]
    return reps[-1:] if num_inputs == 1 else reps


def _to_batch(samples: list[list[Raster]]) -> list[torch.Tensor]:
    """Stack per-sample input lists into per-timestep (b, c, h, w) tensors."""
    n_steps = len(samples[0])
    out = []
    for t in range(n_steps):
        arrs = [s[t].values.transpose(2, 0, 1) for s in samples]
        out.append(torch.from_numpy(np.ascontiguousarray(np.stack(arrs))))
    return out


def _targets_to_batch(targets: list[Raster]) -> torch.Tensor:
    arrs = [t.values.transpose(2, 0, 1) for t in targets]
    return torch.from_numpy(np.ascontiguousarray(np.stack(arrs)))


def _draw_sample(seq: FieldSequence, cfg: TrainConfig, rng: np.random.Generator) -> SequenceSample:
    strategy = cfg.strategy
    if strategy.kind is SamplingKind.WISE_CROP and not np.any(seq.target_mask.values > 0.5):
        # NDS-free field: fall back to a random crop.
        strategy = replace(strategy, kind=SamplingKind.RANDOM_CROP)
    sample = sample_patch(seq, cfg.task, strategy, rng)
    if cfg.augment:
        sample = augment_sequence(sample, random_augment_params(rng, strategy.side))
    return sample


def _center_sample(seq: FieldSequence, cfg: TrainConfig) -> SequenceSample:
    side = cfg.strategy.side
    if cfg.strategy.kind is SamplingKind.FULL_RESCALE or seq.height < side or seq.width < side:
        return sample_patch(seq, cfg.task, SamplingStrategy(SamplingKind.FULL_RESCALE, side),
                            np.random.default_rng(0))
    r0 = (seq.height - side) // 2
    c0 = (seq.width - side) // 2
    from .data import _crop  # deterministic center tile

    return SequenceSample(
        inputs=[_crop(r, r0, c0, side) for r in seq.flights_for_task(cfg.task)],
        target=_crop(seq.target_mask, r0, c0, side),
        field_id=seq.field_id,
        origin=(r0, c0),
        task=cfg.task,
    )


def _model_loss(model: NdsModel, inputs: list[torch.Tensor], target: torch.Tensor,
                loss_cfg: LossConfig) -> tuple[torch.Tensor, list[torch.Tensor]]:
    masks = model(*inputs)
    return sequence_loss_t(masks, target, loss_cfg), masks


def save_model_checkpoint(path: Path, model: NdsModel,
                          optimizer: torch.optim.Adam | None = None):
    state = {}
    for name, p in model.named_parameters():
        state[name] = p.detach().cpu().numpy()
    for name, b in model.named_buffers():
        state[f"buffer:{name}"] = b.detach().cpu().numpy().astype(np.float32)
    opt_state = {}
    if optimizer is not None:
        names = [n for n, _ in model.named_parameters()]
        params = [p for _, p in model.named_parameters()]
        for name, p in zip(names, params):
            s = optimizer.state.get(p)
            if not s:
                continue
            opt_state[f"m:{name}"] = s["exp_avg"].cpu().numpy()
            opt_state[f"v:{name}"] = s["exp_avg_sq"].cpu().numpy()
            opt_state[f"step:{name}"] = np.float32(s["step"])
    save_checkpoint(path, model.config.arch.value, state, model.config.to_json(), opt_state)


def load_model_checkpoint(path: Path) -> NdsModel:
    arch_tag, config_json, params, _ = load_checkpoint(path)
    cfg = ModelConfig.from_json(config_json)
    if cfg.arch.value != arch_tag:
        raise ValidationError(f"{path}: architecture tag mismatch")
    model = build_model(cfg)
    with torch.no_grad():
        named = dict(model.named_parameters())
        buffers = dict(model.named_buffers())
        for name, arr in params.items():
            if name.startswith("buffer:"):
                buf = buffers[name[len("buffer:"):]]
                buf.copy_(torch.from_numpy(np.asarray(arr)).to(buf.dtype).reshape(buf.shape))
            else:
                p = named[name]
                p.copy_(torch.from_numpy(np.asarray(arr)).reshape(p.shape))
    return model


def train(
    model: NdsModel,
    train_fields: list[FieldSequence],
    val_fields: list[FieldSequence],
    cfg: TrainConfig,
    out_dir: Path,
) -> tuple[Path, list[dict]]:
    """Run the full loop; returns (best checkpoint path, per-epoch history)."""
    if not train_fields or not val_fields:
        raise ValidationError("train and val splits must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    scheduler = PlateauScheduler(cfg.lr, cfg.plateau_patience, cfg.plateau_factor)

    val_samples = [_center_sample(seq, cfg) for seq in val_fields]
    best_loss = float("inf")
    best_path = out_dir / "best.ndck"
    history: list[dict] = []
    history_path = out_dir / "history.jsonl"

    with open(history_path, "w") as hist_file:
        for epoch in range(cfg.max_epochs):
            model.train(True)
            order = rng.permutation(len(train_fields))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch_idx = order[start : start + cfg.batch_size]
                samples = [_draw_sample(train_fields[i], cfg, rng) for i in batch_idx]
                inputs = _to_batch(
                    [_prepare_inputs(s, cfg.repr, model.num_inputs) for s in samples]
                )
                target = _targets_to_batch([s.target for s in samples])
                optimizer.zero_grad()
                loss, _ = _model_loss(model, inputs, target, cfg.loss)
                if not torch.isfinite(loss):
                    raise NdsError(
                        f"non-finite training loss at epoch {epoch}, fields "
                        f"{[train_fields[i].field_id for i in batch_idx]}"
                    )
                loss.backward()
                optimizer.step()
                epoch_losses.append(float(loss.detach()))

            val_loss, val_iou, val_f1 = _validate(model, val_samples, cfg)
            row = {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)),
                "val_loss": val_loss,
                "val_iou": val_iou,
                "val_f1": val_f1,
                "lr": optimizer.param_groups[0]["lr"],
            }
            history.append(row)
            hist_file.write(json.dumps(row) + "\n")
            hist_file.flush()

            if val_loss < best_loss:
                best_loss = val_loss
                save_model_checkpoint(best_path, model, optimizer)
            new_lr = scheduler.step(val_loss)
            for group in optimizer.param_groups:
                group["lr"] = new_lr

    if not best_path.exists():
        save_model_checkpoint(best_path, model, optimizer)
    return best_path, history


def _validate(model: NdsModel, val_samples: list[SequenceSample],
              cfg: TrainConfig) -> tuple[float, float, float]:
    model.train(False)
    losses, ious, f1s = [], [], []
    with torch.no_grad():
        for sample in val_samples:
            inputs = _to_batch([_prepare_inputs(sample, cfg.repr, model.num_inputs)])
            target = _targets_to_batch([sample.target])
            loss, masks = _model_loss(model, inputs, target, cfg.loss)
            losses.append(float(loss))
            pred = Raster(masks[-1][0].numpy().transpose(1, 2, 0))
            iou, f1 = segmentation_scores(pred, sample.target, cfg.loss)
            ious.append(iou)
            f1s.append(f1)
    return float(np.mean(losses)), float(np.mean(ious)), float(np.mean(f1s))


def predict_field_all(
    model: NdsModel,
    seq: FieldSequence,
    task: TaskKind,
    repr_kind: InputRepresentation = InputRepresentation.RGB,
    tile_side: int = 64,
    overlap: int = 16,
) -> list[Raster]:
    """Tiled full-field inference; one stitched raster per model output."""
    flights = seq.flights_for_task(task)
    plan = tile_plan(seq.height, seq.width, tile_side, overlap)
    per_output: list[list[tuple[tuple[int, int], Raster]]] = [
        [] for _ in range(model.num_outputs)
    ]
    for r0, c0 in plan:
        tile_inputs = [
            build_representation(
                Raster(np.array(r.values[r0 : r0 + tile_side, c0 : c0 + tile_side, :])),
                repr_kind,
            )
            for r in flights
        ]
        if model.num_inputs == 1:
            tile_inputs = tile_inputs[-1:]
        pred = forward_sequence(model, tile_inputs, mode="infer")
        for i, mask in enumerate(pred.masks):
            per_output[i].append(((r0, c0), mask))
    return [stitch_tiles(tiles, seq.height, seq.width) for tiles in per_output]


def predict_field(
    model: NdsModel,
    seq: FieldSequence,
    task: TaskKind,
    repr_kind: InputRepresentation = InputRepresentation.RGB,
    tile_side: int = 64,
    overlap: int = 16,
) -> Raster:
    """Stitched probability mask for the most recent output timestep."""
    return predict_field_all(model, seq, task, repr_kind, tile_side, overlap)[-1]


def evaluate(
    model: NdsModel,
    fields: list[FieldSequence],
    cfg: TrainConfig,
) -> MetricsReport:
    """Per-timestep scores over stitched full-field predictions.

    For 3-output models, every timestep is scored against the final mask
    G_t; rows are ordered newest output first (t, t-1, t-2).
    """
    labels = cfg.task.timestep_labels[: model.num_outputs]
    n_out = model.num_outputs
    sums = np.zeros((n_out, 3))  # f1, iou, loss per output
    loss_cfg = cfg.loss
    for seq in fields:
        stitched = predict_field_all(
            model, seq, cfg.task, cfg.repr, cfg.strategy.side, cfg.tile_overlap
        )
        target_t = _targets_to_batch([seq.target_mask])
        # stitched is oldest first; labels are newest first.
        for row, mask in enumerate(reversed(stitched)):
            iou, f1 = segmentation_scores(mask, seq.target_mask, loss_cfg)
            pred_t = torch.from_numpy(
                np.array(mask.values.transpose(2, 0, 1))
            ).unsqueeze(0)
            loss = float(sequence_loss_t([pred_t], target_t, loss_cfg))
            sums[row] += (f1, iou, loss)
    means = sums / max(1, len(fields))
    rows = [
        MetricsRow(timestep=labels[i], f1=float(means[i, 0]), iou=float(means[i, 1]),
                   loss=float(means[i, 2]))
        for i in range(n_out)
    ]
    total = float(np.mean([r.loss for r in rows]))
    return MetricsReport(rows=rows, total_loss=total)
