"""Spatiotemporal detection and forecasting of nutrient-deficiency stress
from sequences of aerial field rasters."""

__version__ = "0.1.0"

from .raster import IndexKind, InputRepresentation, Raster, build_representation, compute_index  # noqa: F401
from .data import (  # noqa: F401
    AugmentParams,
    FieldSequence,
    SamplingKind,
    SamplingStrategy,
    SequenceSample,
    TaskKind,
    augment_sequence,
    load_manifest,
    sample_patch,
    split_dataset,
    stitch_tiles,
)
from .losses import LossConfig, dice_loss, focal_loss, segmentation_scores, sequence_loss  # noqa: F401
from .models import (  # noqa: F401
    ArchitectureKind,
    BackboneKind,
    ModelConfig,
    PredictionSet,
    build_model,
    forward_sequence,
)
from .synth import SynthConfig, generate_benchmark, generate_field_sequence  # noqa: F401
from .train import MetricsReport, TrainConfig, evaluate, predict_field, train  # noqa: F401
