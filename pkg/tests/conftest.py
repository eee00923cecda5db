import numpy as np
import pytest

# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

from ndsseg.data import FieldSequence
from ndsseg.models import ArchitectureKind, BackboneKind, ConvLstmSpec, ModelConfig
from ndsseg.raster import Raster


def tiny_model_config(arch: ArchitectureKind, backbone=BackboneKind.COMPACT_VGG,
                      seed=0, **overrides) -> ModelConfig:
    """Smallest sensible config; used for gradient checks at 16x16."""
    kwargs = dict(
        arch=arch,
        backbone=backbone,
        input_channels=9 if arch in (ArchitectureKind.NINE_CHANNEL,
                                     ArchitectureKind.NINE_CHANNEL_CONV1D) else 3,
        convlstm=ConvLstmSpec(layers=1, hidden_channels=2, kernel=3),
        width_mult=1 / 16,
        seed=seed,
    )
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def make_rgbn(rng: np.random.Generator, h=32, w=32) -> Raster:
    return Raster(rng.uniform(0.0, 1.0, size=(h, w, 4)).astype(np.float32))


def make_field(rng: np.random.Generator, h=64, w=64, num_flights=5,
               positives=None, field_id="f0") -> FieldSequence:
    """A random field with an optional explicit list of positive mask pixels."""
    mask = np.zeros((h, w, 1), dtype=np.float32)
    if positives:
        for r, c in positives:
            mask[r, c, 0] = 1.0
    flights = [(k, make_rgbn(rng, h, w)) for k in range(num_flights)]
    return FieldSequence(
        field_id=field_id,
        flights=flights,
        target_mask=Raster(mask),
        target_flight_index=num_flights - 1,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
