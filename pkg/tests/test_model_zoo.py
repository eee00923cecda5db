import numpy as np
import pytest
import torch

from ndsseg.errors import ConfigError, ShapeError, ValidationError
from ndsseg.models import (
    ArchitectureKind,
    BackboneKind,
    ConvLstmSpec,
    ModelConfig,
    UNet,
    build_model,
    forward_sequence,
)
from ndsseg.raster import Raster

from conftest import tiny_model_config


def rgb_raster(rng, side=32):
    return Raster(rng.uniform(size=(side, side, 3)).astype(np.float32))


class TestConfig:
    def test_nine_channel_requires_nine(self):
        with pytest.raises(ConfigError):
            ModelConfig(arch=ArchitectureKind.NINE_CHANNEL, input_channels=3)

    def test_sequence_arch_rejects_nine(self):
        with pytest.raises(ConfigError):
            ModelConfig(arch=ArchitectureKind.PROPOSED_SHARED, input_channels=9)

    def test_json_roundtrip(self):
        cfg = tiny_model_config(ArchitectureKind.CASCADING_MULTIPLY)
        assert ModelConfig.from_json(cfg.to_json()) == cfg

    def test_input_output_counts(self):
        assert ArchitectureKind.SINGLE_UNET.num_inputs == 1
        assert ArchitectureKind.SINGLE_UNET.num_outputs == 1
        assert ArchitectureKind.NINE_CHANNEL.num_inputs == 3
        assert ArchitectureKind.NINE_CHANNEL.num_outputs == 1
        assert ArchitectureKind.PROPOSED_SHARED.num_outputs == 3


class TestShapes:
    @pytest.mark.parametrize("arch", list(ArchitectureKind), ids=lambda a: a.value)
    @pytest.mark.parametrize("backbone", list(BackboneKind), ids=lambda b: b.value)
    def test_output_shape_and_range(self, rng, arch, backbone):
        model = build_model(tiny_model_config(arch, backbone=backbone))
        x = [rgb_raster(rng) for _ in range(arch.num_inputs)]
        pred = forward_sequence(model, x)
        assert len(pred.masks) == arch.num_outputs
        for m in pred.masks:
            assert (m.height, m.width, m.channels) == (32, 32, 1)
            assert np.all(m.values >= 0.0) and np.all(m.values <= 1.0)

    def test_wrong_input_count(self, rng):
        model = build_model(tiny_model_config(ArchitectureKind.PROPOSED_SHARED))
        with pytest.raises(ValidationError):
            forward_sequence(model, [rgb_raster(rng)])

    def test_dims_not_divisible_by_16(self, rng):
        model = build_model(tiny_model_config(ArchitectureKind.SINGLE_UNET))
        with pytest.raises(ShapeError):
            forward_sequence(model, [rgb_raster(rng, side=24)])


class TestParameterAccounting:
    def test_unshared_is_three_times_shared(self):
        shared = build_model(tiny_model_config(ArchitectureKind.PROPOSED_SHARED))
        unshared = build_model(tiny_model_config(ArchitectureKind.PROPOSED_UNSHARED))
        assert unshared.branch_parameter_count() == 3 * shared.branch_parameter_count()

    def test_single_equals_shared_branch(self):
        shared = build_model(tiny_model_config(ArchitectureKind.PROPOSED_SHARED))
        single = build_model(tiny_model_config(ArchitectureKind.SINGLE_UNET))
        assert single.branch_parameter_count() == shared.branch_parameter_count()

    def test_backbone_plans(self):
        assert BackboneKind.COMPACT_VGG.channel_plan == (16, 32, 64, 128)
        assert BackboneKind.COMPACT_EFFNET.channel_plan == (16, 24, 40, 80)


class TestSharedWeights:
    def test_same_input_same_branch_maps(self, rng):
        model = build_model(tiny_model_config(ArchitectureKind.PROPOSED_SHARED))
        x = rgb_raster(rng)
        pred = forward_sequence(model, [x, x, x])
        inter = pred.intermediates
        np.testing.assert_array_equal(inter["branch_0"].values, inter["branch_1"].values)
        np.testing.assert_array_equal(inter["branch_1"].values, inter["branch_2"].values)

    def test_unshared_branches_differ(self, rng):
        model = build_model(tiny_model_config(ArchitectureKind.PROPOSED_UNSHARED))
        x = rgb_raster(rng)
        pred = forward_sequence(model, [x, x, x])
        inter = pred.intermediates
        assert not np.array_equal(inter["branch_0"].values, inter["branch_1"].values)


class TestCascading:
    def test_zero_params_first_stage_half(self, rng):
        model = build_model(tiny_model_config(ArchitectureKind.CASCADING_CONCAT))
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        zero = Raster(np.zeros((32, 32, 3), dtype=np.float32))
        pred = forward_sequence(model, [zero, rgb_raster(rng), rgb_raster(rng)])
        np.testing.assert_allclose(pred.masks[0].values, 0.5, atol=1e-7)

    def test_final_loss_reaches_all_unets(self, rng):
        model = build_model(tiny_model_config(ArchitectureKind.CASCADING_CONCAT))
        model.train(True)
        inputs = [torch.rand(1, 3, 32, 32) for _ in range(3)]
        masks = model(*inputs)
        masks[-1].sum().backward()
        for unet in model.unets:
            grads = [p.grad for p in unet.parameters()]
            assert any(g is not None and g.abs().sum() > 0 for g in grads)

    def test_first_loss_reaches_only_first_unet(self, rng):
        model = build_model(tiny_model_config(ArchitectureKind.CASCADING_CONCAT))
        model.train(True)
        inputs = [torch.rand(1, 3, 32, 32) for _ in range(3)]
        masks = model(*inputs)
        masks[0].sum().backward()
        first = [p.grad for p in model.unets[0].parameters()]
        assert any(g is not None and g.abs().sum() > 0 for g in first)
        for unet in model.unets[1:]:
            assert all(p.grad is None or p.grad.abs().sum() == 0
                       for p in unet.parameters())


class TestFreezeEncoder:
    def test_encoder_gradients_zero(self, rng):
        model = build_model(
            tiny_model_config(ArchitectureKind.SINGLE_UNET, freeze_encoder=True)
        )
        model.train(True)
        out = model(torch.rand(1, 3, 32, 32))
        out[0].sum().backward()
        unet = model.unet
        for p in unet.encoder_parameters():
            assert not p.requires_grad and p.grad is None
        assert any(p.grad is not None for p in unet.decoder.parameters())


class TestDeterminism:
    def test_infer_deterministic_and_batch_invariant(self, rng):
        model = build_model(tiny_model_config(ArchitectureKind.PROPOSED_SHARED))
        model.train(False)
        x1 = [torch.rand(1, 3, 32, 32) for _ in range(3)]
        x2 = [torch.rand(1, 3, 32, 32) for _ in range(3)]
        with torch.no_grad():
            solo = model(*x1)
            batched = model(*[torch.cat([a, b]) for a, b in zip(x1, x2)])
        for s, b in zip(solo, batched):
            assert torch.allclose(s[0], b[0], atol=1e-6)

    def test_build_deterministic_in_seed(self, rng):
        a = build_model(tiny_model_config(ArchitectureKind.ONLY_LSTM, seed=9))
        b = build_model(tiny_model_config(ArchitectureKind.ONLY_LSTM, seed=9))
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)


class TestUNetInternals:
    def test_spatial_dims_preserved(self, rng):
        for backbone in BackboneKind:
            unet = UNet(3, backbone, width_mult=0.25)
            out = unet(torch.rand(1, 3, 48, 48))
            assert out.shape == (1, 1, 48, 48)
