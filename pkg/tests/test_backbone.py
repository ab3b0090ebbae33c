import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import direct_conv2d
from scenetext.autodiff import Tensor
from scenetext.backbone import Backbone, BackboneConfig, BackboneConfigError, Bottleneck, desk_backbone, full_backbone

FULL_PARAMS = 57_990_336  # cross-checked against torchvision's resnext101_32x8d minus layer4/fc, 1-channel stem


@pytest.fixture(scope="module")
def desk():
    return Backbone(desk_backbone(), np.random.default_rng(0), np.float64)


def test_desk_output_shape(desk):
    out = desk(Tensor(np.random.default_rng(1).uniform(size=(2, 1, 48, 192))))
    assert out.shape == (2, 128, 3, 12)


def test_full_config_contract():
    cfg = full_backbone()
    # stem + three residual stages = four of the five ResNeXt-101 stages
    assert not cfg.include_last_stage
    assert cfg.num_stages + 1 == 4
    assert [b for b, _, _ in cfg.used()] == [3, 4, 23]
    assert cfg.out_channels == 1024
    assert cfg.total_stride == 16
    assert cfg.output_size(48, 192) == (3, 12)
    assert all(c % cfg.cardinality == 0 for c in cfg.stage_channels)


@pytest.mark.slow
def test_full_output_shape_and_parameter_count():
    net = Backbone(full_backbone(), np.random.default_rng(2))
    assert net.num_parameters() == FULL_PARAMS
    out = net(Tensor(np.random.default_rng(3).uniform(size=(1, 1, 48, 192)).astype(np.float32)))
    assert out.shape == (1, 1024, 3, 12)


def test_parameter_count_oracle_from_torchvision():
    torch = pytest.importorskip("torch")
    torchvision = pytest.importorskip("torchvision")
    ref = torchvision.models.resnext101_32x8d(weights=None)
    ref.conv1 = torch.nn.Conv2d(1, 64, 7, 2, 3, bias=False)
    del ref.layer4, ref.fc
    assert sum(p.numel() for p in ref.parameters()) == FULL_PARAMS


def test_parameter_count_is_stable_across_seeds():
    a = Backbone(desk_backbone(), np.random.default_rng(4)).num_parameters()
    b = Backbone(desk_backbone(), np.random.default_rng(5)).num_parameters()
    assert a == b


def test_zero_input_gives_zero_features(desk):
    out = desk(Tensor(np.zeros((1, 1, 48, 192))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_identity_block_passes_input_through():
    block = Bottleneck(16, 16, 8, 1, 4, 8, True, np.random.default_rng(6), np.float64)
    x = np.abs(np.random.default_rng(7).normal(size=(2, 16, 6, 6)))  # post-ReLU input
    np.testing.assert_allclose(block(Tensor(x)).data, x, atol=0)


def test_stride_two_block_halves_spatial_dims():
    block = Bottleneck(16, 32, 16, 2, 4, 8, True, np.random.default_rng(8), np.float64)
    assert block(Tensor(np.zeros((1, 16, 6, 10)))).shape == (1, 32, 3, 5)


def test_depthwise_grouped_conv_matches_oracle():
    block = Bottleneck(8, 8, 8, 1, 8, 8, True, np.random.default_rng(9), np.float64)
    conv = block.conv2
    assert conv.groups == 8 and conv.weight.shape == (8, 1, 3, 3)
    x = np.random.default_rng(10).normal(size=(1, 8, 5, 5))
    np.testing.assert_allclose(conv(Tensor(x)).data, direct_conv2d(x, conv.weight.data, padding=1, groups=8), atol=1e-12)


@pytest.mark.parametrize(
    "strides",
    [[1, 1, 2, 2], [2, 2, 2, 2], [1, 2, 2, 1], [1, 2, 2, 3]],
)
def test_validator_rejects_schedules_not_giving_3x12(strides):
    with pytest.raises(BackboneConfigError):
        BackboneConfig(stage_strides=strides).validate((48, 192), (3, 12))


@given(st.lists(st.sampled_from([1, 2, 4]), min_size=4, max_size=4), st.sampled_from([1, 2, 4]))
@settings(max_examples=60, deadline=None)
def test_validator_accepts_exactly_the_stride_16_schedules(strides, stem):
    cfg = BackboneConfig(stage_strides=strides, stem_stride=stem)
    total = stem * int(np.prod(strides))
    if total == 16:
        cfg.validate((48, 192), (3, 12))
        assert cfg.output_size(48, 192) == (3, 12)
    else:
        with pytest.raises(BackboneConfigError):
            cfg.validate((48, 192), (3, 12))


def test_validator_rejects_channels_not_divisible_by_cardinality():
    with pytest.raises(BackboneConfigError, match="cardinality"):
        BackboneConfig(stage_channels=[32, 64, 96, 130]).validate()


def test_stage_strides_never_decrease_receptive_field():
    for cfg in (desk_backbone(), full_backbone()):
        assert all(s >= 1 for _, _, s in cfg.used())
    with pytest.raises(BackboneConfigError):
        BackboneConfig(stage_strides=[1, 2, 0, 2]).validate(output_hw=None)


def test_wrong_input_resolution(desk):
    with pytest.raises(ValueError, match="48"):
        desk(Tensor(np.zeros((1, 1, 64, 256))))


def test_config_round_trip():
    cfg = full_backbone()
    assert BackboneConfig.from_dict(cfg.to_dict()) == cfg
