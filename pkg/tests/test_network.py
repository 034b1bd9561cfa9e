"""Network builders, masked forward equivalence, preserved counts, FLOPs."""

import numpy as np
import pytest

import robustprune.tensor as T
from robustprune.network import build_network, count_preserved, flops, masked_forward
from robustprune.tensor import Tensor

from helpers import brute_force_preserved, mac_count


def _input(rng, n=5, size=16):
    return Tensor(rng.uniform(0, 1, size=(n, 1, size, size)))


def test_conv_small_construction_contract():
    net = build_network("conv-small", (1, 16, 16), 2, seed=1)
    prunable = [l for l in net.layers if l.spec.prunable]
    assert len(prunable) >= 4
    assert net.total_params >= 10_000


def test_resnet_tiny_has_residual_links():
    net = build_network("resnet-tiny", (1, 16, 16), 2, seed=1)
    assert net.residual_links


def test_mlp_final_layer_matches_classes():
    net = build_network("mlp-small", (1, 16, 16), 2, seed=1)
    assert net.layers[-1].spec.c_o == 2


def test_unknown_arch_rejected():
    with pytest.raises(ValueError, match="unknown architecture"):
        build_network("vgg-19", (1, 16, 16), 2)


def test_build_is_deterministic():
    a = build_network("conv-small", (1, 16, 16), 2, seed=9)
    b = build_network("conv-small", (1, 16, 16), 2, seed=9)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.params.values, lb.params.values)


def test_fan_in_convention():
    net = build_network("conv-small", (1, 16, 16), 2, seed=0)
    conv, fc = net.layers[1].spec, net.layers[3].spec
    assert conv.fan_in == conv.c_i * conv.kernel**2
    assert fc.fan_in == fc.c_i


@pytest.mark.parametrize("arch", ["mlp-small", "conv-small", "resnet-tiny"])
def test_all_ones_mask_is_identity(arch):
    rng = np.random.default_rng(4)
    net = build_network(arch, (1, 16, 16), 3, seed=4)
    x = _input(rng)
    with T.no_grad():
        masked = masked_forward(net, x).values
        plain = net.forward(x, masked=False).values
    assert np.array_equal(masked, plain)


def test_all_zero_masks_make_logits_constant():
    rng = np.random.default_rng(5)
    net = build_network("conv-small", (1, 16, 16), 2, seed=5)
    for layer in net.layers:
        layer.set_weight_mask(np.zeros(layer.spec.weight_shape))
    with T.no_grad():
        a = masked_forward(net, _input(rng)).values
        b = masked_forward(net, _input(rng)).values
    assert np.array_equal(a, b)
    assert np.array_equal(a, np.zeros_like(a))


def test_zeroed_weight_equals_zeroed_mask_entry():
    rng = np.random.default_rng(6)
    net = build_network("conv-small", (1, 16, 16), 2, seed=6)
    x = _input(rng)
    mask = np.ones(net.layers[1].spec.weight_shape)
    mask[3, 5, 1, 2] = 0.0
    net.layers[1].set_weight_mask(mask)
    with T.no_grad():
        via_mask = masked_forward(net, x).values
    net.layers[1].set_weight_mask(np.ones_like(mask))
    net.layers[1].params.values[3, 5, 1, 2] = 0.0
    with T.no_grad():
        via_theta = masked_forward(net, x).values
    assert np.array_equal(via_mask, via_theta)


@pytest.mark.parametrize("arch,granularity", [
    ("conv-small", "weight"),
    ("resnet-tiny", "channel"),
])
def test_masked_forward_equivalence_oracle(arch, granularity):
    # masked forward must be bit-identical to overwriting theta <- theta*mask
    rng = np.random.default_rng(7)
    net = build_network(arch, (1, 16, 16), 2, seed=7)
    for layer in net.layers:
        if granularity == "weight":
            layer.set_weight_mask((rng.uniform(size=layer.spec.weight_shape) > 0.3).astype(float))
        else:
            m = (rng.uniform(size=layer.spec.c_i) > 0.3).astype(float)
            m[0] = 1.0  # keep at least one channel alive
            layer.set_channel_mask(m)
    x = _input(rng)
    with T.no_grad():
        masked = masked_forward(net, x).values
    for layer in net.layers:
        layer.params.values *= layer.mask_broadcast()
        layer.set_weight_mask(np.ones(layer.spec.weight_shape))
    with T.no_grad():
        overwritten = masked_forward(net, x).values
    assert np.array_equal(masked, overwritten)


def test_count_preserved_all_ones():
    net = build_network("conv-small", (1, 16, 16), 2, seed=8)
    total, per_layer = count_preserved(net)
    assert total == net.total_params
    assert per_layer == [l.spec.weight_count for l in net.layers]


def test_count_preserved_half_masked():
    net = build_network("mlp-small", (1, 16, 16), 2, seed=8)
    layer = net.layers[1]  # 64x32 = 2048 weights
    mask = np.ones(layer.spec.weight_shape)
    mask.ravel()[: mask.size // 2] = 0.0
    layer.set_weight_mask(mask)
    _, per_layer = count_preserved(net)
    assert per_layer[1] == mask.size // 2


def test_count_preserved_channel_mask_broadcast():
    # 4x8x3x3 conv keeping 2 of 4 input channels -> 2*8*9 = 144 weights
    from robustprune.network import LayerSpec, PrunableLayer

    spec = LayerSpec("toy", "conv", 4, 8, kernel=3, spatial_out=4)
    toy = PrunableLayer(spec, Tensor(np.random.default_rng(0).normal(size=spec.weight_shape)))
    toy.set_channel_mask(np.array([1.0, 0.0, 1.0, 0.0]))
    assert toy.preserved_count() == 144
    assert toy.preserved_count() == brute_force_preserved(toy.params.values, toy.mask)


def test_count_preserved_matches_brute_force_randomized():
    rng = np.random.default_rng(12)
    net = build_network("mlp-small", (1, 8, 8), 2, seed=12)
    for _ in range(100):
        for layer in net.layers:
            if rng.uniform() < 0.5:
                layer.set_weight_mask((rng.uniform(size=layer.spec.weight_shape) > rng.uniform()).astype(float))
            else:
                layer.set_channel_mask((rng.uniform(size=layer.spec.c_i) > rng.uniform()).astype(float))
        total, per_layer = count_preserved(net)
        expected = [brute_force_preserved(l.params.values, l.mask) for l in net.layers]
        assert per_layer == expected
        assert total == sum(expected)


def test_flops_unpruned_conv_and_fc():
    net = build_network("conv-small", (1, 16, 16), 2, seed=3)
    _, per_layer = flops(net)
    specs = [l.spec for l in net.layers]
    for cost, s in zip(per_layer, specs):
        assert cost == mac_count(s.c_i, s.c_o, s.kernel, s.spatial_out, s.kind == "fc")
    # hand value: conv c_i=3, c_o=8, k=3, spatial 8 -> 13824 MACs
    assert mac_count(3, 8, 3, 8, False) == 13824.0
    toy_total = 3 * 8 * 9 * 64
    assert toy_total == 13824
    # fc 10 -> 2 unpruned costs 20
    assert mac_count(10, 2, 1, 1, True) == 20.0


def test_flops_halves_with_half_input_channels():
    net = build_network("resnet-tiny", (1, 16, 16), 2, seed=3)
    layer = net.layers[1]
    _, before = flops(net)
    mask = np.ones(layer.spec.c_i)
    mask[: layer.spec.c_i // 2] = 0.0
    layer.set_channel_mask(mask)
    _, after = flops(net)
    assert after[1] == pytest.approx(before[1] / 2)


def test_flops_monotone_in_mask_entries():
    rng = np.random.default_rng(13)
    net = build_network("conv-small", (1, 16, 16), 2, seed=13)
    masks = [(rng.uniform(size=l.spec.weight_shape) > 0.2).astype(float) for l in net.layers]
    for layer, m in zip(net.layers, masks):
        layer.set_weight_mask(m)
    total_before, _ = flops(net)
    for _ in range(50):
        li = rng.integers(len(masks))
        flat = masks[li].ravel()
        ones = np.flatnonzero(flat)
        if ones.size == 0:
            continue
        flat[rng.choice(ones)] = 0.0
        net.layers[li].set_weight_mask(masks[li])
        total_after, _ = flops(net)
        assert total_after <= total_before
        total_before = total_after


def test_input_shape_mismatch_is_descriptive():
    net = build_network("conv-small", (1, 16, 16), 2, seed=1)
    with pytest.raises(T.ShapeError, match="conv-small"):
        net.forward(Tensor(np.zeros((2, 1, 8, 8))))
