"""Prunable networks: layer specs, masked forward passes, parameter and FLOPs accounting.

Parameter tensors use the input-channel-first layout: conv weights are
(c_i, c_o, k, k) and fully-connected weights are (c_i, c_o), so channel
granularity always masks axis 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # "fc" | "conv" | "shortcut-conv"
    c_i: int
    c_o: int
    kernel: int = 1
    spatial_out: int = 1
    padding: int = 0
    prunable: bool = True

    @property
    def fan_in(self) -> int:
        """Receptive-field size times input channels (c_i for fc)."""
        if self.kind == "fc":
            return self.c_i
        return self.c_i * self.kernel * self.kernel

    @property
    def weight_count(self) -> int:
        if self.kind == "fc":
            return self.c_i * self.c_o
        return self.c_i * self.c_o * self.kernel * self.kernel

    @property
    def weight_shape(self) -> tuple[int, ...]:
        if self.kind == "fc":
            return (self.c_i, self.c_o)
        return (self.c_i, self.c_o, self.kernel, self.kernel)


class PrunableLayer:
    """Layer parameters plus the pruning state attached to them.

    ``scores`` and ``quota`` are Tensors so the shared SGD machinery can
    update them, but they never enter the autodiff tape: their gradients
    are assigned explicitly by the straight-through rules.
    """

    def __init__(self, spec: LayerSpec, params: Tensor):
        if params.shape != spec.weight_shape:
            raise T.ShapeError(f"{spec.name}: params {params.shape} != spec {spec.weight_shape}")
        self.spec = spec
        self.params = params
        self.scores: Tensor | None = None
        self.quota: Tensor | None = None
        self.mask = np.ones(spec.weight_shape)  # granularity-shaped, values in {0,1}

    @property
    def granularity(self) -> str:
        if self.mask.shape == self.spec.weight_shape:
            return "weight"
        return "channel"

    def mask_broadcast(self) -> np.ndarray:
        """Mask expanded to the full weight shape."""
        return np.broadcast_to(self._mask_view(), self.spec.weight_shape)

    def _mask_view(self) -> np.ndarray:
        if self.mask.shape == self.spec.weight_shape:
            return self.mask
        # channel mask: (c_i,) broadcast over the remaining axes
        return self.mask.reshape((self.spec.c_i,) + (1,) * (len(self.spec.weight_shape) - 1))

    def set_channel_mask(self, mask: np.ndarray) -> None:
        if mask.shape != (self.spec.c_i,):
            raise T.ShapeError(f"{self.spec.name}: channel mask {mask.shape} != ({self.spec.c_i},)")
        self.mask = mask

    def set_weight_mask(self, mask: np.ndarray) -> None:
        if mask.shape != self.spec.weight_shape:
            raise T.ShapeError(f"{self.spec.name}: weight mask {mask.shape} != {self.spec.weight_shape}")
        self.mask = mask

    def preserved_count(self) -> int:
        return int(np.count_nonzero(self.params.values * self.mask_broadcast()))


class Network:
    """Ordered prunable layers plus the wiring needed to run them."""

    def __init__(self, arch: str, layers: list[PrunableLayer], input_shape, classes: int,
                 residual_links: list[tuple[int, int]] | None = None):
        self.arch = arch
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.classes = classes
        self.residual_links = residual_links or []
        for a, b in self.residual_links:
            if not (0 <= a < len(layers) and 0 <= b < len(layers)):
                raise ValueError(f"residual link ({a}, {b}) references missing layers")
        self.total_params = sum(l.spec.weight_count for l in layers)
        # set by forward(): the masked parameter tensor of each layer, so the
        # pruning stage can read d(loss)/d(theta_hat) after backward
        self.last_theta_hat: list[Tensor | None] = [None] * len(layers)

    def forward(self, x: Tensor, masked: bool = True) -> Tensor:
        expected = int(np.prod(self.input_shape))
        if x.values.ndim < 2 or int(np.prod(x.shape[1:])) != expected:
            raise T.ShapeError(
                f"{self.arch}: input {x.shape} does not match batched {self.input_shape}"
            )
        if self.arch != "mlp-small" and x.values.ndim != len(self.input_shape) + 1:
            raise T.ShapeError(
                f"{self.arch}: input {x.shape} must be (batch, {', '.join(map(str, self.input_shape))})"
            )
        return _FORWARDS[self.arch](self, x, masked)

    def _weights(self, idx: int, masked: bool) -> Tensor:
        layer = self.layers[idx]
        if not masked:
            self.last_theta_hat[idx] = None
            return layer.params
        m = Tensor(layer._mask_view())
        theta_hat = T.mul(layer.params, m)
        self.last_theta_hat[idx] = theta_hat
        return theta_hat


def masked_forward(net: Network, x: Tensor) -> Tensor:
    """Forward pass through theta * mask in every prunable layer."""
    return net.forward(x, masked=True)


def _flatten(x: Tensor) -> Tensor:
    return T.reshape(x, (x.shape[0], -1))


def _forward_mlp(net: Network, x: Tensor, masked: bool) -> Tensor:
    h = _flatten(x) if x.values.ndim > 2 else x
    for i in range(len(net.layers)):
        h = T.matmul(h, net._weights(i, masked))
        if i < len(net.layers) - 1:
            h = T.relu(h)
    return h


def _forward_conv_small(net: Network, x: Tensor, masked: bool) -> Tensor:
    h = T.relu(T.conv2d(x, net._weights(0, masked), padding=1))
    h = T.max_pool2d(h)
    h = T.relu(T.conv2d(h, net._weights(1, masked), padding=1))
    h = T.max_pool2d(h)
    h = T.relu(T.conv2d(h, net._weights(2, masked), padding=1))
    h = _flatten(h)
    h = T.relu(T.matmul(h, net._weights(3, masked)))
    return T.matmul(h, net._weights(4, masked))


def _forward_resnet_tiny(net: Network, x: Tensor, masked: bool) -> Tensor:
    h = T.relu(T.conv2d(x, net._weights(0, masked), padding=1))
    h = T.max_pool2d(h)
    body = T.relu(T.conv2d(h, net._weights(1, masked), padding=1))
    body = T.conv2d(body, net._weights(2, masked), padding=1)
    short = T.conv2d(h, net._weights(3, masked), padding=0)
    h = T.relu(T.add(body, short))
    h = T.max_pool2d(h)
    h = _flatten(h)
    return T.matmul(h, net._weights(4, masked))


_FORWARDS = {
    "mlp-small": _forward_mlp,
    "conv-small": _forward_conv_small,
    "resnet-tiny": _forward_resnet_tiny,
}


def _init_params(spec: LayerSpec, rng: np.random.Generator) -> Tensor:
    bound = np.sqrt(6.0 / spec.fan_in)
    values = rng.uniform(-bound, bound, size=spec.weight_shape)
    return Tensor(values, requires_grad=True)


def build_network(arch: str, input_shape, classes: int, seed: int = 0) -> Network:
    """Construct one of the desk-scale architectures with seeded fan-in-scaled init."""
    if arch not in _FORWARDS:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {sorted(_FORWARDS)}")
    input_shape = tuple(input_shape)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(101,)))

    if arch == "mlp-small":
        d = int(np.prod(input_shape))
        specs = [
            LayerSpec("fc1", "fc", d, 64),
            LayerSpec("fc2", "fc", 64, 32),
            LayerSpec("fc3", "fc", 32, classes),
        ]
        links = []
    elif arch == "conv-small":
        c, h, w = input_shape
        if h % 4 or w % 4:
            raise ValueError(f"conv-small needs spatial dims divisible by 4, got {input_shape}")
        specs = [
            LayerSpec("conv1", "conv", c, 12, kernel=3, spatial_out=h, padding=1),
            LayerSpec("conv2", "conv", 12, 24, kernel=3, spatial_out=h // 2, padding=1),
            LayerSpec("conv3", "conv", 24, 24, kernel=3, spatial_out=h // 4, padding=1),
            LayerSpec("fc1", "fc", 24 * (h // 4) * (w // 4), 32),
            LayerSpec("fc2", "fc", 32, classes),
        ]
        links = []
    else:  # resnet-tiny
        c, h, w = input_shape
        if h % 4 or w % 4:
            raise ValueError(f"resnet-tiny needs spatial dims divisible by 4, got {input_shape}")
        specs = [
            LayerSpec("conv1", "conv", c, 16, kernel=3, spatial_out=h, padding=1),
            LayerSpec("block.conv_a", "conv", 16, 16, kernel=3, spatial_out=h // 2, padding=1),
            LayerSpec("block.conv_b", "conv", 16, 16, kernel=3, spatial_out=h // 2, padding=1),
            LayerSpec("block.shortcut", "shortcut-conv", 16, 16, kernel=1, spatial_out=h // 2),
            LayerSpec("fc", "fc", 16 * (h // 4) * (w // 4), classes),
        ]
        links = [(1, 3)]  # shortcut quota follows the block input layer

    layers = [PrunableLayer(s, _init_params(s, rng)) for s in specs]
    return Network(arch, layers, input_shape, classes, links)


def count_preserved(net: Network) -> tuple[int, list[int]]:
    """Non-zero weights in theta * mask, total and per layer."""
    per_layer = [l.preserved_count() for l in net.layers]
    return sum(per_layer), per_layer


def flops(net: Network, masks: list[np.ndarray] | None = None) -> tuple[float, list[float]]:
    """Multiply-accumulate counts per layer from the retained channel structure.

    A channel counts as retained when any weight touching it survives the
    mask. Conv layers cost retained_ci * retained_co * k^2 * spatial_out^2;
    fc layers cost retained_ci * retained_co.
    """
    per_layer = []
    for i, layer in enumerate(net.layers):
        if masks is None:
            m = layer.mask_broadcast()
        else:
            m = np.asarray(masks[i])
            if m.shape != layer.spec.weight_shape:
                m = np.broadcast_to(
                    m.reshape((layer.spec.c_i,) + (1,) * (len(layer.spec.weight_shape) - 1)),
                    layer.spec.weight_shape,
                )
        alive = (layer.params.values * m) != 0
        reduce_axes = tuple(range(1, alive.ndim))
        ci = int(np.any(alive, axis=reduce_axes).sum())
        co = int(np.any(alive, axis=(0,) + tuple(range(2, alive.ndim))).sum())
        cost = float(ci * co)
        if layer.spec.kind != "fc":
            cost *= layer.spec.kernel**2 * layer.spec.spatial_out**2
        per_layer.append(cost)
    return sum(per_layer), per_layer
