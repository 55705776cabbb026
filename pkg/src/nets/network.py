"""
network.py

Builders and forward pass for the segmentation generator G and the two
fully convolutional discriminators D1 and D2.

A Network is an ordered list of LayerSpec descriptors plus a dict of named
parameter tensors. Layers run in order; encoder convolutions push their
input onto a skip stack and decoder "upsample_concat" layers pop it,
resize to its resolution and concatenate it, so the generator output
always matches the input size.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from autograd.tensor import ShapeError, Tensor
from autograd.ops import (
    bilinear_upsample, concat_channels, conv2d, leaky_relu, sigmoid, softmax_channel,
)

logger = logging.getLogger(__name__)

GENERATOR = "generator"
DISCRIMINATOR = "discriminator"

D1_CHANNELS = (64, 64, 128, 128, 1)
D2_CHANNELS = (48, 48, 96, 96, 1)


@dataclass(frozen=True)
class LayerSpec:
    """One step of a network's forward pass."""
    name: str
    kind: str                      # "conv" | "upsample_concat" | "upsample_input"
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    activation: Optional[str] = None   # "leaky_relu" | "sigmoid" | None
    push_skip: bool = False


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Five 4x4 stride-2 convolutions, leaky ReLU, final sigmoid, upsample to input."""
    channels: Tuple[int, ...] = D1_CHANNELS
    kernel: int = 4
    stride: int = 2
    padding: int = 1
    slope: float = 0.2
    upsample: bool = True


@dataclass
class Network:
    role: str
    layers: List[LayerSpec]
    params: Dict[str, Tensor] = field(default_factory=dict)
    slope: float = 0.2

    @property
    def in_channels(self) -> int:
        return next(l.in_channels for l in self.layers if l.kind == "conv")

    @property
    def out_channels(self) -> int:
        return [l for l in self.layers if l.kind == "conv"][-1].out_channels

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        return list(self.params.items())

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag


# ============================================================================
# Builders
# ============================================================================

def _conv_params(layer: LayerSpec, rng: np.random.Generator, slope: float) -> Dict[str, Tensor]:
    """Kaiming fan-in initialization for a leaky-ReLU network, zero bias."""
    fan_in = layer.in_channels * layer.kernel * layer.kernel
    std = np.sqrt(2.0 / (1.0 + slope ** 2)) / np.sqrt(fan_in)
    shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
    return {
        f"{layer.name}.weight": Tensor(rng.normal(0.0, std, size=shape), requires_grad=True),
        f"{layer.name}.bias": Tensor(np.zeros(layer.out_channels), requires_grad=True),
    }


def _check_chain(layers: Sequence[LayerSpec]) -> None:
    """Walk the channel counts through the skip stack; every conv must match its input."""
    convs = [l for l in layers if l.kind == "conv"]
    if not convs:
        raise ShapeError("network has no convolution layers")
    current = convs[0].in_channels
    stack: List[int] = []
    for layer in layers:
        if layer.kind == "conv":
            if layer.in_channels != current:
                raise ShapeError(f"layer {layer.name} takes {layer.in_channels} channels "
                                 f"but receives {current}")
            if layer.push_skip:
                stack.append(current)
            current = layer.out_channels
        elif layer.kind == "upsample_concat":
            if not stack:
                raise ShapeError(f"layer {layer.name} has no skip connection to pop")
            current += stack.pop()


def _initialize(role: str, layers: List[LayerSpec], seed: int, slope: float) -> Network:
    _check_chain(layers)
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    for layer in layers:
        if layer.kind == "conv":
            params.update(_conv_params(layer, rng, slope))
    return Network(role=role, layers=layers, params=params, slope=slope)


def build_generator(num_classes: int, base_width: int = 16, seed: int = 0,
                    slope: float = 0.2, in_channels: int = 3) -> Network:
    """
    Compact encoder-decoder segmentation network.

    Three stride-2 3x3 encoder stages (w, 2w, 4w channels) and three decoder
    stages that bilinearly upsample to the matching encoder resolution and
    concatenate that stage's input before a 3x3 convolution. Output is
    N x num_classes x H x W logits.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if base_width < 4:
        raise ValueError(f"base_width must be >= 4, got {base_width}")

    w = base_width
    layers = [
        LayerSpec("enc1", "conv", in_channels, w, 3, 2, 1, "leaky_relu", push_skip=True),
        LayerSpec("enc2", "conv", w, 2 * w, 3, 2, 1, "leaky_relu", push_skip=True),
        LayerSpec("enc3", "conv", 2 * w, 4 * w, 3, 2, 1, "leaky_relu", push_skip=True),
        LayerSpec("up3", "upsample_concat"),
        LayerSpec("dec3", "conv", 4 * w + 2 * w, 2 * w, 3, 1, 1, "leaky_relu"),
        LayerSpec("up2", "upsample_concat"),
        LayerSpec("dec2", "conv", 2 * w + w, w, 3, 1, 1, "leaky_relu"),
        LayerSpec("up1", "upsample_concat"),
        LayerSpec("classifier", "conv", w + in_channels, num_classes, 3, 1, 1, None),
    ]
    net = _initialize(GENERATOR, layers, seed, slope)
    logger.debug(f"Generator built: {net.parameter_count():,} parameters")
    return net


def build_discriminator(spec: DiscriminatorSpec, in_channels: int, seed: int = 0) -> Network:
    """Fully convolutional discriminator producing a per-pixel probability map."""
    if len(spec.channels) != 5:
        raise ValueError(f"discriminator needs exactly 5 channel counts, got {list(spec.channels)}")
    if spec.channels[-1] != 1:
        raise ValueError(f"discriminator final layer must have 1 channel, got {spec.channels[-1]}")
    if in_channels < 2:
        raise ValueError(f"discriminator input must carry >= 2 class channels, got {in_channels}")

    layers = []
    prev = in_channels
    for i, out in enumerate(spec.channels, start=1):
        activation = "sigmoid" if i == len(spec.channels) else "leaky_relu"
        layers.append(LayerSpec(f"conv{i}", "conv", prev, out, spec.kernel,
                                spec.stride, spec.padding, activation))
        prev = out
    if spec.upsample:
        layers.append(LayerSpec("upsample", "upsample_input"))
    net = _initialize(DISCRIMINATOR, layers, seed, spec.slope)
    logger.debug(f"Discriminator {list(spec.channels)} built: {net.parameter_count():,} parameters")
    return net


def expected_parameter_count(net: Network) -> int:
    return sum(l.out_channels * l.in_channels * l.kernel * l.kernel + l.out_channels
               for l in net.layers if l.kind == "conv")


# ============================================================================
# Forward
# ============================================================================

def _activate(x: Tensor, activation: Optional[str], slope: float) -> Tensor:
    if activation == "leaky_relu":
        return leaky_relu(x, slope)
    if activation == "sigmoid":
        return sigmoid(x)
    return x


def forward(net: Network, x: Tensor) -> Tensor:
    """
    Run the network. Records onto the active gradient tape, if any.

    Discriminator outputs are per-pixel probabilities at input resolution.
    """
    if x.ndim != 4 or x.shape[1] != net.in_channels:
        raise ShapeError(f"{net.role} expects N x {net.in_channels} x H x W input, got {x.shape}")

    input_hw = x.shape[2:]
    skips: List[Tensor] = []
    out = x
    for layer in net.layers:
        if layer.kind == "conv":
            if layer.push_skip:
                skips.append(out)
            out = conv2d(out, net.params[f"{layer.name}.weight"], net.params[f"{layer.name}.bias"],
                         stride=layer.stride, padding=layer.padding)
            out = _activate(out, layer.activation, net.slope)
        elif layer.kind == "upsample_concat":
            skip = skips.pop()
            out = bilinear_upsample(out, *skip.shape[2:])
            out = concat_channels([out, skip])
        elif layer.kind == "upsample_input":
            out = bilinear_upsample(out, *input_hw)
        else:
            raise ValueError(f"Unknown layer kind: {layer.kind}")
    return out


def predict_probabilities(net: Network, images: np.ndarray) -> np.ndarray:
    """Tape-free generator forward followed by the channel softmax."""
    return softmax_channel(forward(net, Tensor(images))).data


def predict(net: Network, images: np.ndarray) -> np.ndarray:
    """Per-pixel argmax labels (N x H x W)."""
    return predict_probabilities(net, images).argmax(axis=1)
