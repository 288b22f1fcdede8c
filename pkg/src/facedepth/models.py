"""Generator, discriminator and Siamese verifier networks.

Channel counts follow the published layer strings at ``multiplier=1``:

* generator   k5n128s2 - k5n256s2 - k5n512s2 - k5n1024s2 - k5n512s2 - k5n256s2 - k5n128s2 - k5n64s2 - k5n1s1
* discriminator  k5n128s2 - k5n256s2 - k5n512s2 - k5n1024s2 - fc1
* Siamese tower  k3n64s2 - k3n128s2 - k3n256s2 - k3n256s2 - k3n256s2 - avgpoolk2 - fc128 - fc32 - fc1

Smaller multipliers shrink every convolution uniformly for desk-scale runs.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np

from .autodiff import functional as F
from .autodiff.nn import BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Module
from .autodiff.tensor import ShapeError, Tensor

ENCODER_CHANNELS = (128, 256, 512, 1024)
DECODER_CHANNELS = (512, 256, 128, 64)
SIAMESE_CHANNELS = (64, 128, 256, 256, 256)
SIAMESE_FC = (128, 32)
LEAKY_SLOPE = 0.2
ALLOWED_MULTIPLIERS = (1.0, 0.5, 0.25, 0.125, 0.0625)


class ConfigError(ValueError):
    """Network or pipeline configuration is invalid."""


def scaled(channels: int, multiplier: float) -> int:
    return max(4, int(round(channels * multiplier)))


def check_multiplier(multiplier: float) -> float:
    multiplier = float(multiplier)
    if not any(abs(multiplier - m) < 1e-12 for m in ALLOWED_MULTIPLIERS):
        raise ConfigError(f"width multiplier must be one of {ALLOWED_MULTIPLIERS}, got {multiplier}")
    return multiplier


class ConvBlock(Module):
    """Convolution (or transposed convolution), batch norm, activation."""

    def __init__(self, conv: Module, channels: int, activation: str):
        super().__init__()
        self.conv = conv
        self.bn = BatchNorm2d(channels)
        self.activation = activation

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        if self.activation == "leaky_relu":
            return F.leaky_relu(y, LEAKY_SLOPE)
        return F.relu(y)


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)

    def forward(self, x: Tensor, trace: Optional[list] = None) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if trace is not None:
                trace.append((i, x.shape))
        return x


def _encoder(multiplier: float) -> Sequential:
    blocks, cin = [], 1
    for c in ENCODER_CHANNELS:
        cout = scaled(c, multiplier)
        blocks.append(ConvBlock(Conv2d(cin, cout, 5, stride=2, padding=2), cout, "leaky_relu"))
        cin = cout
    return Sequential(*blocks)


def _check_input(x: Tensor, name: str, divisor: int = 16) -> None:
    if x.ndim != 4 or x.shape[1] != 1:
        raise ShapeError(f"{name}: expected N x 1 x H x W input, got shape {x.shape}")
    h, w = x.shape[2:]
    if h % divisor or w % divisor:
        raise ConfigError(f"{name}: spatial extent {h}x{w} is not divisible by {divisor}")


class GeneratorNet(Module):
    """Encoder-decoder mapping a gray face in [-1, 1] to a depth map in [-1, 1]."""

    def __init__(self, multiplier: float = 1.0):
        super().__init__()
        self.multiplier = check_multiplier(multiplier)
        self.encoder = _encoder(multiplier)
        blocks, cin = [], scaled(ENCODER_CHANNELS[-1], multiplier)
        for c in DECODER_CHANNELS:
            cout = scaled(c, multiplier)
            conv = ConvTranspose2d(cin, cout, 5, stride=2, padding=2, output_padding=1)
            blocks.append(ConvBlock(conv, cout, "relu"))
            cin = cout
        self.decoder = Sequential(*blocks)
        self.head = Conv2d(cin, 1, 5, stride=1, padding=2)

    def forward(self, gray: Tensor, trace: Optional[list] = None) -> Tensor:
        _check_input(gray, "generator")
        enc = [] if trace is not None else None
        dec = [] if trace is not None else None
        z = self.encoder(gray, enc)
        y = self.decoder(z, dec)
        out = F.tanh_act(self.head(y))
        if trace is not None:
            trace.extend(("encoder", s) for _, s in enc)
            trace.extend(("decoder", s) for _, s in dec)
            trace.append(("output", out.shape))
        return out


class DiscriminatorNet(Module):
    """Scores a depth map with the probability that it is an original (not generated) map."""

    def __init__(self, multiplier: float = 1.0, image_size: int = 96):
        super().__init__()
        if image_size % 16:
            raise ConfigError(f"discriminator: image size {image_size} is not divisible by 16")
        self.multiplier = check_multiplier(multiplier)
        self.image_size = image_size
        self.encoder = _encoder(multiplier)
        self.fc_inputs = scaled(ENCODER_CHANNELS[-1], multiplier) * (image_size // 16) ** 2
        self.fc = Linear(self.fc_inputs, 1)

    def forward(self, depth: Tensor, trace: Optional[list] = None) -> Tensor:
        _check_input(depth, "discriminator")
        if depth.shape[2:] != (self.image_size, self.image_size):
            raise ShapeError(f"discriminator built for {self.image_size}px inputs, got {depth.shape[2:]}")
        enc = [] if trace is not None else None
        z = self.encoder(depth, enc).flatten()
        out = F.sigmoid(self.fc(z))
        if trace is not None:
            trace.extend(("encoder", s) for _, s in enc)
            trace.append(("flatten", z.shape))
            trace.append(("output", out.shape))
        return out


class SiameseNet(Module):
    """Weight-shared towers fused by |a - b|, ending in a similarity score in (0, 1)."""

    def __init__(self, multiplier: float = 1.0, image_size: int = 96):
        super().__init__()
        self.multiplier = check_multiplier(multiplier)
        self.image_size = image_size
        blocks, cin, extent = [], 1, image_size
        for c in SIAMESE_CHANNELS:
            cout = scaled(c, multiplier)
            blocks.append(ConvBlock(Conv2d(cin, cout, 3, stride=2, padding=1), cout, "relu"))
            cin, extent = cout, (extent - 1) // 2 + 1
        pooled = extent // 2
        if pooled < 1:
            raise ConfigError(f"Siamese tower: {image_size}px input collapses before the 2x2 average pool")
        self.tower = Sequential(*blocks)
        self.embedding_dim = cin * pooled * pooled
        self.fc1 = Linear(self.embedding_dim, SIAMESE_FC[0])
        self.fc2 = Linear(SIAMESE_FC[0], SIAMESE_FC[1])
        self.fc3 = Linear(SIAMESE_FC[1], 1)

    def embed(self, x: Tensor, trace: Optional[list] = None) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (self.image_size, self.image_size):
            raise ShapeError(f"Siamese: expected N x 1 x {self.image_size} x {self.image_size}, got {x.shape}")
        tower = [] if trace is not None else None
        y = F.avg_pool2d(self.tower(x, tower), 2)
        if trace is not None:
            trace.extend(("tower", s) for _, s in tower)
            trace.append(("pool", y.shape))
        return y.flatten()

    def forward(self, a: Tensor, b: Tensor, trace: Optional[list] = None) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"Siamese: pair shapes differ, {a.shape} vs {b.shape}")
        # each branch runs alone so batch statistics never mix the two sides
        fused = (self.embed(a, trace) - self.embed(b)).abs()
        h = F.relu(self.fc1(fused))
        h = F.relu(self.fc2(h))
        return F.sigmoid(self.fc3(h))


def init_weights(net: Module, seed: int) -> None:
    """Normal(0, 0.02) weights, Normal(1, 0.02) batch-norm scales, zero biases.

    Draws happen in parameter-name order from one seeded stream, so the same
    seed always yields the same parameters. Running statistics are reset.
    """
    rng = np.random.default_rng(seed)
    for name, p in net.named_parameters():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            p.data[...] = rng.normal(1.0, 0.02, p.shape)
        elif leaf in ("bias", "beta"):
            p.data[...] = 0.0
        else:
            p.data[...] = rng.normal(0.0, 0.02, p.shape)
    for name, b in net.named_buffers():
        b[...] = 0.0 if name.endswith("running_mean") else 1.0


def layer_shapes(net: Module, input_shape: Tuple[int, ...]) -> List[tuple]:
    """Run one no-grad eval-mode pass on zeros and return the per-layer output shapes."""
    from .autodiff.tensor import no_grad

    was_training = net.training
    net.eval()
    trace: list = []
    try:
        with no_grad():
            x = Tensor(np.zeros(input_shape, dtype=np.float32))
            if isinstance(net, SiameseNet):
                net(x, x, trace)
            else:
                net(x, trace)
    finally:
        net.train(was_training)
    return trace
