"""The despeckling generator, the colorization generator, the discriminator,
and the losses that tie them together.

Networks are described declaratively by a :class:`NetworkSpec` (an ordered
tuple of :class:`LayerSpec`) and carry their trainable tensors and batch-norm
running statistics in a :class:`NetworkState`. A single interpreter,
:meth:`Network.__call__`, runs any spec.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import functional as F
from .functional import RunningStats
from .speckle import make_rng
from .tensor import ContractError, DimensionError, Tensor, as_tensor, get_default_dtype

DIVISION_EPS = 1e-3
LEAKY_SLOPE = 0.2

_ACTIVATIONS = {
    None: lambda x: x,
    "relu": F.relu,
    "leaky_relu": lambda x: F.leaky_relu(x, LEAKY_SLOPE),
    "tanh": F.tanh,
    "unit_tanh": F.unit_tanh,
    "sigmoid": F.sigmoid,
}


@dataclass(frozen=True)
class LayerSpec:
    """One stage of a network.

    ``kind`` is ``"conv"``, ``"pool"`` (global average), ``"linear"`` or
    ``"divide_input"`` (network input divided by the running activation).
    A ``skip_from`` layer's output is added before the activation.
    """

    name: str
    kind: str = "conv"
    c_in: int = 0
    c_out: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int | tuple[int, int] = 1
    bias: bool = True
    batch_norm: bool = False
    activation: str | None = None
    skip_from: str | None = None
    eps: float = 0.0


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    in_channels: int
    layers: tuple[LayerSpec, ...]
    min_size: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def conv_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind == "conv"]

    @property
    def skips(self) -> list[tuple[str, str]]:
        return [(l.skip_from, l.name) for l in self.layers if l.skip_from]

    def validate(self) -> None:
        channels = self.in_channels
        stride = 1
        seen: dict[str, tuple[int, int]] = {}
        spatial = True
        for layer in self.layers:
            if layer.activation not in _ACTIVATIONS:
                raise ValueError(f"{layer.name}: unknown activation {layer.activation!r}")
            if layer.kind == "conv":
                if not spatial or layer.c_in != channels:
                    raise DimensionError(f"{layer.name}: expects {layer.c_in} channels, gets {channels}")
                channels = layer.c_out
                stride *= layer.stride
            elif layer.kind == "pool":
                spatial = False
            elif layer.kind == "linear":
                if spatial or layer.c_in != channels:
                    raise DimensionError(f"{layer.name}: linear needs pooled {layer.c_in} features")
                channels = layer.c_out
            elif layer.kind == "divide_input":
                if channels != self.in_channels or stride != 1:
                    raise DimensionError(f"{layer.name}: estimate must match the input shape")
            else:
                raise ValueError(f"{layer.name}: unknown layer kind {layer.kind!r}")
            if layer.skip_from is not None:
                if layer.skip_from not in seen:
                    raise ValueError(f"{layer.name}: skip source {layer.skip_from!r} is not an earlier layer")
                if seen[layer.skip_from] != (channels, stride):
                    raise DimensionError(f"skip {layer.skip_from}->{layer.name}: shapes differ")
            if layer.name in seen:
                raise ValueError(f"duplicate layer name {layer.name!r}")
            seen[layer.name] = (channels, stride)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for l in self.layers:
            if l.kind == "conv":
                shapes[f"{l.name}.weight"] = (l.c_out, l.c_in, l.kernel, l.kernel)
                if l.bias:
                    shapes[f"{l.name}.bias"] = (l.c_out,)
                if l.batch_norm:
                    shapes[f"{l.name}.bn.gamma"] = (l.c_out,)
                    shapes[f"{l.name}.bn.beta"] = (l.c_out,)
            elif l.kind == "linear":
                shapes[f"{l.name}.weight"] = (l.c_out, l.c_in)
                if l.bias:
                    shapes[f"{l.name}.bias"] = (l.c_out,)
        return shapes

    def buffer_shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for l in self.layers:
            if l.kind == "conv" and l.batch_norm:
                out[f"{l.name}.bn.running_mean"] = (l.c_out,)
                out[f"{l.name}.bn.running_var"] = (l.c_out,)
        return out

    def param_count(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))


@dataclass
class NetworkState:
    params: dict[str, Tensor]
    stats: dict[str, RunningStats] = field(default_factory=dict)

    def arrays(self) -> dict[str, np.ndarray]:
        """Every parameter and running statistic as a named float array."""
        out = {k: p.data for k, p in self.params.items()}
        for k, s in self.stats.items():
            out[f"{k}.running_mean"] = s.mean
            out[f"{k}.running_var"] = s.var
        return out


def init_state(spec: NetworkSpec, seed: int) -> NetworkState:
    """Kaiming-uniform kernels, zero biases, unit/zero batch-norm affine."""
    rng = make_rng(seed)
    dtype = get_default_dtype()
    params: dict[str, Tensor] = {}
    stats: dict[str, RunningStats] = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(np.ascontiguousarray(data, dtype=dtype), requires_grad=True, name=f"{spec.name}.{name}")
    for l in spec.layers:
        if l.kind == "conv" and l.batch_norm:
            stats[f"{l.name}.bn"] = RunningStats(l.c_out)
    return NetworkState(params, stats)


class Network:
    """A spec paired with its state; call it on an N×C×H×W tensor."""

    def __init__(self, spec: NetworkSpec, state: NetworkState):
        self.spec = spec
        self.state = state

    def __iter__(self) -> Iterator:
        # allows ``spec, state = build_...()``
        return iter((self.spec, self.state))

    def parameters(self) -> list[Tensor]:
        return list(self.state.params.values())

    def named_parameters(self) -> dict[str, Tensor]:
        return dict(self.state.params)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, x, mode: str = "train") -> Tensor:
        x = as_tensor(x)
        if x.ndim == 3:
            x = F.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise DimensionError(
                f"{self.spec.name}: expected N×{self.spec.in_channels}×H×W input, got {x.shape}")
        if min(x.shape[2:]) < self.spec.min_size:
            raise ContractError(f"{self.spec.name}: spatial extent must be >= {self.spec.min_size}")
        p = self.state.params
        outputs: dict[str, Tensor] = {}
        h = x
        for l in self.spec.layers:
            if l.kind == "conv":
                h = F.conv2d(h, p[f"{l.name}.weight"], p.get(f"{l.name}.bias"), l.stride, l.padding)
                if l.batch_norm:
                    h = F.batch_norm(h, p[f"{l.name}.bn.gamma"], p[f"{l.name}.bn.beta"],
                                     self.state.stats[f"{l.name}.bn"], mode)
            elif l.kind == "pool":
                h = F.global_avg_pool(h)
            elif l.kind == "linear":
                h = F.linear(h, p[f"{l.name}.weight"], p.get(f"{l.name}.bias"))
            elif l.kind == "divide_input":
                h = F.elementwise_div(x, h, l.eps)
            if l.skip_from is not None:
                h = F.add(h, outputs[l.skip_from])
            h = _ACTIVATIONS[l.activation](h)
            outputs[l.name] = h
        return h


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def despeckling_spec(width: int = 64, depth: int = 8, eps: float = DIVISION_EPS,
                     estimate_activation: str | None = "relu") -> NetworkSpec:
    """Conv stack estimating the speckle, then input / estimate, then tanh.

    Layer 1 has conv + ReLU, layers 2..depth-1 conv + BN + ReLU, the last
    layer maps to one channel without normalization. Its ReLU keeps the
    estimate non-negative; with ``estimate_activation=None`` the estimate can
    cross zero and the division flips sign, which stalls training.
    """
    layers = [LayerSpec("conv1", c_in=1, c_out=width, activation="relu")]
    for i in range(2, depth):
        layers.append(LayerSpec(f"conv{i}", c_in=width, c_out=width, bias=False,
                                batch_norm=True, activation="relu"))
    layers.append(LayerSpec(f"conv{depth}", c_in=width, c_out=1, activation=estimate_activation))
    layers.append(LayerSpec("divide", kind="divide_input", eps=eps, activation="tanh"))
    return NetworkSpec("despeckle", 1, tuple(layers))


def colorization_spec(width: int = 64, depth: int = 8) -> NetworkSpec:
    """Stride-1 symmetric encoder-decoder with additive skips i -> depth-i."""
    n_skips = max(0, depth // 2 - 1)
    skip_into = {depth - i: f"conv{i}" for i in range(1, n_skips + 1)}
    layers = []
    for i in range(1, depth):
        layers.append(LayerSpec(f"conv{i}", c_in=1 if i == 1 else width, c_out=width, bias=False,
                                batch_norm=True, activation="relu", skip_from=skip_into.get(i)))
    layers.append(LayerSpec(f"conv{depth}", c_in=width if depth > 1 else 1, c_out=3,
                            activation="unit_tanh"))
    return NetworkSpec("colorize", 1, tuple(layers))


def discriminator_spec(width: int = 64, stages: int = 4) -> NetworkSpec:
    """Strided 3×3 conv stages doubling the width, global pooling, one logit.

    Stride-2 convs pad (0, 1) so even extents halve exactly.
    """
    layers = []
    c_in = 3
    for i in range(1, stages + 1):
        c_out = width * 2 ** (i - 1)
        layers.append(LayerSpec(f"conv{i}", c_in=c_in, c_out=c_out, stride=2, padding=(0, 1),
                                bias=(i == 1), batch_norm=(i > 1), activation="leaky_relu"))
        c_in = c_out
    layers.append(LayerSpec("pool", kind="pool"))
    layers.append(LayerSpec("fc", kind="linear", c_in=c_in, c_out=1, activation="sigmoid"))
    return NetworkSpec("discriminator", 3, tuple(layers), min_size=2 ** stages)


def build_despeckling_net(seed: int = 0, width: int = 64, depth: int = 8,
                          eps: float = DIVISION_EPS) -> Network:
    spec = despeckling_spec(width, depth, eps)
    return Network(spec, init_state(spec, seed))


def build_colorization_net(seed: int = 1, width: int = 64, depth: int = 8) -> Network:
    spec = colorization_spec(width, depth)
    return Network(spec, init_state(spec, seed))


def build_discriminator(seed: int = 2, width: int = 64, stages: int = 4) -> Network:
    spec = discriminator_spec(width, stages)
    return Network(spec, init_state(spec, seed))


def set_unit_estimate(net: Network) -> None:
    """Zero the speckle-estimate layer's kernel and set its bias to 1.

    The despeckler then starts from ``tanh(y / (1 + eps))`` with a live
    gradient everywhere, instead of a random estimate that can sit near 0 and
    saturate the tanh on dark pixels.
    """
    layer = next(l for l in reversed(net.spec.layers) if l.kind == "conv")
    p = net.state.params
    p[f"{layer.name}.weight"].data[...] = 0.0
    p[f"{layer.name}.bias"].data[...] = 1.0


def recalibrate_batch_norm(net: Network, batches) -> None:
    """Replace the running statistics by their plain average over ``batches``.

    The exponential running average mostly reflects the last few training
    batches; averaging the batch statistics of a fixed network over many
    batches gives steadier eval-mode outputs. Parameters are left untouched.
    """
    batches = list(batches)
    if not batches:
        raise ValueError("recalibrate_batch_norm needs at least one batch")
    stats = list(net.state.stats.values())
    momenta = [s.momentum for s in stats]
    for s in stats:
        s.mean[...] = 0.0
        s.var[...] = 0.0
    for k, batch in enumerate(batches):
        for s in stats:
            s.momentum = k / (k + 1)
        net(batch, mode="train")
    for s, m in zip(stats, momenta):
        s.momentum = m


# ---------------------------------------------------------------------------
# generator and losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    lambda_a: float = 0.1

    def __post_init__(self):
        if self.lambda_a < 0:
            raise ValueError("lambda_a must be >= 0")


def gray(x) -> Tensor:
    """BT.601 grayscale of an N×3×H×W (or 3×H×W) batch."""
    x = as_tensor(x)
    if x.ndim == 3:
        x = F.reshape(x, (1,) + x.shape)
    return F.gray(x)


def generator_forward(gd: Network, gc: Network, y, mode: str = "train") -> tuple[Tensor, Tensor]:
    """Run the cascade; returns the despeckled and the colorized batch."""
    despeckled = gd(y, mode)
    return despeckled, gc(despeckled, mode)


l1_loss = F.l1_loss


def adversarial_loss_g(d_outputs) -> Tensor:
    """Generator-side adversarial loss ``-mean(log D(fake))``."""
    return F.neg_mean_log(d_outputs)


def discriminator_loss_from_scores(d_real, d_fake) -> Tensor:
    real = F._scores(d_real)
    fake = F._scores(d_fake)
    return F.add(F.neg_mean_log(real), F.neg_mean_log(F.shift(F.scale(fake, -1.0), 1.0)))


def discriminator_loss(d: Network, real, fake, mode: str = "train") -> Tensor:
    """``-mean log D(real) - mean log(1 - D(fake))``; ``fake`` is detached."""
    real = as_tensor(real)
    fake = as_tensor(fake).detach()
    if real.size == 0 or fake.size == 0:
        raise ContractError("empty batch")
    return discriminator_loss_from_scores(d(real, mode), d(fake, mode))


def _batch(t) -> Tensor:
    t = as_tensor(t)
    return F.reshape(t, (1,) + t.shape) if t.ndim == 3 else t


def loss_despeckle(y, x, gd: Network, mode: str = "train") -> Tensor:
    """L1 between the despeckled speckled input and the grayscale truth."""
    return F.l1_loss(gd(_batch(y), mode), gray(x))


@dataclass
class GeneratorLosses:
    despeckle: Tensor
    color_l1: Tensor
    adversarial: Tensor
    colorize: Tensor
    total: Tensor
    despeckled: Tensor
    colorized: Tensor


def generator_losses(y, x, gd: Network, gc: Network, d: Network,
                     weights: LossWeights = LossWeights(), mode: str = "train") -> GeneratorLosses:
    """All generator-side terms from one shared forward pass."""
    y = _batch(y)
    x = _batch(x)
    despeckled, colorized = generator_forward(gd, gc, y, mode)
    l_d = F.l1_loss(despeckled, gray(x))
    l_c_l1 = F.l1_loss(colorized, x)
    l_adv = adversarial_loss_g(d(colorized, mode))
    l_c = F.add(l_c_l1, F.scale(l_adv, weights.lambda_a))
    return GeneratorLosses(l_d, l_c_l1, l_adv, l_c, F.add(l_d, l_c), despeckled, colorized)


def loss_colorize(y, x, gc: Network, gd: Network, d: Network,
                  weights: LossWeights = LossWeights(), mode: str = "train") -> Tensor:
    return generator_losses(y, x, gd, gc, d, weights, mode).colorize


def loss_total(y, x, gd: Network, gc: Network, d: Network,
               weights: LossWeights = LossWeights(), mode: str = "train") -> Tensor:
    return generator_losses(y, x, gd, gc, d, weights, mode).total
