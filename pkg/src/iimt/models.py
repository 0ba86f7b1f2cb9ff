"""Encoder, embedding classifier, domain discriminator, and gradient reversal."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, clip, ensure_tensor, matmul, relu, sigmoid, softmax

DISC_EPS = 1e-7


def grad_reverse(x: Tensor, mu: float) -> Tensor:
    """Identity forward; multiplies the incoming gradient by ``-mu`` on the way back."""
    x = ensure_tensor(x)
    return Tensor._make(x.data, (x,), lambda g: x._accumulate(-mu * g), "grad_reverse")


@dataclass
class GradientReversal:
    mu: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.mu):
            raise ConfigError(f"reversal coefficient must be finite, got {self.mu}")

    def __call__(self, x: Tensor) -> Tensor:
        return grad_reverse(x, self.mu)


class Linear:
    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]


class MLP:
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, layers: Sequence[Linear]):
        self.layers = list(layers)

    @property
    def in_features(self) -> int:
        return self.layers[0].in_features

    def __call__(self, x) -> Tensor:
        x = ensure_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"expected input of shape (B, {self.in_features}), got {x.shape}")
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x

    def parameters(self) -> List[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> Linear:
    # U(-a, a) with a = sqrt(3 / fan_in) has variance 1 / fan_in
    bound = np.sqrt(3.0 / fan_in)
    weight = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
    return Linear(weight, np.zeros(fan_out, dtype=dtype))


def init_mlp(rng: np.random.Generator, dims: Sequence[int], dtype) -> MLP:
    return MLP([init_linear(rng, a, b, dtype) for a, b in zip(dims[:-1], dims[1:])])


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    hidden_dims: Tuple[int, ...] = (64, 64)
    embed_dim: int = 32
    disc_hidden: int = 128
    mu: float = 1.0
    dtype: str = "float32"

    def validate(self) -> None:
        dims = [self.input_dim, *self.hidden_dims, self.embed_dim, self.num_classes, self.disc_hidden]
        if any(int(d) <= 0 for d in dims):
            raise ConfigError(f"layer widths must be positive, got {dims}")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if self.mu < 0:
            raise ConfigError("mu must be non-negative")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")


@dataclass
class ModelBundle:
    """Encoder ``f``, classifier ``g`` and discriminator ``D``.

    ``h(x) = softmax(g(f(x)))``; ``D`` sees encoder features through a
    gradient-reversal layer so one optimizer step trains ``D`` to separate
    domains and ``f`` to confuse it.
    """

    encoder: MLP
    classifier: MLP
    discriminator: MLP
    reversal: GradientReversal = field(default_factory=GradientReversal)

    def embed(self, x) -> Tensor:
        return self.encoder(x)

    def logits(self, x) -> Tensor:
        return self.classifier(self.embed(x))

    def classify(self, x) -> Tensor:
        return softmax(self.logits(x))

    def predict_from_embedding(self, z: Tensor) -> Tensor:
        return softmax(self.classifier(z))

    def discriminate(self, z: Tensor) -> Tensor:
        """Domain probability in (0, 1) for each embedding row, via gradient reversal."""
        z = ensure_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.discriminator.in_features:
            raise ShapeError(f"discriminator expects (B, {self.discriminator.in_features}), got {z.shape}")
        # same bounds as the BCE clamp, so the loss is unchanged
        return clip(sigmoid(self.discriminator(self.reversal(z))), DISC_EPS, 1.0 - DISC_EPS).reshape(-1)

    def named_parameters(self) -> List[Tuple[str, Tensor]]:
        out = []
        for net_name, net in (("encoder", self.encoder), ("classifier", self.classifier), ("discriminator", self.discriminator)):
            for i, layer in enumerate(net.layers):
                out.append((f"{net_name}.{i}.weight", layer.weight))
                out.append((f"{net_name}.{i}.bias", layer.bias))
        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing, extra = set(own) - set(state), set(state) - set(own)
            raise ShapeError(f"parameter names differ (missing {sorted(missing)}, unexpected {sorted(extra)})")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = arr.astype(p.dtype).copy()
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def clone(self) -> "ModelBundle":
        """Independent copy (no shared parameter storage), e.g. for evaluation."""
        return copy.deepcopy(self)


def init_params(config: ModelConfig, seed: int) -> ModelBundle:
    """Build a ModelBundle with fan-in-scaled uniform weights and zero biases."""
    config.validate()
    dtype = np.dtype(config.dtype)
    rng = np.random.default_rng(seed)
    encoder = init_mlp(rng, [config.input_dim, *config.hidden_dims, config.embed_dim], dtype)
    classifier = init_mlp(rng, [config.embed_dim, config.num_classes], dtype)
    discriminator = init_mlp(rng, [config.embed_dim, config.disc_hidden, 1], dtype)
    return ModelBundle(encoder, classifier, discriminator, GradientReversal(config.mu))
