"""Parameterized layers on top of the functional engine."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .engine import BatchNormState, Tensor, batch_norm, conv3d, conv_transpose3d, relu
from .engine.functional import dropout


class Module:
    """Container whose parameters and buffers are discovered from attributes.

    Discovery follows attribute assignment order, which makes parameter names
    and ordering stable across runs (checkpoints and optimizers rely on it).
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, BatchNormState):
                yield name + ".running_mean", value.mean
                yield name + ".running_var", value.var
            elif isinstance(value, Module):
                yield from value.named_buffers(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    std = np.sqrt(2.0 / fan_in)
    return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)


class Conv(Module):
    """Convolution with bias; ``transpose`` selects a strided transposed conv."""

    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, stride: int = 1,
                 padding: int = 0, transpose: bool = False, output_padding: int = 0,
                 dtype=np.float32):
        self.cin, self.cout, self.kernel = cin, cout, kernel
        self.stride, self.padding = stride, padding
        self.transpose, self.output_padding = transpose, output_padding
        k3 = kernel ** 3
        if transpose:
            self.weight = he_normal(rng, (cin, cout, kernel, kernel, kernel), cin * k3 // stride ** 3 or 1, dtype)
        else:
            self.weight = he_normal(rng, (cout, cin, kernel, kernel, kernel), cin * k3, dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if self.transpose:
            return conv_transpose3d(x, self.weight, self.bias, self.stride, self.padding,
                                    self.output_padding)
        return conv3d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.state = BatchNormState(channels, dtype)
        self.momentum, self.eps = momentum, eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.state, training, self.momentum, self.eps)


class ConvBNReLU(Module):
    """Every convolution in the network is followed by batch norm and ReLU."""

    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator, bn_momentum: float,
                 bn_eps: float, dtype=np.float32, **conv_kw):
        self.conv = Conv(cin, cout, kernel, rng, dtype=dtype, **conv_kw)
        self.bn = BatchNorm(cout, bn_momentum, bn_eps, dtype)
        self.cin, self.cout = cin, cout

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return relu(self.bn(self.conv(x), training))


class DenseLayer(Module):
    """1x1x1 bottleneck, 3x3x3 conv producing ``growth`` maps, then dropout."""

    def __init__(self, cin: int, growth: int, bottleneck: int, dropout_rate: float,
                 rng: np.random.Generator, bn_momentum: float, bn_eps: float, dtype=np.float32):
        self.cin, self.growth = cin, growth
        self.bottleneck = ConvBNReLU(cin, bottleneck, 1, rng, bn_momentum, bn_eps, dtype)
        self.conv = ConvBNReLU(bottleneck, growth, 3, rng, bn_momentum, bn_eps, dtype, padding=1)
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        y = self.conv(self.bottleneck(x, training), training)
        return dropout(y, self.dropout_rate, training, rng)


class DenseBlock(Module):
    def __init__(self, cin: int, n_layers: int, growth: int, bottleneck: int, dropout_rate: float,
                 rng: np.random.Generator, bn_momentum: float, bn_eps: float, dtype=np.float32):
        self.cin, self.growth = cin, growth
        self.layers = []
        for i in range(n_layers):
            layer_in = cin + growth * i
            self.layers.append(DenseLayer(layer_in, growth, bottleneck, dropout_rate, rng,
                                          bn_momentum, bn_eps, dtype))
        for i, layer in enumerate(self.layers):
            assert layer.cin == cin + growth * i, "dense-block channel bookkeeping broken"
        self.cout = cin + growth * n_layers
        self.new_channels = growth * n_layers
