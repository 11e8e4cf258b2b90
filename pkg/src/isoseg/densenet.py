"""Configurable 3D fully convolutional DenseNet.

Layout (``levels`` = number of pooling steps = number of skip connections)::

    input ─ 2x2x2 conv, stride 2 ─ three 3x3x3 convs
          ─ [dense block ─ skip ─ transition down] x levels
          ─ center dense block
          ─ [transition up ─ concat skip ─ dense block] x levels
          ─ 2x2x2 transposed conv, stride 2 ─ 1x1x1 conv ─ sigmoid | softmax

Transition up only upsamples the maps newly produced by the preceding dense
block, which keeps the expanding path narrow. The last expanding block hands
its full feature stack to the final upsampling layer.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .engine import Tensor, concat_channels, load_checkpoint, max_pool3d, save_checkpoint, sigmoid, softmax
from .layers import Conv, ConvBNReLU, DenseBlock, Module


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    in_channels: int = 2
    out_channels: int = 2
    patch_size: int = 128
    downsample_stride: int = 2
    initial_convs: int = 3
    initial_width: int = 24
    levels: int = 5
    layers_per_block: int = 4
    growth_rate: int = 12
    bottleneck_factor: int = 4
    compression: float = 0.5
    dropout: float = 0.2
    head: str = "sigmoid"
    final_width: int = 24
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    seed: int = 0

    @property
    def required_divisor(self) -> int:
        return self.downsample_stride * 2 ** self.levels

    def validate(self) -> None:
        if not 0 < self.compression <= 1:
            raise ConfigError(f"compression must lie in (0, 1], got {self.compression}")
        if self.growth_rate < 1:
            raise ConfigError(f"growth_rate must be >= 1, got {self.growth_rate}")
        if self.head not in ("sigmoid", "softmax"):
            raise ConfigError(f"head must be 'sigmoid' or 'softmax', got {self.head!r}")
        if self.patch_size % self.required_divisor:
            raise ConfigError(
                f"patch_size {self.patch_size} must be divisible by {self.required_divisor} "
                f"(downsample stride {self.downsample_stride} x 2^{self.levels} poolings)")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("in_channels", "out_channels", "initial_width", "final_width", "bottleneck_factor",
                     "downsample_stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def paper_config(head: str = "sigmoid") -> ModelConfig:
    """Full-size network: 128^3 patches, growth 12, four layers per block."""
    out = 2 if head == "sigmoid" else 4
    return ModelConfig(out_channels=out, head=head)


def toy_config(head: str = "sigmoid", patch_size: int = 32) -> ModelConfig:
    """Desk-scale network: 32^3 patches downsampled to 16^3, three pooling levels."""
    out = 2 if head == "sigmoid" else 4
    return ModelConfig(out_channels=out, head=head, patch_size=patch_size, initial_width=8,
                       levels=3, layers_per_block=2, growth_rate=4, final_width=8, dropout=0.2)


def compressed(channels: int, theta: float) -> int:
    return math.ceil(theta * channels)


class TransitionDown(Module):
    def __init__(self, cin: int, theta: float, rng, cfg: ModelConfig, dtype=np.float32):
        self.cin = cin
        self.cout = compressed(cin, theta)
        self.conv = ConvBNReLU(cin, self.cout, 1, rng, cfg.bn_momentum, cfg.bn_eps, dtype)


class TransitionUp(Module):
    def __init__(self, cin: int, cout: int, rng, cfg: ModelConfig, dtype=np.float32):
        self.cin, self.cout = cin, cout
        self.conv = ConvBNReLU(cin, cout, 3, rng, cfg.bn_momentum, cfg.bn_eps, dtype,
                               stride=2, padding=1, transpose=True, output_padding=1)


def dense_block_forward(block: DenseBlock, x: Tensor, training: bool = False,
                        rng: np.random.Generator | None = None, new_only: bool = False) -> Tensor:
    """Run a dense block; returns the full stack, or only the new maps if ``new_only``."""
    if x.shape[1] != block.cin:
        raise ConfigError(f"dense block expects {block.cin} channels, got {x.shape[1]}")
    stack = x
    new = []
    for layer in block.layers:
        y = layer(stack, training, rng)
        new.append(y)
        stack = concat_channels([stack, y])
    if new_only:
        return concat_channels(new)
    return stack


def transition_down(td: TransitionDown, x: Tensor, training: bool = False) -> Tensor:
    return max_pool3d(td.conv(x, training))


def transition_up(tu: TransitionUp, x: Tensor, training: bool = False) -> Tensor:
    return tu.conv(x, training)


class Model(Module):
    """Realized network; ``skips`` records (contracting block, expanding block) index pairs."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        config.validate()
        self.config = config
        cfg = config
        rng = np.random.default_rng(cfg.seed)
        k, L = cfg.growth_rate, cfg.layers_per_block
        bottleneck = cfg.bottleneck_factor * k

        self.downsample = ConvBNReLU(cfg.in_channels, cfg.initial_width, cfg.downsample_stride, rng,
                                     cfg.bn_momentum, cfg.bn_eps, dtype, stride=cfg.downsample_stride)
        self.initial = [ConvBNReLU(cfg.initial_width, cfg.initial_width, 3, rng, cfg.bn_momentum,
                                   cfg.bn_eps, dtype, padding=1) for _ in range(cfg.initial_convs)]
        c = cfg.initial_width
        self.down_blocks, self.transitions_down, skip_channels = [], [], []
        for _ in range(cfg.levels):
            block = DenseBlock(c, L, k, bottleneck, cfg.dropout, rng, cfg.bn_momentum, cfg.bn_eps, dtype)
            self.down_blocks.append(block)
            skip_channels.append(block.cout)
            td = TransitionDown(block.cout, cfg.compression, rng, cfg, dtype)
            self.transitions_down.append(td)
            c = td.cout
        self.center = DenseBlock(c, L, k, bottleneck, cfg.dropout, rng, cfg.bn_momentum, cfg.bn_eps, dtype)
        upsampled = self.center.new_channels

        self.transitions_up, self.up_blocks = [], []
        self.skips = []
        for i in reversed(range(cfg.levels)):
            tu = TransitionUp(upsampled, upsampled, rng, cfg, dtype)
            self.transitions_up.append(tu)
            block = DenseBlock(upsampled + skip_channels[i], L, k, bottleneck, cfg.dropout, rng,
                               cfg.bn_momentum, cfg.bn_eps, dtype)
            self.skips.append((i, len(self.up_blocks)))
            self.up_blocks.append(block)
            upsampled = block.new_channels
        last = self.up_blocks[-1].cout if self.up_blocks else self.center.cout
        self.upsample = ConvBNReLU(last, cfg.final_width, cfg.downsample_stride, rng, cfg.bn_momentum,
                                   cfg.bn_eps, dtype, stride=cfg.downsample_stride, transpose=True)
        self.head = Conv(cfg.final_width, cfg.out_channels, 1, rng, dtype=dtype)
        assert len(self.skips) == cfg.levels

    @property
    def layer_specs(self) -> list[str]:
        """Human-readable layer listing in forward order."""
        specs = [f"downsample conv {self.downsample.cin}->{self.downsample.cout}"]
        specs += [f"conv3 {m.cin}->{m.cout}" for m in self.initial]
        for b, td in zip(self.down_blocks, self.transitions_down):
            specs += [f"dense {b.cin}->{b.cout}", f"transition down {td.cin}->{td.cout}"]
        specs.append(f"dense {self.center.cin}->{self.center.cout}")
        for tu, b in zip(self.transitions_up, self.up_blocks):
            specs += [f"transition up {tu.cin}->{tu.cout}", f"dense {b.cin}->{b.cout}"]
        specs += [f"upsample {self.upsample.cin}->{self.upsample.cout}",
                  f"head {self.head.cin}->{self.head.cout} {self.config.head}"]
        return specs

    def logits(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        cfg = self.config
        if x.ndim != 5 or x.shape[1] != cfg.in_channels:
            raise ConfigError(f"expected (N,{cfg.in_channels},D,H,W) input, got {x.shape}")
        for e in x.shape[2:]:
            if e % cfg.required_divisor:
                raise ConfigError(f"spatial extent {e} not divisible by {cfg.required_divisor}")
        h = self.downsample(x, training)
        for conv in self.initial:
            h = conv(h, training)
        skips = []
        for block, td in zip(self.down_blocks, self.transitions_down):
            h = dense_block_forward(block, h, training, rng)
            skips.append(h)
            h = transition_down(td, h, training)
        h = dense_block_forward(self.center, h, training, rng, new_only=bool(self.up_blocks))
        for j, ((i, _), tu, block) in enumerate(zip(self.skips, self.transitions_up, self.up_blocks)):
            h = transition_up(tu, h, training)
            h = concat_channels([h, skips[i]])
            last = j == len(self.up_blocks) - 1
            h = dense_block_forward(block, h, training, rng, new_only=not last)
        h = self.upsample(h, training)
        return self.head(h)

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Class probabilities with the same spatial shape as ``x``."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.head.weight.dtype))
        z = self.logits(x, training, rng)
        return sigmoid(z) if self.config.head == "sigmoid" else softmax(z, axis=1)

    __call__ = forward

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: p.data for name, p in self.named_parameters()}
        arrays.update(dict(self.named_buffers()))
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = {name: p.data for name, p in self.named_parameters()}
        own.update(dict(self.named_buffers()))
        missing = set(own) - set(arrays)
        extra = set(arrays) - set(own)
        if missing or extra:
            raise ConfigError(f"checkpoint mismatch: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
        for name, dst in own.items():
            src = arrays[name]
            if src.shape != dst.shape:
                raise ConfigError(f"{name}: shape {src.shape} != {dst.shape}")
            dst[...] = src


def build_model(config: ModelConfig) -> Model:
    return Model(config)


def count_parameters(model: Module) -> int:
    """Number of trainable scalars (conv weights and biases, batch-norm affine terms)."""
    return int(sum(p.size for p in model.parameters()))


def save_model(model: Model, path) -> Path:
    meta = {f"model.{k}": repr(v) for k, v in model.config.to_dict().items()}
    return save_checkpoint(path, model.state_arrays(), meta)


def load_model(path) -> Model:
    import ast

    arrays, meta = load_checkpoint(path)
    cfg = {k[6:]: ast.literal_eval(v) for k, v in meta.items() if k.startswith("model.")}
    model = Model(ModelConfig.from_dict(cfg))
    model.load_state_arrays(arrays)
    return model
