"""Pooling, normalization and dropout."""
from __future__ import annotations

import numpy as np

from .conv import AXES
from .tensor import DimensionError, ParameterError, Tensor, make_result


def max_pool3d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Non-overlapping 2x2x2 max pooling.

    Ties go to the first element of the window in C scan order, and the
    backward pass routes each output gradient to that single position.
    """
    if window != 2 or stride != 2:
        raise ParameterError("only window=2, stride=2 pooling is supported")
    if x.ndim != 5:
        raise DimensionError(f"input must be rank 5, got rank {x.ndim}")
    n, c, d, h, w = x.shape
    for ax, e in zip(AXES, (d, h, w)):
        if e % 2:
            raise DimensionError(f"{ax} axis: extent {e} is odd, cannot pool by 2")
    blocks = x.data.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2)
    blocks = blocks.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(n, c, d // 2, h // 2, w // 2, 8)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, d // 2, h // 2, w // 2, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
        x._accumulate(gb.reshape(x.shape))

    return make_result(np.ascontiguousarray(out), (x,), backward, "max_pool3d")


class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels: int, dtype=np.float32):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)


def batch_norm(x: Tensor, gamma: Tensor, beta_shift: Tensor, state: BatchNormState | None = None,
               training: bool = True, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    In training mode batch statistics are used and ``state`` is updated as
    ``running = momentum * running + (1 - momentum) * batch``; in eval mode
    the running statistics are used.
    """
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    if not 0 <= momentum <= 1:
        raise ParameterError(f"momentum must lie in [0, 1], got {momentum}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta_shift.shape != (c,):
        raise DimensionError(
            f"channel axis: input has {c} channels, affine params have {gamma.shape}/{beta_shift.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)

    if training:
        mean = x.data.mean(axis=axes)
        centered = x.data - mean.reshape(bshape)
        var = (centered * centered).mean(axis=axes)
        if state is not None:
            state.mean[...] = momentum * state.mean + (1 - momentum) * mean
            state.var[...] = momentum * state.var + (1 - momentum) * var
    else:
        if state is None:
            raise ParameterError("eval-mode batch_norm needs running statistics")
        mean, var = state.mean, state.var
        centered = x.data - mean.reshape(bshape)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta_shift.data.reshape(bshape)
    m = x.size // c

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta_shift.requires_grad:
            beta_shift._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gx_hat = g * gamma.data.reshape(bshape)
            if training:
                s1 = gx_hat.sum(axis=axes).reshape(bshape)
                s2 = (gx_hat * xhat).sum(axis=axes).reshape(bshape)
                gx = (inv_std.reshape(bshape) / m) * (m * gx_hat - s1 - xhat * s2)
            else:
                gx = gx_hat * inv_std.reshape(bshape)
            x._accumulate(gx)

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta_shift), backward, "batch_norm")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` at train time."""
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ParameterError("train-mode dropout needs a seeded generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    out = x.data * keep

    def backward(g):
        x._accumulate(g * keep)

    return make_result(out, (x,), backward, "dropout")
