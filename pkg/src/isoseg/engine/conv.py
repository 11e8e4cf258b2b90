"""3D convolution and transposed convolution.

Both ops share three kernels written in "shift and sum" form: one GEMM maps
every channel vector through all kernel taps at once, then the per-tap
results are added at their shifted (and strided) output positions. The
forward correlation uses that path only at stride 1; strided correlation,
and any case where the intermediate tap buffer would be too large, falls
back to one GEMM per tap. Every output element is reduced in a fixed order,
so results do not depend on thread scheduling.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import DimensionError, ParameterError, Tensor, make_result

AXES = ("depth", "height", "width")

# Elements allowed in the all-taps intermediate buffer before falling back.
TAP_BUFFER_LIMIT = 48_000_000


def _triple(v, name: str) -> tuple[int, int, int]:
    if np.isscalar(v):
        v = (int(v),) * 3
    v = tuple(int(e) for e in v)
    if len(v) != 3:
        raise ParameterError(f"{name} needs 3 entries, got {len(v)}")
    return v


def _tap_slices(offset: Sequence[int], stride: Sequence[int], extent: Sequence[int]):
    return tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, extent))


def _taps(kshape):
    kd, kh, kw = kshape
    for a in range(kd):
        for b in range(kh):
            for c in range(kw):
                yield a, b, c


def correlate(xp: np.ndarray, w: np.ndarray, stride, out_spatial) -> np.ndarray:
    """Valid cross-correlation of padded ``xp`` (N,C,...) with ``w`` (O,C,k...)."""
    n = xp.shape[0]
    o, c = w.shape[:2]
    kshape = w.shape[2:]
    ntaps = int(np.prod(kshape))
    out_t = np.zeros((o, n) + tuple(out_spatial), dtype=np.result_type(xp, w))
    # the all-taps buffer would be evaluated at every input position, wasteful once strided
    if max(stride) == 1 and ntaps * o * xp[:, :1].size <= TAP_BUFFER_LIMIT:
        wmat = w.transpose(2, 3, 4, 0, 1).reshape(ntaps * o, c)
        y = np.tensordot(wmat, xp, axes=([1], [1]))
        y = y.reshape(tuple(kshape) + (o,) + y.shape[1:])
        for tap in _taps(kshape):
            out_t += y[tap][(slice(None), slice(None)) + _tap_slices(tap, stride, out_spatial)]
    else:
        for tap in _taps(kshape):
            sl = xp[(slice(None), slice(None)) + _tap_slices(tap, stride, out_spatial)]
            out_t += np.tensordot(w[(slice(None), slice(None)) + tap], sl, axes=([1], [1]))
    return np.ascontiguousarray(out_t.transpose(1, 0, 2, 3, 4))


def scatter_taps(g: np.ndarray, w: np.ndarray, stride, full_spatial) -> np.ndarray:
    """Adjoint of :func:`correlate` with respect to its input.

    ``g`` is (N,O,...); returns the (N,C,...) buffer of extent ``full_spatial``.
    """
    n = g.shape[0]
    o, c = w.shape[:2]
    kshape = w.shape[2:]
    ntaps = int(np.prod(kshape))
    out_spatial = g.shape[2:]
    gx_t = np.zeros((c, n) + tuple(full_spatial), dtype=np.result_type(g, w))
    if ntaps * c * g[:, :1].size <= TAP_BUFFER_LIMIT:
        wmat = w.transpose(2, 3, 4, 1, 0).reshape(ntaps * c, o)
        z = np.tensordot(wmat, g, axes=([1], [1]))
        z = z.reshape(tuple(kshape) + (c,) + z.shape[1:])
        for tap in _taps(kshape):
            gx_t[(slice(None), slice(None)) + _tap_slices(tap, stride, out_spatial)] += z[tap]
    else:
        for tap in _taps(kshape):
            idx = (slice(None), slice(None)) + _tap_slices(tap, stride, out_spatial)
            gx_t[idx] += np.tensordot(w[(slice(None), slice(None)) + tap], g, axes=([0], [1]))
    return np.ascontiguousarray(gx_t.transpose(1, 0, 2, 3, 4))


def kernel_grad(g: np.ndarray, xp: np.ndarray, stride, kshape) -> np.ndarray:
    """Gradient of :func:`correlate` with respect to the kernel, shape (O,C,k...)."""
    o = g.shape[1]
    c = xp.shape[1]
    out_spatial = g.shape[2:]
    gw = np.zeros((o, c) + tuple(kshape), dtype=np.result_type(g, xp))
    gmat = g.transpose(1, 0, 2, 3, 4).reshape(o, -1)
    # channels-last copy makes every tap slice a run of contiguous C-vectors
    xl = np.ascontiguousarray(xp.transpose(0, 2, 3, 4, 1))
    for tap in _taps(kshape):
        sl = xl[(slice(None),) + _tap_slices(tap, stride, out_spatial)]
        gw[(slice(None), slice(None)) + tap] = gmat @ sl.reshape(-1, c)
    return gw


def conv_output_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlate a (N,C,D,H,W) input with an (O,C,kd,kh,kw) kernel."""
    stride = _triple(stride, "stride")
    padding = _triple(padding, "padding")
    if min(stride) < 1:
        raise ParameterError(f"stride must be positive, got {stride}")
    if min(padding) < 0:
        raise ParameterError(f"padding must be non-negative, got {padding}")
    if kernel.ndim != 5:
        raise DimensionError(f"kernel must be rank 5, got rank {kernel.ndim}")
    if x.ndim != 5:
        raise DimensionError(f"input must be rank 5 (N,C,D,H,W), got rank {x.ndim}")
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(
            f"channel axis: input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    kshape = kernel.shape[2:]
    out_spatial = []
    for ax, n, k, s, p in zip(AXES, x.shape[2:], kshape, stride, padding):
        e = conv_output_extent(n, k, s, p)
        if e < 1:
            raise DimensionError(f"{ax} axis: extent {n} with pad {p} is smaller than kernel {k}")
        out_spatial.append(e)
    if bias is not None and bias.shape != (kernel.shape[0],):
        raise DimensionError(f"bias shape {bias.shape} != ({kernel.shape[0]},)")

    pad_width = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    xp = np.pad(x.data, pad_width) if any(padding) else x.data
    out = correlate(xp, kernel.data, stride, out_spatial)
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1, 1)

    def backward(g):
        if x.requires_grad:
            gxp = scatter_taps(g, kernel.data, stride, xp.shape[2:])
            crop = (slice(None), slice(None)) + tuple(
                slice(p, p + n) for p, n in zip(padding, x.shape[2:]))
            x._accumulate(gxp[crop])
        if kernel.requires_grad:
            kernel._accumulate(kernel_grad(g, xp, stride, kshape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3, 4)))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result(out, parents, backward, "conv3d")


def conv_transpose3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride=2,
                     padding=0, output_padding=0) -> Tensor:
    """Transposed convolution; ``kernel`` is (C_in, C_out, kd, kh, kw).

    Output extent per axis is ``(n - 1) * stride + k - 2 * padding + output_padding``.
    """
    stride = _triple(stride, "stride")
    padding = _triple(padding, "padding")
    output_padding = _triple(output_padding, "output_padding")
    if min(stride) < 1:
        raise ParameterError(f"stride must be positive, got {stride}")
    if kernel.ndim != 5:
        raise DimensionError(f"kernel must be rank 5, got rank {kernel.ndim}")
    if x.ndim != 5:
        raise DimensionError(f"input must be rank 5 (N,C,D,H,W), got rank {x.ndim}")
    if x.shape[1] != kernel.shape[0]:
        raise DimensionError(
            f"channel axis: input has {x.shape[1]} channels, kernel expects {kernel.shape[0]}")
    for ax, op, s in zip(AXES, output_padding, stride):
        if not 0 <= op < s:
            raise ParameterError(f"{ax} axis: output_padding {op} must lie in [0, stride)")
    kshape = kernel.shape[2:]
    full = [(n - 1) * s + k + op for n, s, k, op in zip(x.shape[2:], stride, kshape, output_padding)]
    out_spatial = [f - 2 * p for f, p in zip(full, padding)]
    for ax, e in zip(AXES, out_spatial):
        if e < 1:
            raise DimensionError(f"{ax} axis: padding leaves non-positive output extent {e}")
    if bias is not None and bias.shape != (kernel.shape[1],):
        raise DimensionError(f"bias shape {bias.shape} != ({kernel.shape[1]},)")

    buf = scatter_taps(x.data, kernel.data, stride, full)
    crop = (slice(None), slice(None)) + tuple(slice(p, p + e) for p, e in zip(padding, out_spatial))
    out = np.ascontiguousarray(buf[crop])
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1, 1)

    def backward(g):
        gbuf = np.zeros(buf.shape, dtype=g.dtype)
        gbuf[crop] = g
        if x.requires_grad:
            x._accumulate(correlate(gbuf, kernel.data, stride, x.shape[2:]))
        if kernel.requires_grad:
            kernel._accumulate(kernel_grad(x.data, gbuf, stride, kshape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3, 4)))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result(out, parents, backward, "conv_transpose3d")
