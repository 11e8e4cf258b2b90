"""Direct nested-loop reference implementations.

These are deliberately naive and only meant for tiny inputs; the fast paths
in :mod:`isoseg.engine.conv` are checked against them.
"""
from __future__ import annotations

import numpy as np


def conv3d_direct(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
                  stride=(1, 1, 1), padding=(0, 0, 0)) -> np.ndarray:
    n, c, d, h, wd = x.shape
    o, c2, kd, kh, kw = w.shape
    assert c == c2
    sd, sh, sw = stride
    pd, ph, pw = padding
    od = (d + 2 * pd - kd) // sd + 1
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((n, o, od, oh, ow), dtype=np.float64)
    for bi in range(n):
        for oc in range(o):
            for z in range(od):
                for y in range(oh):
                    for xx in range(ow):
                        acc = 0.0 if b is None else float(b[oc])
                        for ic in range(c):
                            for a in range(kd):
                                iz = z * sd + a - pd
                                if not 0 <= iz < d:
                                    continue
                                for bb in range(kh):
                                    iy = y * sh + bb - ph
                                    if not 0 <= iy < h:
                                        continue
                                    for cc in range(kw):
                                        ix = xx * sw + cc - pw
                                        if 0 <= ix < wd:
                                            acc += x[bi, ic, iz, iy, ix] * w[oc, ic, a, bb, cc]
                        out[bi, oc, z, y, xx] = acc
    return out


def conv_transpose3d_direct(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
                            stride=(2, 2, 2), padding=(0, 0, 0),
                            output_padding=(0, 0, 0)) -> np.ndarray:
    """Scatter form: every input voxel stamps the kernel at ``stride * index - padding``."""
    n, ci, d, h, wd = x.shape
    ci2, co, kd, kh, kw = w.shape
    assert ci == ci2
    dims = [(e - 1) * s + k - 2 * p + op for e, s, k, p, op in
            zip((d, h, wd), stride, (kd, kh, kw), padding, output_padding)]
    out = np.zeros((n, co, *dims), dtype=np.float64)
    for bi in range(n):
        for ic in range(ci):
            for z in range(d):
                for y in range(h):
                    for xx in range(wd):
                        v = x[bi, ic, z, y, xx]
                        for oc in range(co):
                            for a in range(kd):
                                oz = z * stride[0] + a - padding[0]
                                if not 0 <= oz < dims[0]:
                                    continue
                                for bb in range(kh):
                                    oy = y * stride[1] + bb - padding[1]
                                    if not 0 <= oy < dims[1]:
                                        continue
                                    for cc in range(kw):
                                        ox = xx * stride[2] + cc - padding[2]
                                        if 0 <= ox < dims[2]:
                                            out[bi, oc, oz, oy, ox] += v * w[ic, oc, a, bb, cc]
    if b is not None:
        out += np.asarray(b).reshape(1, -1, 1, 1, 1)
    return out


def max_pool3d_direct(x: np.ndarray) -> np.ndarray:
    n, c, d, h, w = x.shape
    out = np.empty((n, c, d // 2, h // 2, w // 2), dtype=x.dtype)
    for bi in range(n):
        for ch in range(c):
            for z in range(d // 2):
                for y in range(h // 2):
                    for xx in range(w // 2):
                        out[bi, ch, z, y, xx] = x[bi, ch, 2 * z:2 * z + 2, 2 * y:2 * y + 2,
                                                  2 * xx:2 * xx + 2].max()
    return out
