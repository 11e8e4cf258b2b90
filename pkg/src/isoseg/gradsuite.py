"""Finite-difference gradient checks for every differentiable op and a composed network.

All checks run in float64. Inputs are drawn away from the kinks of relu and
max-pool so central differences are meaningful.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .densenet import Model, toy_config
from .engine import Tensor, batch_norm, concat_channels, conv3d, conv_transpose3d, dropout, max_pool3d
from .engine.functional import BatchNormState
from .engine.gradcheck import finite_difference_check
from .engine.tensor import getitem, log, relu, reshape, sigmoid, softmax, tmean, tsum
from .losses import LossConfig, multi_label_loss, single_label_loss, soft_fbeta

OP_TOLERANCE = 1e-5
NETWORK_TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _param(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _away_from_zero(rng, *shape, gap=0.1) -> Tensor:
    v = rng.standard_normal(shape)
    v = np.where(np.abs(v) < gap, np.sign(v + 1e-12) * gap + v, v)
    return Tensor(v, requires_grad=True)


def _distinct(rng, *shape) -> Tensor:
    # well separated values keep every pooling window's argmax stable under +-h
    n = int(np.prod(shape))
    return Tensor((rng.permutation(n) * 0.05).reshape(shape), requires_grad=True)


def _weighted(out: Tensor, rng) -> Tensor:
    """Scalar reduction with random weights so every output entry matters differently."""
    r = rng.standard_normal(out.shape)
    return tsum(out * r)


def op_cases(seed: int = 0) -> list[tuple[str, Callable[[], Tensor], list[Tensor]]]:
    rng = np.random.default_rng(seed)
    cases = []

    a, b = _param(rng, 2, 3, 4), _param(rng, 3, 4)
    r = rng.standard_normal((2, 3, 4))
    cases.append(("add/sub/mul broadcast", lambda: tsum(((a + b) * a - b) * r), [a, b]))
    c, d = _param(rng, 2, 3), Tensor(rng.uniform(1, 2, (2, 3)), requires_grad=True)
    cases.append(("div", lambda: _weighted(c / d, np.random.default_rng(1)), [c, d]))
    e = Tensor(rng.uniform(0.5, 2, (3, 4)), requires_grad=True)
    cases.append(("log", lambda: _weighted(log(e), np.random.default_rng(2)), [e]))
    f = _param(rng, 2, 3, 4)
    cases.append(("sum/mean axis", lambda: tsum(tmean(f, axis=1) * tsum(f, axis=1)), [f]))
    g = _param(rng, 3, 4, 5)
    cases.append(("getitem/reshape", lambda: _weighted(reshape(getitem(g, (slice(None), 1)), (15,)),
                                                       np.random.default_rng(3)), [g]))
    h = _away_from_zero(rng, 2, 3, 4)
    cases.append(("relu", lambda: _weighted(relu(h), np.random.default_rng(4)), [h]))
    s = _param(rng, 2, 3, 4)
    cases.append(("sigmoid", lambda: _weighted(sigmoid(s), np.random.default_rng(5)), [s]))
    sm = _param(rng, 2, 4, 3)
    cases.append(("softmax", lambda: _weighted(softmax(sm, axis=1), np.random.default_rng(6)), [sm]))
    c1, c2 = _param(rng, 2, 2, 3, 3, 3), _param(rng, 2, 3, 3, 3, 3)
    cases.append(("concat", lambda: _weighted(concat_channels([c1, c2]), np.random.default_rng(7)), [c1, c2]))

    x, w, bias = _param(rng, 2, 3, 5, 6, 4), _param(rng, 4, 3, 3, 3, 3, scale=0.3), _param(rng, 4)
    cases.append(("conv3d pad 1", lambda: _weighted(conv3d(x, w, bias, padding=1), np.random.default_rng(8)),
                  [x, w, bias]))
    x2, w2 = _param(rng, 1, 2, 6, 6, 6), _param(rng, 3, 2, 2, 2, 2, scale=0.3)
    cases.append(("conv3d stride 2", lambda: _weighted(conv3d(x2, w2, stride=2), np.random.default_rng(9)),
                  [x2, w2]))
    x3, w3, b3 = _param(rng, 2, 3, 3, 4, 3), _param(rng, 3, 2, 3, 3, 3, scale=0.3), _param(rng, 2)
    cases.append(("conv_transpose3d", lambda: _weighted(
        conv_transpose3d(x3, w3, b3, stride=2, padding=1, output_padding=1), np.random.default_rng(10)),
        [x3, w3, b3]))
    xp = _distinct(rng, 2, 2, 4, 4, 6)
    cases.append(("max_pool3d", lambda: _weighted(max_pool3d(xp), np.random.default_rng(11)), [xp]))
    xb, gm, bt = _param(rng, 3, 2, 3, 3, 2), _param(rng, 2), _param(rng, 2)
    state = BatchNormState(2, np.float64)
    cases.append(("batch_norm train", lambda: _weighted(batch_norm(xb, gm, bt, state, training=True),
                                                        np.random.default_rng(12)), [xb, gm, bt]))
    xe, ge, be = _param(rng, 2, 2, 3, 3, 2), _param(rng, 2), _param(rng, 2)
    st = BatchNormState(2, np.float64)
    st.mean[:] = [0.3, -0.2]
    st.var[:] = [1.5, 0.7]
    cases.append(("batch_norm eval", lambda: _weighted(batch_norm(xe, ge, be, st, training=False),
                                                       np.random.default_rng(13)), [xe, ge, be]))
    xd = _param(rng, 2, 3, 4)
    cases.append(("dropout", lambda: _weighted(dropout(xd, 0.3, True, np.random.default_rng(14)),
                                               np.random.default_rng(15)), [xd]))

    logits = _param(rng, 2, 2, 4, 4, 4)
    tg = (rng.random((2, 4, 4, 4)) < 0.3).astype(np.float64)
    cases.append(("soft F-beta", lambda: soft_fbeta(sigmoid(logits[:, 0]), tg, 1.5), [logits]))
    cfg = LossConfig(betas={"csf": 1.5, "wm": 1.0})
    tgt = {"csf": tg, "wm": 1.0 - tg}
    cases.append(("multi-label loss", lambda: multi_label_loss(sigmoid(logits), tgt, cfg), [logits]))
    z4 = _param(rng, 2, 4, 3, 3, 3)
    onehot = np.eye(4)[rng.integers(0, 4, (2, 3, 3, 3))].transpose(0, 4, 1, 2, 3)
    cases.append(("single-label loss", lambda: single_label_loss(softmax(z4, axis=1), onehot), [z4]))
    return cases


def run_op_checks(seed: int = 0) -> list[CheckResult]:
    results = []
    for name, fn, params in op_cases(seed):
        t0 = time.perf_counter()
        err = finite_difference_check(fn, params, h=1e-4)
        results.append(CheckResult(name, err, OP_TOLERANCE, time.perf_counter() - t0))
    return results


def composed_network_check(seed: int = 0, entries_per_param: int = 2, head: str = "sigmoid",
                           h: float = 1e-6, floor: float = 1e-6) -> CheckResult:
    """Toy network (16^3 patches) plus loss, all parameters probed at random entries."""
    cfg = toy_config(head, patch_size=16)
    cfg.seed = seed
    model = Model(cfg, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, cfg.in_channels, 16, 16, 16)))
    labels = rng.integers(0, 4, (2, 16, 16, 16))
    if head == "sigmoid":
        tg = {"csf": (labels == 1).astype(float), "wm": (labels == 3).astype(float)}
        loss_cfg = LossConfig(betas={"csf": 1.5, "wm": 1.0})

        def fn():
            return multi_label_loss(model.forward(x, training=True, rng=np.random.default_rng(seed)), tg, loss_cfg)
    else:
        onehot = np.eye(4)[labels].transpose(0, 4, 1, 2, 3)

        def fn():
            return single_label_loss(model.forward(x, training=True, rng=np.random.default_rng(seed)), onehot)

    t0 = time.perf_counter()
    err = finite_difference_check(fn, model.parameters(), h=h, max_entries=entries_per_param, floor=floor,
                                  rng=np.random.default_rng(seed + 1))
    return CheckResult(f"composed toy network ({head})", err, NETWORK_TOLERANCE, time.perf_counter() - t0)
