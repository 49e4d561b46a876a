"""Finite-difference checks over every layer type and small end-to-end graphs."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import functional as F
from .gradcheck import GradCheckReport, grad_check
from .nets import (
    LossWeights,
    Network,
    build_colorization_net,
    build_despeckling_net,
    build_discriminator,
    discriminator_loss_from_scores,
    generator_losses,
)
from .tensor import Tensor

H = 1e-5
TOL = 1e-4


def _leaf(rng, shape, name, lo=None, hi=None):
    data = rng.normal(size=shape) if lo is None else rng.uniform(lo, hi, size=shape)
    return Tensor(np.ascontiguousarray(data), requires_grad=True, name=name)


def _away_from_zero(t: Tensor, margin: float = 0.05) -> Tensor:
    # finite differences across a ReLU kink are meaningless
    t.data[np.abs(t.data) < margin] = 0.3
    return t


def layer_cases(seed: int = 0) -> dict[str, Callable[[], GradCheckReport]]:
    rng = np.random.default_rng(seed)
    cases: dict[str, Callable[[], GradCheckReport]] = {}

    x = _leaf(rng, (2, 2, 5, 5), "x")
    k = _leaf(rng, (3, 2, 3, 3), "kernel")
    b = _leaf(rng, (3,), "bias")
    w1 = Tensor(rng.normal(size=(2, 3, 5, 5)))
    cases["conv2d"] = lambda: grad_check(lambda: F.sum_all(F.mul(F.conv2d(x, k, b, 1, 1), w1)),
                                         [x, k, b], H, TOL, label="conv2d")

    xs = _leaf(rng, (1, 2, 8, 8), "x")
    ks = _leaf(rng, (2, 2, 3, 3), "kernel")
    w2 = Tensor(rng.normal(size=(1, 2, 4, 4)))
    cases["conv2d_stride2"] = lambda: grad_check(
        lambda: F.sum_all(F.mul(F.conv2d(xs, ks, None, 2, (0, 1)), w2)), [xs, ks], H, TOL,
        label="conv2d_stride2")

    xb = _leaf(rng, (2, 3, 3, 3), "x")
    gamma = _leaf(rng, (3,), "gamma")
    beta = _leaf(rng, (3,), "beta")
    w3 = Tensor(rng.normal(size=(2, 3, 3, 3)))
    cases["batch_norm"] = lambda: grad_check(
        lambda: F.sum_all(F.mul(F.batch_norm(xb, gamma, beta), w3)), [xb, gamma, beta], H, TOL,
        label="batch_norm")

    for name, act in [("relu", F.relu), ("leaky_relu", lambda t: F.leaky_relu(t, 0.2)),
                      ("tanh", F.tanh), ("sigmoid", F.sigmoid), ("unit_tanh", F.unit_tanh)]:
        xa = _away_from_zero(_leaf(rng, (3, 4), "x"))
        wa = Tensor(rng.normal(size=(3, 4)))
        cases[name] = (lambda act=act, xa=xa, wa=wa, name=name:
                       grad_check(lambda: F.sum_all(F.mul(act(xa), wa)), [xa], H, TOL, label=name))

    num = _leaf(rng, (1, 1, 4, 4), "numerator", 0.1, 1.0)
    den = _leaf(rng, (1, 1, 4, 4), "denominator", 0.5, 1.5)
    cases["division_residual"] = lambda: grad_check(
        lambda: F.mean(F.elementwise_div(num, den, 1e-3)), [num, den], H, TOL, label="division_residual")

    a = _leaf(rng, (2, 3), "a")
    c = _leaf(rng, (2, 3), "b")
    w4 = Tensor(rng.normal(size=(2, 3)))
    cases["add"] = lambda: grad_check(lambda: F.sum_all(F.mul(F.add(a, c), w4)), [a, c], H, TOL, label="add")

    xp = _leaf(rng, (2, 3, 4, 4), "x")
    wl = _leaf(rng, (2, 3), "weight")
    bl = _leaf(rng, (2,), "bias")
    w5 = Tensor(rng.normal(size=(2, 2)))
    cases["pool_linear"] = lambda: grad_check(
        lambda: F.sum_all(F.mul(F.linear(F.global_avg_pool(xp), wl, bl), w5)), [xp, wl, bl], H, TOL,
        label="pool_linear")

    rgb = _leaf(rng, (2, 3, 4, 4), "rgb", 0.0, 1.0)
    tgt = Tensor(rng.random((2, 1, 4, 4)))
    cases["gray_l1"] = lambda: grad_check(lambda: F.l1_loss(F.gray(rgb), tgt), [rgb], H, TOL, label="gray_l1")

    p = _leaf(rng, (4, 1), "scores", 0.05, 0.95)
    q = _leaf(rng, (4, 1), "fake_scores", 0.05, 0.95)
    cases["adversarial_losses"] = lambda: grad_check(
        lambda: F.add(F.neg_mean_log(p), discriminator_loss_from_scores(p, q)), [p, q], H, TOL,
        label="adversarial_losses")
    return cases


def _net_params(nets: dict[str, Network]):
    params, names = [], []
    for prefix, net in nets.items():
        for k, t in net.state.params.items():
            params.append(t)
            names.append(f"{prefix}.{k}")
    return params, names


def despeckler_check(seed: int = 0, size: int = 8, max_per_block: int | None = 48) -> GradCheckReport:
    """Full-width despeckling network + L1 loss on a 1×1×size×size input."""
    rng = np.random.default_rng(seed)
    gd = build_despeckling_net(seed=seed)
    y = Tensor(rng.uniform(0.05, 1.0, size=(1, 1, size, size)))
    x = Tensor(rng.uniform(0.0, 1.0, size=(1, 1, size, size)))
    params, names = _net_params({"gd": gd})
    return grad_check(lambda: F.l1_loss(gd(y), x), params, H, TOL, names=names,
                      max_per_block=max_per_block, seed=seed, label="despeckling net + L1")


def end_to_end_check(seed: int = 0, width: int = 8, size: int = 8) -> GradCheckReport:
    """Downsized cascade (2 conv layers per sub-network) with every loss term."""
    rng = np.random.default_rng(seed)
    gd = build_despeckling_net(seed=seed, width=width, depth=2)
    gc = build_colorization_net(seed=seed + 1, width=width, depth=2)
    # two stride-2 stages keep several values per channel in the last batch norm
    d = build_discriminator(seed=seed + 2, width=4, stages=2)
    y = Tensor(rng.uniform(0.05, 1.0, size=(2, 1, size, size)))
    x = Tensor(rng.uniform(0.0, 1.0, size=(2, 3, size, size)))
    params, names = _net_params({"gd": gd, "gc": gc, "d": d})
    weights = LossWeights(0.1)
    return grad_check(lambda: generator_losses(y, x, gd, gc, d, weights).total, params, H, TOL,
                      names=names, seed=seed, label="end-to-end cascade + losses")


def discriminator_check(seed: int = 0, max_per_block: int | None = 24) -> GradCheckReport:
    """Full discriminator on a 3×16×16 input, scored by its own loss."""
    rng = np.random.default_rng(seed)
    d = build_discriminator(seed=seed)
    real = Tensor(rng.random((2, 3, 16, 16)))
    fake = Tensor(rng.random((2, 3, 16, 16)))
    params, names = _net_params({"d": d})
    return grad_check(lambda: discriminator_loss_from_scores(d(real), d(fake)), params, H, TOL,
                      names=names, max_per_block=max_per_block, seed=seed, label="discriminator")


def run_suite(seed: int = 0, full_networks: bool = True) -> list[GradCheckReport]:
    reports = [case() for case in layer_cases(seed).values()]
    reports.append(end_to_end_check(seed))
    if full_networks:
        reports.append(despeckler_check(seed))
        reports.append(discriminator_check(seed))
    return reports
