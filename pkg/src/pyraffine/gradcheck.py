"""Finite-difference verification of every differentiable layer, alone and
composed into both regressors at toy sizes."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import regressors


def _weighted_sum(t: ad.Tensor, proj: np.ndarray) -> ad.Tensor:
    """Reduce a tensor to a scalar with a fixed random projection so the
    checks exercise non-uniform output gradients."""
    def backward(g):
        t._accumulate(g * proj)
    out = ad.Tensor(np.sum(t.data * proj))
    out._parents = (t,)
    out._backward = backward
    return out


def _check(name: str, loss_fn, params, rng, tol=1e-3, eps=1e-4) -> dict:
    report = ad.grad_check(loss_fn, params, eps=eps, tol=tol, rng=rng)
    report["name"] = name
    return report


def run_all(tol: float = 1e-3, seed: int = 0) -> list[dict]:
    """Run every layer and regressor check; returns one report per check."""
    rng = np.random.default_rng(seed)
    reports = []

    x0 = rng.normal(size=(1, 3, 6, 7))
    w0 = ad.parameter(rng.normal(size=(4, 3, 3, 3)) * 0.3, name="conv.w")
    b0 = ad.parameter(rng.normal(size=4) * 0.1, name="conv.b")
    proj = rng.normal(size=(1, 4, 6, 7))
    reports.append(_check(
        "conv2d stride1",
        lambda: _weighted_sum(ad.conv2d(ad.Tensor(x0), w0, b0), proj),
        [w0, b0], rng, tol))

    proj2 = rng.normal(size=(1, 4, 3, 4))
    reports.append(_check(
        "conv2d stride2",
        lambda: _weighted_sum(ad.conv2d(ad.Tensor(x0), w0, b0, stride=2), proj2),
        [w0, b0], rng, tol))

    xin = ad.parameter(rng.normal(size=(1, 3, 6, 7)), name="conv.x")
    reports.append(_check(
        "conv2d input grad",
        lambda: _weighted_sum(ad.conv2d(xin, w0, b0), proj),
        [xin], rng, tol))

    xr = ad.parameter(rng.normal(size=(2, 3, 4, 5)), name="relu.x")
    projr = rng.normal(size=(2, 3, 4, 5))
    reports.append(_check(
        "relu", lambda: _weighted_sum(ad.relu(xr), projr), [xr], rng, tol))

    xp = ad.parameter(rng.normal(size=(1, 2, 7, 9)), name="pool.x")
    projp = rng.normal(size=(1, 2, 2, 2))
    reports.append(_check(
        "adaptive_avg_pool2d",
        lambda: _weighted_sum(ad.adaptive_avg_pool2d(xp, (2, 2)), projp),
        [xp], rng, tol))

    xu = ad.parameter(rng.normal(size=(1, 2, 4, 5)), name="upsample.x")
    projy = rng.normal(size=(1, 2, 9, 11))
    reports.append(_check(
        "upsample_bilinear",
        lambda: _weighted_sum(ad.upsample_bilinear(xu, (9, 11)), projy),
        [xu], rng, tol))

    xa = ad.parameter(rng.normal(size=(1, 2, 3, 4)), name="concat.a")
    xb = ad.parameter(rng.normal(size=(1, 3, 3, 4)), name="concat.b")
    projc = rng.normal(size=(1, 5, 3, 4))
    reports.append(_check(
        "concat_channels",
        lambda: _weighted_sum(ad.concat_channels([xa, xb]), projc),
        [xa, xb], rng, tol))

    pa = ad.parameter(rng.normal(size=(5, 6)) * 0.2
                      + np.array([1, 0, 0, 0, 1, 0]), name="compose.a")
    pb = ad.parameter(rng.normal(size=(5, 6)) * 0.2
                      + np.array([1, 0, 0, 0, 1, 0]), name="compose.b")
    projk = rng.normal(size=(5, 6))
    reports.append(_check(
        "compose_affine",
        lambda: _weighted_sum(ad.compose_affine(pa, pb), projk),
        [pa, pb], rng, tol))

    grid = ad.parameter(rng.normal(size=(2, 2, 6)) * 0.2
                        + np.array([1, 0, 0, 0, 1, 0]), name="sample.grid")
    px = rng.uniform(0, 9, size=12)
    py = rng.uniform(0, 7, size=12)
    projs = rng.normal(size=(12, 6))
    reports.append(_check(
        "sample_params",
        lambda: _weighted_sum(ad.sample_params(grid, px, py, 10, 8), projs),
        [grid], rng, tol))

    coords = np.stack([px, py], axis=-1)
    targets = rng.normal(size=(12, 2))
    reports.append(_check(
        "flow_loss",
        lambda: ad.flow_loss(ad.sample_params(grid, px, py, 10, 8),
                             coords, targets),
        [grid], rng, tol))

    # full regressors on a toy 16x16 volume with radius 2 (25 channels)
    channels = np.abs(rng.normal(size=(25, 16, 16))) * 0.3
    cpts = np.stack([rng.uniform(0, 15, 20), rng.uniform(0, 15, 20)], axis=-1)
    ctgt = rng.normal(size=(20, 2))
    gp = regressors.make_grid_params(1, 25, seed=seed + 1)
    _nudge_off_kinks(gp, rng)

    def grid_loss():
        g = regressors.grid_graph(gp, channels)
        at = ad.sample_params(g, cpts[:, 0], cpts[:, 1], 16, 16)
        return ad.flow_loss(at, cpts, ctgt)

    # central differences step across rectifier kinks when a pre-activation
    # sits within eps of zero, so the composed checks use a smaller step
    reports.append(_check("grid regressor", grid_loss, gp.tensors(), rng, tol,
                          eps=1e-6))

    pp = regressors.make_pixel_params(25, seed=seed + 2)
    _nudge_off_kinks(pp, rng)

    def pixel_loss():
        g = regressors.pixel_graph(pp, channels)
        at = ad.sample_params(g, cpts[:, 0], cpts[:, 1], 16, 16)
        return ad.flow_loss(at, cpts, ctgt)

    reports.append(_check("pixel regressor", pixel_loss, pp.tensors(), rng, tol,
                          eps=1e-6))
    return reports


def _nudge_off_kinks(params, rng: np.random.Generator) -> None:
    """Randomize the zero-initialized blocks so every gradient is non-trivial
    and pre-activations sit away from the rectifier kinks."""
    for name, block in params.blocks.items():
        if name == "head.w":
            block.data += rng.normal(size=block.data.shape) * 0.01
        elif name.endswith(".b"):
            block.data += rng.normal(size=block.data.shape) * 0.05
