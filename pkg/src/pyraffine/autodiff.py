"""Minimal reverse-mode autodiff over float64 numpy arrays.

Covers exactly the layer set the regressors need: convolution, rectifier,
adaptive average pooling, bilinear upsampling, channel concatenation, affine
parameter algebra and the flow loss.  Single-threaded per graph; all math in
64-bit so finite-difference checks at 1e-3 are meaningful.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import IDENTITY_PARAMS


class Tensor:
    """A node in the compute graph: value, optional gradient, backward hook."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple = ()
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep seeded with d(self)/d(self) = 1."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        if self._backward is None and not self._parents:
            raise RuntimeError("backward() called on a tensor with no graph")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    out._parents = tuple(p for p in parents if isinstance(p, Tensor))
    out._backward = backward
    return out


def add(x: Tensor, y: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(g)
        y._accumulate(g)
    return _node(x.data + y.data, (x, y), backward)


def mul_const(x: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)

    def backward(g):
        x._accumulate(g * c)
    return _node(x.data * c, (x,), backward)


def add_const(x: Tensor, c) -> Tensor:
    def backward(g):
        x._accumulate(g)
    return _node(x.data + np.asarray(c, dtype=np.float64), (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0

    def backward(g):
        x._accumulate(g * mask)
    return _node(np.where(mask, x.data, 0.0), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.data.shape

    def backward(g):
        x._accumulate(g.reshape(old))
    return _node(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def backward(g):
        x._accumulate(g.transpose(inv))
    return _node(x.data.transpose(axes), (x,), backward)


def concat_channels(parts: list[Tensor]) -> Tensor:
    sizes = [p.data.shape[1] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            p._accumulate(g[:, lo:hi])
    return _node(np.concatenate([p.data for p in parts], axis=1), parts, backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
    """NCHW convolution; w is (OC, C, KH, KW), b is (OC,)."""
    n, c, h, wd = x.data.shape
    oc, ci, kh, kw = w.data.shape
    if ci != c:
        raise ValueError(f"conv input has {c} channels, kernel expects {ci}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    wmat = w.data.reshape(oc, c * kh * kw).T
    out = (cols @ wmat + b.data).reshape(n, oh, ow, oc).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, oc)
        w._accumulate((cols.T @ gmat).T.reshape(oc, c, kh, kw))
        b._accumulate(gmat.sum(axis=0))
        dcols = (gmat @ wmat.T).reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                dxp[:, :, ki:ki + stride * oh:stride,
                    kj:kj + stride * ow:stride] += dcols[:, :, :, :, ki, kj]
        if pad:
            x._accumulate(dxp[:, :, pad:-pad, pad:-pad])
        else:
            x._accumulate(dxp)
    return _node(out, (x, w, b), backward)


def _pool_bounds(length: int, cells: int) -> list[tuple[int, int]]:
    return [(length * i // cells, length * (i + 1) // cells) for i in range(cells)]


def adaptive_avg_pool2d(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    n, c, h, w = x.data.shape
    gh, gw = out_hw
    rb = _pool_bounds(h, gh)
    cb = _pool_bounds(w, gw)
    out = np.empty((n, c, gh, gw))
    for i, (r0, r1) in enumerate(rb):
        for j, (c0, c1) in enumerate(cb):
            out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def backward(g):
        dx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rb):
            for j, (c0, c1) in enumerate(cb):
                area = (r1 - r0) * (c1 - c0)
                dx[:, :, r0:r1, c0:c1] += g[:, :, i, j, None, None] / area
        x._accumulate(dx)
    return _node(out, (x,), backward)


def interp_matrix(in_len: int, out_len: int) -> np.ndarray:
    """(out_len, in_len) dense bilinear interpolation matrix using the same
    center-aligned, edge-clamped convention as the field upsampler."""
    from .geometry import grid_interp_axis
    i0, i1, w1 = grid_interp_axis(in_len, out_len)
    m = np.zeros((out_len, in_len))
    rows = np.arange(out_len)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    return m


def upsample_bilinear(x: Tensor, out_hw: tuple[int, int]) -> Tensor:
    n, c, h, w = x.data.shape
    oh, ow = out_hw
    my = interp_matrix(h, oh)
    mx = interp_matrix(w, ow)
    out = np.einsum("ij,ncjk,lk->ncil", my, x.data, mx, optimize=True)

    def backward(g):
        x._accumulate(np.einsum("ij,ncil,lk->ncjk", my, g, mx, optimize=True))
    return _node(out, (x,), backward)


def params_from_head(raw: Tensor, feat_w: int, feat_h: int) -> Tensor:
    """Turn raw (1, 6, H, W) head output into (H, W, 6) affine parameters:
    residual about identity, translations rescaled from the normalized
    (tx/W, ty/H) channels the head predicts."""
    x = transpose(reshape(raw, raw.shape[1:]), (1, 2, 0))
    scale = np.array([1.0, 1.0, float(feat_w), 1.0, 1.0, float(feat_h)])
    return add_const(mul_const(x, scale), IDENTITY_PARAMS)


def sample_params(params: Tensor, px: np.ndarray, py: np.ndarray,
                  image_w: int, image_h: int) -> Tensor:
    """Bilinearly sample a (G, G, 6) parameter grid at pixel coords given in
    an image_h x image_w frame; returns (N, 6).  Matches the dense upsampler's
    cell-center convention."""
    g_h, g_w = params.data.shape[0], params.data.shape[1]
    gx = np.clip((np.asarray(px, dtype=np.float64) + 0.5) * g_w / image_w - 0.5,
                 0.0, g_w - 1.0)
    gy = np.clip((np.asarray(py, dtype=np.float64) + 0.5) * g_h / image_h - 0.5,
                 0.0, g_h - 1.0)
    x0 = np.minimum(np.floor(gx).astype(np.int64), max(g_w - 2, 0))
    y0 = np.minimum(np.floor(gy).astype(np.int64), max(g_h - 2, 0))
    x1 = np.minimum(x0 + 1, g_w - 1)
    y1 = np.minimum(y0 + 1, g_h - 1)
    fx = (gx - x0)[:, None]
    fy = (gy - y0)[:, None]
    p = params.data
    out = (p[y0, x0] * (1 - fx) * (1 - fy) + p[y0, x1] * fx * (1 - fy)
           + p[y1, x0] * (1 - fx) * fy + p[y1, x1] * fx * fy)

    def backward(g):
        dp = np.zeros_like(p)
        np.add.at(dp, (y0, x0), g * (1 - fx) * (1 - fy))
        np.add.at(dp, (y0, x1), g * fx * (1 - fy))
        np.add.at(dp, (y1, x0), g * (1 - fx) * fy)
        np.add.at(dp, (y1, x1), g * fx * fy)
        params._accumulate(dp)
    return _node(out, (params,), backward)


def compose_affine(outer: Tensor, inner: Tensor) -> Tensor:
    """Composition of (..., 6) parameter tensors; outer applied last."""
    a = outer.data
    b = inner.data
    a11, a12, atx = a[..., 0], a[..., 1], a[..., 2]
    a21, a22, aty = a[..., 3], a[..., 4], a[..., 5]
    b11, b12, btx = b[..., 0], b[..., 1], b[..., 2]
    b21, b22, bty = b[..., 3], b[..., 4], b[..., 5]
    out = np.stack([
        a11 * b11 + a12 * b21,
        a11 * b12 + a12 * b22,
        a11 * btx + a12 * bty + atx,
        a21 * b11 + a22 * b21,
        a21 * b12 + a22 * b22,
        a21 * btx + a22 * bty + aty,
    ], axis=-1)

    def backward(g):
        g11, g12, gtx = g[..., 0], g[..., 1], g[..., 2]
        g21, g22, gty = g[..., 3], g[..., 4], g[..., 5]
        da = np.stack([
            g11 * b11 + g12 * b12 + gtx * btx,
            g11 * b21 + g12 * b22 + gtx * bty,
            gtx,
            g21 * b11 + g22 * b12 + gty * btx,
            g21 * b21 + g22 * b22 + gty * bty,
            gty,
        ], axis=-1)
        db = np.stack([
            g11 * a11 + g21 * a21,
            g12 * a11 + g22 * a21,
            gtx * a11 + gty * a21,
            g11 * a12 + g21 * a22,
            g12 * a12 + g22 * a22,
            gtx * a12 + gty * a22,
        ], axis=-1)
        outer._accumulate(da)
        inner._accumulate(db)
    return _node(out, (outer, inner), backward)


def flow_loss(params: Tensor, coords: np.ndarray, targets: np.ndarray) -> Tensor:
    """(1/N) sum of squared differences between the displacement each sample's
    affine induces at its pixel and the sample's target displacement.

    params: (N, 6); coords: (N, 2) pixel positions (x, y); targets: (N, 2)
    displacements (dx, dy)."""
    coords = np.asarray(coords, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = coords.shape[0]
    if n == 0:
        raise ValueError("flow loss requires a non-empty sample set")
    x, y = coords[:, 0], coords[:, 1]
    p = params.data
    ex = p[:, 0] * x + p[:, 1] * y + p[:, 2] - x - targets[:, 0]
    ey = p[:, 3] * x + p[:, 4] * y + p[:, 5] - y - targets[:, 1]
    loss = float(np.sum(ex * ex + ey * ey) / n)

    def backward(g):
        s = 2.0 * float(g) / n
        dp = np.stack([ex * x, ex * y, ex, ey * x, ey * y, ey], axis=-1) * s
        params._accumulate(dp)
    return _node(loss, (params,), backward)


def mean_tensor(xs: list[Tensor]) -> Tensor:
    """Mean of scalar tensors (batch loss aggregation)."""
    n = len(xs)

    def backward(g):
        for t in xs:
            t._accumulate(g / n)
    return _node(np.mean([t.data for t in xs]), xs, backward)


class MomentumSGD:
    """Gradient descent with momentum over a list of parameter tensors."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                raise RuntimeError(
                    f"step() before backward(): no gradient on {p.name or 'parameter'}")
            v *= self.momentum
            v -= self.lr * p.grad
            p.data += v


def grad_check(loss_fn, params: list[Tensor], eps: float = 1e-4,
               tol: float = 1e-3, max_per_block: int = 24,
               rng: np.random.Generator | None = None) -> dict:
    """Compare reverse-mode gradients against central differences.

    loss_fn() must rebuild the graph from the current parameter values and
    return a scalar Tensor.  Returns a report dict with the max relative
    error, worst block name, and pass flag at the given tolerance.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    worst = 0.0
    worst_block = ""
    per_block = {}
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_per_block:
            idxs = np.arange(n)
        else:
            idxs = rng.choice(n, size=max_per_block, replace=False)
        block_worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            ana = a.reshape(-1)[i]
            denom = max(abs(numeric), abs(ana), 1e-8)
            rel = abs(numeric - ana) / denom
            block_worst = max(block_worst, rel)
        per_block[p.name or f"block{params.index(p)}"] = block_worst
        if block_worst > worst:
            worst = block_worst
            worst_block = p.name or f"block{params.index(p)}"
    return {
        "max_rel_error": worst,
        "worst_block": worst_block,
        "per_block": per_block,
        "passed": worst < tol,
        "tolerance": tol,
    }
