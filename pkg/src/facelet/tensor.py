"""Dense float tensors with reverse-mode automatic differentiation.

Everything is numpy-backed. Values are float32 by default; tests that need
tight finite-difference agreement can switch to float64 via `using_dtype`.
Ops are defined on (C, H, W) tensors and transparently accept an extra
leading batch axis (N, C, H, W) — the spatial/channel semantics are
unchanged, training loops just stack samples for throughput.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

_DEFAULT_DTYPE = np.float32

_grad_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Skip graph construction inside the block (inference-only forward)."""
    prev = _grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's contract."""


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def using_dtype(dtype):
    """Temporarily set the dtype new tensors are created with (f32/f64)."""
    global _DEFAULT_DTYPE
    if np.dtype(dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}")
    prev = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


class Tensor:
    """A dense n-d float array, possibly a node in a backward graph.

    `data` is a C-contiguous ndarray; the flat row-major buffer and the shape
    together are the value. Plain tensors are constants; `Parameter` leaves
    collect gradients. Intermediate nodes carry `_parents` and a `_vjp`
    closure mapping the output gradient to per-parent gradients.
    """

    __slots__ = ("data", "_parents", "_vjp")

    def __init__(self, data, _parents=(), _vjp=None):
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        if not arr.flags["C_CONTIGUOUS"]:  # 0-d arrays are always contiguous
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A constant tensor sharing this tensor's data, cut from the graph."""
        t = object.__new__(Tensor)
        t.data = self.data
        t._parents = ()
        t._vjp = None
        return t

    def copy(self) -> "Tensor":
        t = object.__new__(Tensor)
        t.data = self.data.copy()
        t._parents = ()
        t._vjp = None
        return t


class Parameter(Tensor):
    """A trainable leaf: value plus a persistently accumulated gradient."""

    __slots__ = ("grad", "trainable")

    def __init__(self, data, trainable: bool = True):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.trainable = trainable

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter(shape={self.shape}, trainable={self.trainable})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _wants_grad(t: Tensor) -> bool:
    # A parent receives a gradient if it is a Parameter or is itself derived.
    return isinstance(t, Parameter) or t._vjp is not None


def _node(data, parents, vjp) -> Tensor:
    arr = np.asarray(data)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    out = object.__new__(Tensor)
    out.data = arr
    if _grad_enabled() and any(_wants_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


# ---------------------------------------------------------------------------
# shape helpers
# ---------------------------------------------------------------------------

def _split_batch(shape, ndim_core: int = 3):
    """Split a shape into (batch_dims, core_dims); core is the last ndim_core."""
    if len(shape) < ndim_core:
        raise ShapeError(f"expected at least {ndim_core} dims, got shape {tuple(shape)}")
    return tuple(shape[:-ndim_core]), tuple(shape[-ndim_core:])


# ---------------------------------------------------------------------------
# conv2d
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, pad: int, stride: int):
    """(N,C,H,W) -> (N, C*k*k, HO*WO) patch matrix, plus (HO, WO)."""
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    s0, s1, s2, s3 = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, (n, c, k, k, ho, wo), (s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False)
    return win.reshape(n, c * k * k, ho * wo), ho, wo


def _col2im(dcols: np.ndarray, in_shape, k: int, pad: int, stride: int):
    """Scatter-add the patch-matrix gradient back to (N,C,H,W)."""
    n, c, h, w = in_shape
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    dxp = np.zeros((n, c, hp, wp), dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + ho * stride:stride, kj:kj + wo * stride:stride] += dcols[:, :, ki, kj]
    if pad > 0:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def conv2d(x, kernel, bias, pad: int = 0, stride: int = 1) -> Tensor:
    """2-D cross-correlation (no kernel flip), zero padding.

    x: (C_in, H, W), kernel: (C_out, C_in, k, k), bias: (C_out,).
    Output spatial size is floor((H + 2*pad - k) / stride) + 1 per axis.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if kernel.data.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"kernel must be (C_out, C_in, k, k), got {kernel.shape}")
    batch, (c_in, h, w) = _split_batch(x.shape)
    c_out, kc_in, k, _ = kernel.shape
    if kc_in != c_in:
        raise ShapeError(f"kernel expects {kc_in} input channels, input has {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias must be ({c_out},), got {bias.shape}")
    if k > h + 2 * pad or k > w + 2 * pad:
        raise ShapeError(f"kernel {k}x{k} exceeds padded input {h + 2 * pad}x{w + 2 * pad}")

    xb = x.data.reshape((1,) + (c_in, h, w)) if not batch else x.data
    n = xb.shape[0]
    cols, ho, wo = _im2col(xb, k, pad, stride)
    wmat = kernel.data.reshape(c_out, c_in * k * k)
    out = np.matmul(wmat, cols)                       # (N, C_out, HO*WO)
    out += bias.data.reshape(1, c_out, 1)
    out = out.reshape((n, c_out, ho, wo) if batch else (c_out, ho, wo))

    def vjp(g):
        gb = g.reshape(n, c_out, ho * wo)
        gx = gw = gbias = None
        if _wants_grad(x):
            dcols = np.matmul(wmat.T, gb)
            gx = _col2im(dcols, (n, c_in, h, w), k, pad, stride)
            gx = gx.reshape(x.shape)
        if _wants_grad(kernel):
            gw = np.einsum("ncl,nkl->ck", gb, cols, optimize=True).reshape(kernel.shape)
        if _wants_grad(bias):
            gbias = gb.sum(axis=(0, 2))
        return gx, gw, gbias

    return _node(out, (x, kernel, bias), vjp)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def relu(x) -> Tensor:
    """Elementwise max(0, x)."""
    x = _as_tensor(x)
    out = np.maximum(x.data, 0)

    def vjp(g):
        return (g * (x.data > 0),)

    return _node(out, (x,), vjp)


def sigmoid(x) -> Tensor:
    """Elementwise logistic function, stable for large |x|."""
    x = _as_tensor(x)
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _node(out, (x,), vjp)


def clamp01(x) -> Tensor:
    """Clamp into [0, 1]; gradient passes only where x is inside the range."""
    x = _as_tensor(x)
    out = np.clip(x.data, 0.0, 1.0)

    def vjp(g):
        return (g * ((x.data >= 0.0) & (x.data <= 1.0)),)

    return _node(out, (x,), vjp)


def add(a, b) -> Tensor:
    """Elementwise sum; shapes must match exactly (no broadcasting)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def vjp(g):
        return g, g

    return _node(a.data + b.data, (a, b), vjp)


def scale(x, c: float) -> Tensor:
    """Multiply by a python scalar."""
    x = _as_tensor(x)
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _node(x.data * c, (x,), vjp)


def downsample2x(x) -> Tensor:
    """2x2 average pooling over the last two axes; H and W must be even."""
    x = _as_tensor(x)
    _, (c, h, w) = _split_batch(x.shape)
    if h % 2 or w % 2:
        raise ShapeError(f"downsample2x needs even spatial extents, got {h}x{w}")
    d = x.data
    # Explicit pairing keeps up-then-down bit-exact for replicated blocks.
    s = (d[..., 0::2, 0::2] + d[..., 0::2, 1::2]) + (d[..., 1::2, 0::2] + d[..., 1::2, 1::2])
    out = s * np.asarray(0.25, dtype=d.dtype)

    def vjp(g):
        gq = g * np.asarray(0.25, dtype=g.dtype)
        return (np.repeat(np.repeat(gq, 2, axis=-2), 2, axis=-1),)

    return _node(out, (x,), vjp)


def upsample2x(x) -> Tensor:
    """Nearest-neighbor 2x replication over the last two axes."""
    x = _as_tensor(x)
    _split_batch(x.shape)
    out = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)

    def vjp(g):
        return ((g[..., 0::2, 0::2] + g[..., 0::2, 1::2])
                + (g[..., 1::2, 0::2] + g[..., 1::2, 1::2]),)

    return _node(out, (x,), vjp)


def concat_channels(a, b) -> Tensor:
    """Stack b's channels after a's; spatial extents must agree."""
    a, b = _as_tensor(a), _as_tensor(b)
    ba, (c1, h1, w1) = _split_batch(a.shape)
    bb, (c2, h2, w2) = _split_batch(b.shape)
    if ba != bb or (h1, w1) != (h2, w2):
        raise ShapeError(f"concat_channels mismatch: {a.shape} vs {b.shape}")
    out = np.concatenate([a.data, b.data], axis=-3)

    def vjp(g):
        return g[..., :c1, :, :], g[..., c1:, :, :]

    return _node(out, (a, b), vjp)


def mse(a, b) -> Tensor:
    """Sum of squared elementwise differences (sum convention, not mean)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    d = a.data - b.data
    out = np.sum(d * d)

    def vjp(g):
        ga = (2.0 * g) * d
        return ga, -ga

    return _node(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(loss: Tensor):
    """Accumulate d(loss)/d(param) into every reachable Parameter's grad.

    loss must be scalar. Repeated calls without zeroing grads accumulate.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p._vjp is not None:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            if isinstance(parent, Parameter):
                parent.grad += pg
            elif parent._vjp is not None:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
