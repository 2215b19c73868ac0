"""Dense float tensors with tape-based reverse-mode autodiff.

Covers exactly the operator set the SR model needs: elementwise arithmetic,
linear/conv2d, layer norm, softmax, GELU, pixel shuffle, window partition /
merge, cyclic shift and reductions.  Gradients are verified against central
finite differences (see finite_difference_check).

Usage: run forward code under an active Tape, then call backward(tape, loss).
Outside a tape, ops evaluate without recording (inference mode).
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

_active_tape: Optional["Tape"] = None


class Tape:
    """Ordered record of differentiable operations (define-by-run)."""

    def __init__(self):
        self.nodes: list[tuple["TensorF", tuple["TensorF", ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a tape is already active")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def record(self, out, inputs, backward_fn):
        self.nodes.append((out, inputs, backward_fn))

    def reset(self):
        self.nodes.clear()
        self.consumed = False


class TensorF:
    """N-dimensional float tensor, optionally participating in autodiff."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"TensorF(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self.dtype))


def _wrap(x, dtype) -> TensorF:
    if isinstance(x, TensorF):
        return x
    return TensorF(np.asarray(x, dtype=dtype))


def _record(out: TensorF, inputs: Sequence[TensorF], backward_fn) -> TensorF:
    if _active_tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _active_tape.record(out, tuple(inputs), backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reductions

def add(a: TensorF, b: TensorF) -> TensorF:
    out = TensorF(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bwd)


def sub(a: TensorF, b: TensorF) -> TensorF:
    out = TensorF(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), bwd)


def mul(a: TensorF, b: TensorF) -> TensorF:
    out = TensorF(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bwd)


def abs_(a: TensorF) -> TensorF:
    out = TensorF(np.abs(a.data))

    def bwd(g):
        return (g * np.sign(a.data),)  # subgradient 0 at ties

    return _record(out, (a,), bwd)


def square(a: TensorF) -> TensorF:
    out = TensorF(a.data * a.data)

    def bwd(g):
        return (g * 2.0 * a.data,)

    return _record(out, (a,), bwd)


def sum_(a: TensorF) -> TensorF:
    out = TensorF(a.data.sum())

    def bwd(g):
        return (np.broadcast_to(g, a.shape),)

    return _record(out, (a,), bwd)


def mean(a: TensorF) -> TensorF:
    n = a.data.size
    out = TensorF(a.data.mean())

    def bwd(g):
        return (np.broadcast_to(g / n, a.shape),)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# shape ops

def reshape(a: TensorF, shape) -> TensorF:
    out = TensorF(a.data.reshape(shape))

    def bwd(g):
        return (g.reshape(a.shape),)

    return _record(out, (a,), bwd)


def transpose(a: TensorF, axes) -> TensorF:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = TensorF(np.ascontiguousarray(a.data.transpose(axes)))

    def bwd(g):
        return (g.transpose(inv),)

    return _record(out, (a,), bwd)


def _reflect_indices(n: int, before: int, after: int) -> np.ndarray:
    idx = np.arange(-before, n + after)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    j = np.abs(idx) % period
    return np.where(j >= n, period - j, j)


def index_axis0(a: TensorF, i: int) -> TensorF:
    """Select slice i along axis 0 (used to split stacked q/k/v)."""
    out = TensorF(np.ascontiguousarray(a.data[i]))

    def bwd(g):
        dx = np.zeros(a.shape, dtype=g.dtype)
        dx[i] = g
        return (dx,)

    return _record(out, (a,), bwd)


def pad_reflect_hw(a: TensorF, pads) -> TensorF:
    """Reflect-pad a [B, H, W, d] tensor: pads = (top, bottom, left, right)."""
    top, bottom, left, right = pads
    H, W = a.shape[1], a.shape[2]
    yi = _reflect_indices(H, top, bottom)
    xi = _reflect_indices(W, left, right)
    out = TensorF(np.ascontiguousarray(a.data[:, yi][:, :, xi]))

    def bwd(g):
        dx = np.zeros(a.shape, dtype=g.dtype)
        # scatter-add along W then H
        tmp = np.zeros((g.shape[0], g.shape[1], W) + a.shape[3:], dtype=g.dtype)
        np.add.at(tmp, (slice(None), slice(None), xi), g)
        np.add.at(dx, (slice(None), yi), tmp)
        return (dx,)

    return _record(out, (a,), bwd)


def crop_hw(a: TensorF, top: int, left: int, h: int, w: int, axes=(1, 2)) -> TensorF:
    ay, ax = axes
    sl = [slice(None)] * a.data.ndim
    sl[ay] = slice(top, top + h)
    sl[ax] = slice(left, left + w)
    sl = tuple(sl)
    out = TensorF(np.ascontiguousarray(a.data[sl]))

    def bwd(g):
        dx = np.zeros(a.shape, dtype=g.dtype)
        dx[sl] = g
        return (dx,)

    return _record(out, (a,), bwd)


def cyclic_shift(a: TensorF, dy: int, dx: int) -> TensorF:
    """Toroidal roll of the spatial dims of a [B, H, W, d] tensor."""
    out = TensorF(np.roll(a.data, (dy, dx), axis=(1, 2)))

    def bwd(g):
        return (np.roll(g, (-dy, -dx), axis=(1, 2)),)

    return _record(out, (a,), bwd)


def window_partition(a: TensorF, win: int) -> TensorF:
    """[B, H, W, d] -> [B*(H/win)*(W/win), win*win, d], row-major tiles."""
    B, H, W, d = a.shape
    if H % win or W % win:
        raise ValueError(f"spatial dims {H}x{W} not divisible by window {win}")
    x = a.data.reshape(B, H // win, win, W // win, win, d)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    out = TensorF(np.ascontiguousarray(x.reshape(-1, win * win, d)))

    def bwd(g):
        gg = g.reshape(B, H // win, W // win, win, win, d)
        gg = gg.transpose(0, 1, 3, 2, 4, 5)
        return (np.ascontiguousarray(gg.reshape(B, H, W, d)),)

    return _record(out, (a,), bwd)


def window_merge(a: TensorF, win: int, H: int, W: int) -> TensorF:
    """Exact inverse of window_partition."""
    nw, tokens, d = a.shape
    if tokens != win * win:
        raise ValueError("token count does not match window size")
    B = nw // ((H // win) * (W // win))
    x = a.data.reshape(B, H // win, W // win, win, win, d)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    out = TensorF(np.ascontiguousarray(x.reshape(B, H, W, d)))

    def bwd(g):
        gg = g.reshape(B, H // win, win, W // win, win, d)
        gg = gg.transpose(0, 1, 3, 2, 4, 5)
        return (np.ascontiguousarray(gg.reshape(nw, tokens, d)),)

    return _record(out, (a,), bwd)


def pixel_shuffle(a: TensorF, r: int) -> TensorF:
    """Depth-to-space: [B, C*r^2, H, W] -> [B, C, r*H, r*W]."""
    B, C2, H, W = a.shape
    if C2 % (r * r):
        raise ValueError(f"channels {C2} not divisible by r^2={r * r}")
    C = C2 // (r * r)
    x = a.data.reshape(B, C, r, r, H, W)
    x = x.transpose(0, 1, 4, 2, 5, 3)
    out = TensorF(np.ascontiguousarray(x.reshape(B, C, H * r, W * r)))

    def bwd(g):
        gg = g.reshape(B, C, H, r, W, r)
        gg = gg.transpose(0, 1, 3, 5, 2, 4)
        return (np.ascontiguousarray(gg.reshape(B, C2, H, W)),)

    return _record(out, (a,), bwd)


def pixel_unshuffle(a: TensorF, r: int) -> TensorF:
    """Space-to-depth, the exact inverse of pixel_shuffle."""
    B, C, Hr, Wr = a.shape
    if Hr % r or Wr % r:
        raise ValueError("spatial dims not divisible by r")
    H, W = Hr // r, Wr // r
    x = a.data.reshape(B, C, H, r, W, r)
    x = x.transpose(0, 1, 3, 5, 2, 4)
    out = TensorF(np.ascontiguousarray(x.reshape(B, C * r * r, H, W)))

    def bwd(g):
        gg = g.reshape(B, C, r, r, H, W)
        gg = gg.transpose(0, 1, 4, 2, 5, 3)
        return (np.ascontiguousarray(gg.reshape(B, C, Hr, Wr)),)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# neural-net ops

def linear(x: TensorF, w: TensorF, b: TensorF) -> TensorF:
    """x [... , din] @ w[dout, din]^T + b[dout]."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight din {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ValueError("linear: bias shape mismatch")
    out = TensorF(x.data @ w.data.T + b.data)

    def bwd(g):
        dx = g @ w.data
        gw = g.reshape(-1, w.shape[0])
        dw = gw.T @ x.data.reshape(-1, w.shape[1])
        db = gw.sum(axis=0)
        return dx, dw, db

    return _record(out, (x, w, b), bwd)


def matmul(a: TensorF, b: TensorF) -> TensorF:
    """Batched matmul over the last two axes (leading axes must match)."""
    out = TensorF(a.data @ b.data)

    def bwd(g):
        da = g @ np.swapaxes(b.data, -1, -2)
        db = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return _record(out, (a, b), bwd)


def _patches(x: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # [B, Cin, H, W, kh, kw]
    return np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))


def conv2d(x: TensorF, w: TensorF, b: TensorF, pad: Optional[int] = None) -> TensorF:
    """Same-size cross-correlation: x[B,Cin,H,W] * w[Cout,Cin,kh,kw] + b[Cout]."""
    B, Cin, H, W = x.shape
    Cout, Cin_w, kh, kw = w.shape
    if Cin != Cin_w:
        raise ValueError(f"conv2d: input channels {Cin} != weight channels {Cin_w}")
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d: unsupported kernel {kh}x{kw} (square odd only)")
    if b.shape != (Cout,):
        raise ValueError("conv2d: bias shape mismatch")
    if pad is None:
        pad = (kh - 1) // 2
    if pad != (kh - 1) // 2:
        raise ValueError("conv2d: only same-size padding (k-1)/2 supported")
    pat = _patches(x.data, kh, kw, pad)
    out = TensorF(np.einsum("bchwij,ocij->bohw", pat, w.data, optimize=True) + b.data[None, :, None, None])

    def bwd(g):
        dw = np.einsum("bchwij,bohw->ocij", pat, g, optimize=True)
        db = g.sum(axis=(0, 2, 3))
        wflip = w.data[:, :, ::-1, ::-1]
        gpat = _patches(g, kh, kw, pad)
        dx = np.einsum("bohwij,ocij->bchw", gpat, wflip, optimize=True)
        return dx, dw, db

    return _record(out, (x, w, b), bwd)


def layer_norm(x: TensorF, gamma: TensorF, beta: TensorF, eps: float = 1e-5) -> TensorF:
    """Standardize each trailing vector, then scale and shift."""
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm: empty trailing dimension")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = TensorF(xhat * gamma.data + beta.data)

    def bwd(g):
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        gg = g * gamma.data
        dx = inv * (
            gg
            - gg.mean(axis=-1, keepdims=True)
            - xhat * (gg * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), bwd)


def softmax_lastdim(x: TensorF) -> TensorF:
    """Numerically stable softmax over the trailing dimension."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = TensorF(y)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (x,), bwd)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: TensorF) -> TensorF:
    """Exact Gaussian-CDF GELU: x * Phi(x) (erf form, not tanh approximation)."""
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = TensorF(x.data * phi)

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (phi + x.data * pdf),)

    return _record(out, (x,), bwd)


# ---------------------------------------------------------------------------
# backward and verification

def backward(tape: Tape, loss: TensorF) -> None:
    """Accumulate d(loss)/d(t) into .grad of every requires_grad tensor."""
    if loss.data.size != 1:
        raise ValueError("backward: loss must be a scalar")
    if tape.consumed:
        raise RuntimeError("backward: tape already consumed (reset() to reuse)")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, TensorF] = {id(loss): loss}
    for out, inputs, bwd in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        holders.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, bwd(g)):
            if not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=t.dtype)
                holders[key] = t
    # whatever remains belongs to leaves (tensors not produced on this tape)
    for key, g in grads.items():
        holders[key].accumulate_grad(g)


def finite_difference_check(
    f: Callable[[TensorF], TensorF], x: TensorF, eps: float = 1e-4
) -> float:
    """Max relative error between analytic and central-difference gradients.

    f must build a scalar loss from x under the tape this function manages;
    x should be float64 for meaningful tolerances.
    """
    if not (0.0 < eps <= 1e-2):
        raise ValueError("eps must be in (0, 1e-2]")
    x64 = TensorF(x.data.astype(np.float64), requires_grad=True)
    with Tape() as tape:
        loss = f(x64)
    if loss.data.size != 1:
        raise ValueError("f must produce a scalar")
    backward(tape, loss)
    analytic = x64.grad.reshape(-1).copy()
    flat = x64.data.reshape(-1)
    numeric = np.zeros_like(analytic)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(TensorF(x64.data)).data)
        flat[i] = orig - eps
        fm = float(f(TensorF(x64.data)).data)
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
