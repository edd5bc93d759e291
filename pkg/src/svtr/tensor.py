"""Dense float tensors with reverse-mode automatic differentiation.

Values are stored in f32 by default (f64 is supported for shadow gradient
checks); reductions such as matmul inner products and normalization
statistics accumulate in f64 before being cast back to the storage dtype.
The computation graph is recorded implicitly: every op output remembers its
parents and a backward rule, and ``backward`` replays the rules in reverse
execution order (creation order), which makes gradient accumulation
deterministic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .exceptions import ContractError, GeometryError, ShapeError

_ids = itertools.count()

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class Tensor:
    """A dense n-dimensional array (rank 0..4) with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 parents: tuple = (), backward_fn=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        elif dtype is None and not isinstance(data, np.ndarray):
            # Python scalars/lists default to the f32 storage dtype;
            # explicit ndarrays keep their float dtype (f64 shadow checks).
            arr = arr.astype(np.float32)
        if arr.ndim > 4:
            raise ShapeError(f"rank {arr.ndim} exceeds the supported maximum of 4")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward_fn = backward_fn
        self._id = next(_ids)

    # -- basic properties ---------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    # -- graph --------------------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every requires_grad ancestor of this scalar."""
        if self.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        nodes = _reachable(self)
        self.grad = np.ones_like(self.data)
        # Reverse execution order: creation ids are monotone in execution.
        for node in sorted(nodes, key=lambda t: t._id, reverse=True):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __sub__(self, other):
        return add(self, -_as_tensor(other, self.dtype))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _reachable(root: Tensor) -> list:
    seen = set()
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        out.append(node)
        stack.extend(node._parents)
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not (t.requires_grad or t._parents):
        return
    g = g.astype(t.dtype, copy=False)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _needs_grad(*tensors) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _make(data, parents, backward_fn) -> Tensor:
    if _needs_grad(*parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn)
    return Tensor(data)


def _wide(a: np.ndarray) -> np.ndarray:
    """f64 view for accumulation; no-op when already f64."""
    return a if a.dtype == np.float64 else a.astype(np.float64)


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    out = _make(out_data, (a, b), None)
    out._backward_fn = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    out = _make(out_data, (a, b), None)
    out._backward_fn = bwd
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact erf formulation: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    xd = x.data
    e = erf(xd * _INV_SQRT2).astype(xd.dtype)
    out_data = 0.5 * xd * (1.0 + e)

    def bwd(g):
        d = 0.5 * (1.0 + e) + xd * np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        _accumulate(x, g * d.astype(xd.dtype))

    out = _make(out_data, (x,), None)
    out._backward_fn = bwd
    return out


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; exact identity when rate == 0 or in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or not training:
        return x
    keep = (rng.random(x.shape) >= rate)
    scale = 1.0 / (1.0 - rate)
    factor = (keep * scale).astype(x.dtype)
    out_data = x.data * factor

    def bwd(g):
        _accumulate(x, g * factor)

    out = _make(out_data, (x,), None)
    out._backward_fn = bwd
    return out


# -- shape ops --------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    orig = x.shape
    out_data = x.data.reshape(shape)

    def bwd(g):
        _accumulate(x, g.reshape(orig))

    out = _make(out_data, (x,), None)
    out._backward_fn = bwd
    return out


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.data.ndim)):
        raise ShapeError(f"transpose axes {axes} invalid for rank {x.data.ndim}")
    inv = tuple(np.argsort(axes))
    out_data = x.data.transpose(axes)

    def bwd(g):
        _accumulate(x, g.transpose(inv))

    out = _make(out_data, (x,), None)
    out._backward_fn = bwd
    return out


def split(x: Tensor, parts: int, axis: int = -1) -> list:
    """Split into ``parts`` equal chunks; backward scatters each chunk back."""
    dim = x.shape[axis]
    if dim % parts != 0:
        raise ShapeError(f"cannot split axis of size {dim} into {parts} equal parts")
    step = dim // parts
    ax = axis % x.data.ndim
    outs = []
    for i in range(parts):
        sl = [slice(None)] * x.data.ndim
        sl[ax] = slice(i * step, (i + 1) * step)
        sl = tuple(sl)

        def bwd(g, sl=sl):
            full = np.zeros_like(x.data)
            full[sl] = g
            _accumulate(x, full)

        piece = _make(x.data[sl].copy(), (x,), None)
        piece._backward_fn = bwd
        outs.append(piece)
    return outs


# -- reductions -------------------------------------------------------------

def tsum(x: Tensor) -> Tensor:
    out_data = np.asarray(_wide(x.data).sum(), dtype=x.dtype)

    def bwd(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    out = _make(out_data, (x,), None)
    out._backward_fn = bwd
    return out


def tmean(x: Tensor) -> Tensor:
    n = x.size
    out_data = np.asarray(_wide(x.data).sum() / n, dtype=x.dtype)

    def bwd(g):
        _accumulate(x, np.broadcast_to(g / n, x.shape))

    out = _make(out_data, (x,), None)
    out._backward_fn = bwd
    return out


def mean_pool_height(x: Tensor) -> Tensor:
    """[b, c, h, w] -> [b, c, 1, w] by averaging over the height axis."""
    if x.data.ndim != 4:
        raise ShapeError(f"mean_pool_height expects rank 4, got shape {x.shape}")
    h = x.shape[2]
    out_data = (_wide(x.data).mean(axis=2, keepdims=True)).astype(x.dtype)

    def bwd(g):
        _accumulate(x, np.broadcast_to(g / h, x.shape))

    out = _make(out_data, (x,), None)
    out._backward_fn = bwd
    return out


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul expects rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = np.matmul(_wide(a.data), _wide(b.data)).astype(a.dtype)

    def bwd(g):
        g64 = _wide(g)
        ga = np.matmul(g64, _wide(b.data).swapaxes(-1, -2))
        gb = np.matmul(_wide(a.data).swapaxes(-1, -2), g64)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    out = _make(out_data, (a, b), None)
    out._backward_fn = bwd
    return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[..., d_in] @ w[d_in, d_out] + b."""
    y = matmul(x, w)
    if b is not None:
        y = add(y, b)
    return y


# -- convolution ------------------------------------------------------------

def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int):
    b, ci = xp.shape[:2]
    cols = np.empty((b, ci, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw]
    return cols.reshape(b, ci * kh * kw, oh * ow)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None,
           stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Cross-correlation with per-axis stride and zero padding."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and weight, got {x.shape}, {weight.shape}")
    b, ci, h, w = x.shape
    co, ci_w, kh, kw = weight.shape
    if ci != ci_w:
        raise ShapeError(f"conv2d channel mismatch: input {ci} vs weight {ci_w}")
    sh, sw = stride
    ph, pw = padding
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (w + 2 * pw - kw) // sw + 1
    if oh < 1 or ow < 1:
        raise GeometryError(
            f"conv2d output size {oh}x{ow} non-positive for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {sh}x{sw}, pad {ph}x{pw}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _im2col(xp, kh, kw, sh, sw, oh, ow)                       # [b, ci*kh*kw, oh*ow]
    wf = weight.data.reshape(co, ci * kh * kw)
    out_data = np.matmul(_wide(wf), _wide(cols)).astype(x.dtype)     # [b, co, oh*ow]
    out_data = out_data.reshape(b, co, oh, ow)
    if bias is not None:
        out_data = out_data + bias.data.reshape(1, co, 1, 1)

    def bwd(g):
        gf = _wide(g.reshape(b, co, oh * ow))
        gw = np.einsum("bij,bkj->ik", gf, _wide(cols)).reshape(weight.shape)
        _accumulate(weight, gw)
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        gcols = np.matmul(_wide(wf).T, gf)                           # [b, ci*kh*kw, oh*ow]
        gcols = gcols.reshape(b, ci, kh, kw, oh, ow)
        gxp = np.zeros_like(_wide(xp))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gcols[:, :, i, j]
        if ph or pw:
            gxp = gxp[:, :, ph:ph + h, pw:pw + w]
        _accumulate(x, gxp)

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _make(out_data, parents, None)
    out._backward_fn = bwd
    return out


# -- normalization ----------------------------------------------------------

def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layernorm affine shape {gamma.shape}/{beta.shape} does not match last dim {d}")
    x64 = _wide(x.data)
    mu = x64.mean(axis=-1, keepdims=True)
    var = x64.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mu) * inv
    out_data = (xhat * _wide(gamma.data) + _wide(beta.data)).astype(x.dtype)

    def bwd(g):
        g64 = _wide(g)
        dxhat = g64 * _wide(gamma.data)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, inv * (dxhat - m1 - xhat * m2))
        axes = tuple(range(g64.ndim - 1))
        _accumulate(gamma, (g64 * xhat).sum(axis=axes))
        _accumulate(beta, g64.sum(axis=axes))

    out = _make(out_data, (x, gamma, beta), None)
    out._backward_fn = bwd
    return out


@dataclass
class BatchNormState:
    """Running statistics and hyperparameters for one BatchNorm layer."""
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        return cls(np.zeros(channels, dtype=np.float32),
                   np.ones(channels, dtype=np.float32), momentum, eps)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalization over (batch, h, w); updates running stats in training."""
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm2d expects rank 4, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm2d affine shape {gamma.shape}/{beta.shape} does not match channels {c}")
    x64 = _wide(x.data)
    gam = _wide(gamma.data).reshape(1, c, 1, 1)
    bet = _wide(beta.data).reshape(1, c, 1, 1)
    if training:
        mu = x64.mean(axis=(0, 2, 3))
        var = x64.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean = (m * state.running_mean + (1 - m) * mu).astype(np.float32)
        state.running_var = (m * state.running_var + (1 - m) * var).astype(np.float32)
    else:
        mu = _wide(state.running_mean)
        var = _wide(state.running_var)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x64 - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out_data = (xhat * gam + bet).astype(x.dtype)
    n = x.shape[0] * x.shape[2] * x.shape[3]

    def bwd(g):
        g64 = _wide(g)
        dxhat = g64 * gam
        axes = (0, 2, 3)
        _accumulate(gamma, (g64 * xhat).sum(axis=axes))
        _accumulate(beta, g64.sum(axis=axes))
        if training:
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            gx = inv.reshape(1, c, 1, 1) * (dxhat - s1 / n - xhat * s2 / n)
        else:
            gx = dxhat * inv.reshape(1, c, 1, 1)
        _accumulate(x, gx)

    out = _make(out_data, (x, gamma, beta), None)
    out._backward_fn = bwd
    return out


# -- softmax family ---------------------------------------------------------

def _check_axis(x: Tensor, axis: int) -> int:
    nd = x.data.ndim
    if not -nd <= axis < nd:
        raise ShapeError(f"axis {axis} out of range for rank {nd}")
    return axis % nd


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _check_axis(x, axis)
    x64 = _wide(x.data)
    shifted = x64 - x64.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y64 = e / e.sum(axis=ax, keepdims=True)
    out_data = y64.astype(x.dtype)

    def bwd(g):
        g64 = _wide(g)
        _accumulate(x, y64 * (g64 - (g64 * y64).sum(axis=ax, keepdims=True)))

    out = _make(out_data, (x,), None)
    out._backward_fn = bwd
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _check_axis(x, axis)
    x64 = _wide(x.data)
    shifted = x64 - x64.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    out64 = shifted - lse
    out_data = out64.astype(x.dtype)

    def bwd(g):
        g64 = _wide(g)
        _accumulate(x, g64 - np.exp(out64) * g64.sum(axis=ax, keepdims=True))

    out = _make(out_data, (x,), None)
    out._backward_fn = bwd
    return out


def apply_attention_mask(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Replace disallowed score entries with -inf ahead of softmax.

    ``mask`` is a boolean [n, n] array broadcast over leading axes; allowed
    entries pass through bitwise unchanged, so an all-true mask is an exact
    identity.
    """
    if mask.shape != scores.shape[-2:]:
        raise ShapeError(f"mask shape {mask.shape} does not match scores {scores.shape}")
    out_data = np.where(mask, scores.data, np.array(-np.inf, dtype=scores.dtype))

    def bwd(g):
        _accumulate(scores, np.where(mask, g, 0.0))

    out = _make(out_data, (scores,), None)
    out._backward_fn = bwd
    return out
