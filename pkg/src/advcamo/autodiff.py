"""Reverse-mode automatic differentiation over dense numpy arrays.

A deliberately small eager engine: every operation returns a `Tensor` that
remembers its parent tensors and a vector-Jacobian closure, so the compute
graph is built implicitly as the forward pass runs. `backward` walks that
graph once in reverse topological order and accumulates gradients for any
requested tensors. There is no fusion and no graph rewriting; correctness
and debuggability win over speed at this scale.

Conventions:
  * storage is float32 by default, float64 is supported end to end (the
    finite-difference checker promotes to float64 internally);
  * reductions accumulate in float64 and cast back to the storage dtype;
  * everything is deterministic: same inputs, bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GraphError",
    "ShapeError",
    "add", "sub", "mul", "neg", "scale",
    "matmul", "affine", "conv2d", "max_pool2d",
    "relu", "clip", "softmax", "cross_entropy",
    "reduce_sum", "reduce_mean", "reshape", "concat",
    "take_rows", "bilinear_gather", "index_add", "argmax",
    "backward", "grad_check", "GradCheckResult",
]

_FLOAT_DTYPES = (np.float32, np.float64)

# Ops whose output is piecewise constant in their inputs; grad_check refuses
# to difference across them.
NONDIFFERENTIABLE_OPS = {"argmax"}


class GraphError(ValueError):
    """Raised for structurally invalid graphs (e.g. non-scalar loss)."""


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent; names the offending op."""


class Tensor:
    """A dense array plus its position in the implicit compute graph.

    `parents` are always recorded (they make path queries possible), but the
    backward closure is only kept when some input requires gradients.
    """

    __slots__ = ("values", "op", "parents", "requires_grad", "_vjp")

    def __init__(self, values, requires_grad: bool = False, op: str = "leaf",
                 parents: tuple = (), vjp=None):
        v = np.asarray(values)
        if v.dtype not in _FLOAT_DTYPES:
            v = v.astype(np.float32)
        self.values = v
        self.op = op
        self.parents = parents
        self.requires_grad = bool(requires_grad)
        self._vjp = vjp

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.values.shape}, dtype={self.values.dtype})"

    # Arithmetic sugar; constants are wrapped with the tensor's own dtype.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.values.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _make(values, parents: tuple[Tensor, ...], op: str, vjp) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad=requires, op=op, parents=parents,
                  vjp=vjp if requires else None)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.values + b.values

    def vjp(g):
        return _unbroadcast(g, a.values.shape), _unbroadcast(g, b.values.shape)

    return _make(out, (a, b), "add", vjp)


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.values - b.values

    def vjp(g):
        return _unbroadcast(g, a.values.shape), -_unbroadcast(g, b.values.shape)

    return _make(out, (a, b), "sub", vjp)


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.values * b.values

    def vjp(g):
        return (_unbroadcast(g * b.values, a.values.shape),
                _unbroadcast(g * a.values, b.values.shape))

    return _make(out, (a, b), "mul", vjp)


def neg(a) -> Tensor:
    a = _wrap(a)

    def vjp(g):
        return (-g,)

    return _make(-a.values, (a,), "neg", vjp)


def scale(a, k: float) -> Tensor:
    a = _wrap(a)
    k = float(k)

    def vjp(g):
        return (g * k,)

    return _make(a.values * a.values.dtype.type(k), (a,), "scale", vjp)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = a.values @ b.values

    def vjp(g):
        return g @ b.values.T, a.values.T @ g

    return _make(out, (a, b), "matmul", vjp)


def affine(x, w, b) -> Tensor:
    """x @ w + b with b broadcast over rows."""
    return add(matmul(x, w), b)


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.values > 0

    def vjp(g):
        return (g * mask,)

    return _make(np.where(mask, a.values, a.values.dtype.type(0)), (a,), "relu", vjp)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through inside the interval, zero outside."""
    a = _wrap(a)
    v = a.values
    mask = (v >= lo) & (v <= hi)

    def vjp(g):
        return (g * mask,)

    return _make(np.clip(v, lo, hi), (a,), "clip", vjp)


# ---------------------------------------------------------------------------
# convolution and pooling (NHWC layout)


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D convolution, x: (N,H,W,Cin), w: (kh,kw,Cin,Cout), optional bias (Cout,)."""
    x, w = _wrap(x), _wrap(w)
    bt = _wrap(b, w) if b is not None else None
    xv, wv = x.values, w.values
    if xv.ndim != 4 or wv.ndim != 4:
        raise ShapeError(f"conv2d: expected 4D input/kernel, got {xv.shape} / {wv.shape}")
    n, h, wid, cin = xv.shape
    kh, kw, cin2, cout = wv.shape
    if cin != cin2:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {cin2}")
    s = int(stride)
    xp = np.pad(xv, ((0, 0), (padding, padding), (padding, padding), (0, 0))) if padding else xv
    hp, wp = xp.shape[1:3]
    ho = (hp - kh) // s + 1
    wo = (wp - kw) // s + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} too large for padded input {hp}x{wp}")

    dt = np.result_type(xv, wv)
    cols = np.empty((n, ho, wo, kh, kw, cin), dtype=dt)
    for u in range(kh):
        for v in range(kw):
            cols[:, :, :, u, v, :] = xp[:, u:u + ho * s:s, v:v + wo * s:s, :]
    kdim = kh * kw * cin
    out = cols.reshape(-1, kdim) @ wv.reshape(kdim, cout).astype(dt)
    out = out.reshape(n, ho, wo, cout)
    if bt is not None:
        out = out + bt.values

    def vjp(g):
        gflat = g.reshape(-1, cout)
        gw = (cols.reshape(-1, kdim).T @ gflat).reshape(wv.shape)
        gcols = (gflat @ wv.reshape(kdim, cout).T.astype(dt)).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                gxp[:, u:u + ho * s:s, v:v + wo * s:s, :] += gcols[:, :, :, u, v, :]
        gx = gxp[:, padding:padding + h, padding:padding + wid, :] if padding else gxp
        grads = [gx, gw.astype(wv.dtype)]
        if bt is not None:
            grads.append(g.sum(axis=(0, 1, 2), dtype=np.float64).astype(bt.values.dtype))
        return tuple(grads)

    parents = (x, w) if bt is None else (x, w, bt)
    return _make(out, parents, "conv2d", vjp)


def max_pool2d(x, size: int) -> Tensor:
    """Non-overlapping max pooling (kernel == stride == size); H, W must divide."""
    x = _wrap(x)
    v = x.values
    if v.ndim != 4:
        raise ShapeError(f"max_pool2d: expected 4D input, got {v.shape}")
    n, h, w, c = v.shape
    s = int(size)
    if h % s or w % s:
        raise ShapeError(f"max_pool2d: size {s} does not divide input {h}x{w}")
    ho, wo = h // s, w // s
    win = v.reshape(n, ho, s, wo, s, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, s * s)
    idx = win.argmax(axis=-1)  # first max wins ties; deterministic
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(n, ho, wo, c, s, s).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
        return (gx,)

    return _make(out, (x,), "max_pool2d", vjp)


# ---------------------------------------------------------------------------
# softmax / cross-entropy / reductions


def softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    v = x.values
    m = v.max(axis=axis, keepdims=True)
    e = np.exp(v - m)
    out = e / e.sum(axis=axis, keepdims=True, dtype=np.float64).astype(v.dtype)

    def vjp(g):
        inner = (g * out).sum(axis=axis, keepdims=True, dtype=np.float64).astype(v.dtype)
        return (out * (g - inner),)

    return _make(out, (x,), "softmax", vjp)


def cross_entropy(logits, labels) -> Tensor:
    """Per-row softmax cross-entropy; logits (N,K), integer labels (N,)."""
    x = _wrap(logits)
    v = x.values
    if v.ndim != 2:
        raise ShapeError(f"cross_entropy: expected 2D logits, got {v.shape}")
    lab = np.asarray(labels)
    if lab.shape != (v.shape[0],):
        raise ShapeError(f"cross_entropy: labels {lab.shape} do not match logits {v.shape}")
    lab = lab.astype(np.int64)
    m = v.max(axis=1, keepdims=True)
    z = v - m
    expz = np.exp(z)
    denom = expz.sum(axis=1, dtype=np.float64)
    rows = np.arange(v.shape[0])
    loss = (np.log(denom) - z[rows, lab].astype(np.float64)).astype(v.dtype)
    p = (expz / denom[:, None]).astype(v.dtype)

    def vjp(g):
        # (softmax - onehot) scaled by the incoming per-row gradient
        gx = p * g[:, None]
        gx[rows, lab] -= g
        return (gx,)

    return _make(loss, (x,), "cross_entropy", vjp)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    v = x.values
    out = v.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(v.dtype)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, v.shape).astype(v.dtype, copy=True),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        gshaped = g if keepdims else np.expand_dims(g, ax)
        return (np.broadcast_to(gshaped, v.shape).astype(v.dtype, copy=True),)

    return _make(out, (x,), "reduce_sum", vjp)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    v = x.values
    if axis is None:
        count = v.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([v.shape[a] for a in ax]))
    out = v.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(v.dtype)

    def vjp(g):
        if axis is None:
            return ((np.broadcast_to(g, v.shape) / count).astype(v.dtype, copy=False).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        gshaped = g if keepdims else np.expand_dims(g, ax)
        return ((np.broadcast_to(gshaped, v.shape) / count).astype(v.dtype, copy=False).copy(),)

    return _make(out, (x,), "reduce_mean", vjp)


# ---------------------------------------------------------------------------
# structural ops


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    orig = x.values.shape
    out = x.values.reshape(shape)

    def vjp(g):
        return (g.reshape(orig),)

    return _make(out, (x,), "reshape", vjp)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(p) for p in parts]
    out = np.concatenate([t.values for t in ts], axis=axis)
    sizes = [t.values.shape[axis] for t in ts]
    splits = np.cumsum(sizes[:-1])

    def vjp(g):
        return tuple(np.array_split(g, splits, axis=axis))

    return _make(out, tuple(ts), "concat", vjp)


def take_rows(x, idx) -> Tensor:
    """Select rows along axis 0; duplicate indices accumulate on backward."""
    x = _wrap(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = x.values[idx]

    def vjp(g):
        gx = np.zeros_like(x.values)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(out, (x,), "take_rows", vjp)


def bilinear_gather(x, idx4, w4) -> Tensor:
    """Weighted 4-tap gather: out[p] = sum_k w4[p,k] * x[idx4[p,k]].

    x is (M, C); idx4 and w4 are constant (P, 4) arrays. This one op carries
    every bilinear interpolation in the pipeline (texture lookups and ROI
    crop-resize); its backward is a deterministic scatter-add.
    """
    x = _wrap(x)
    v = x.values
    if v.ndim != 2:
        raise ShapeError(f"bilinear_gather: expected 2D source, got {v.shape}")
    idx4 = np.asarray(idx4, dtype=np.int64)
    w4 = np.asarray(w4, dtype=v.dtype)
    if idx4.shape != w4.shape or idx4.ndim != 2 or idx4.shape[1] != 4:
        raise ShapeError(f"bilinear_gather: bad tap shapes {idx4.shape} / {w4.shape}")
    out = np.zeros((idx4.shape[0], v.shape[1]), dtype=v.dtype)
    for k in range(4):
        out += v[idx4[:, k]] * w4[:, k:k + 1]

    def vjp(g):
        gx = np.zeros_like(v)
        for k in range(4):
            np.add.at(gx, idx4[:, k], g * w4[:, k:k + 1])
        return (gx,)

    return _make(out, (x,), "bilinear_gather", vjp)


def index_add(base, idx, values) -> Tensor:
    """out = base with out[idx] += values; idx must be unique row indices."""
    base, values = _wrap(base), _wrap(values)
    idx = np.asarray(idx, dtype=np.int64)
    if np.unique(idx).size != idx.size:
        raise ShapeError("index_add: duplicate indices")
    out = base.values.copy()
    out[idx] += values.values.astype(out.dtype, copy=False)

    def vjp(g):
        return g, g[idx].astype(values.values.dtype, copy=False)

    return _make(out, (base, values), "index_add", vjp)


def argmax(x, axis: int = -1) -> Tensor:
    """Piecewise-constant op; recorded in the graph but carries no gradient."""
    x = _wrap(x)
    out = x.values.argmax(axis=axis).astype(x.values.dtype)
    return Tensor(out, requires_grad=False, op="argmax", parents=(x,), vjp=None)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor) -> list[Tensor]:
    """Parents-first order over the ancestry of `root` (iterative DFS)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar `loss` for each tensor in `wrt`.

    Tensors with no path to the loss get exact zeros of their own shape.
    """
    if loss.values.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.values.shape}")
    topo = _toposort(loss)
    wrt_ids = {id(w) for w in wrt}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None:
            continue
        if node._vjp is not None:
            for parent, pg in zip(node.parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        if id(node) not in wrt_ids:
            del grads[id(node)]  # free interior gradients as soon as consumed
    out = []
    for w in wrt:
        g = grads.get(id(w))
        out.append(np.zeros_like(w.values) if g is None else g)
    return out


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckResult:
    max_rel_error: float
    skipped: bool = False
    reason: str = ""


def _nondiff_on_path(loss: Tensor, leaf: Tensor) -> str | None:
    """Name of a piecewise-constant op between `leaf` and `loss`, if any."""
    depends: set[int] = {id(leaf)}
    for node in _toposort(loss):
        if id(node) in depends:
            continue
        if any(id(p) in depends for p in node.parents):
            if node.op in NONDIFFERENTIABLE_OPS:
                return node.op
            depends.add(id(node))
    return None


def grad_check(fn: Callable[[Tensor], Tensor], x0: np.ndarray,
               sample_count: int = 8, step: float = 1e-3,
               rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare analytic gradients of fn(leaf) against central differences.

    The check runs in float64 regardless of x0's dtype; fn must build a
    scalar loss from the single leaf it is given. Sampled leaf entries are
    perturbed by +-step. Paths through piecewise-constant ops are refused
    (skipped and flagged) rather than checked.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    if sample_count < 1:
        raise ValueError("grad_check: sample_count must be >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    loss = fn(leaf)
    if loss.values.size != 1:
        raise GraphError("grad_check: fn must return a scalar loss")
    bad = _nondiff_on_path(loss, leaf)
    if bad is not None:
        return GradCheckResult(0.0, skipped=True,
                               reason=f"piecewise-constant op {bad!r} on the leaf-to-loss path")
    analytic = backward(loss, [leaf])[0]

    rng = rng if rng is not None else np.random.default_rng(0)
    count = min(sample_count, x0.size)
    flat_idx = rng.choice(x0.size, size=count, replace=False)
    worst = 0.0
    for i in flat_idx:
        i = int(i)
        pert = x0.reshape(-1).copy()
        pert[i] += step
        f_plus = float(fn(Tensor(pert.reshape(x0.shape))).values)
        pert[i] -= 2.0 * step
        f_minus = float(fn(Tensor(pert.reshape(x0.shape))).values)
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = float(analytic.reshape(-1)[i])
        denom = max(abs(a), abs(numeric), 1e-6)
        worst = max(worst, abs(a - numeric) / denom)
    return GradCheckResult(worst)
