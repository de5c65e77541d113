"""Reverse-mode automatic differentiation over float64 numpy arrays.

The graph is a tape built implicitly during the forward pass: every
`DiffNode` keeps (parent, vjp) pairs, `backward` runs one reverse
topological sweep, and the whole structure is garbage once the step's
references drop. All values are C-contiguous float64; gradients have the
same shape as their value and accumulate across repeated `backward`
calls until the node is discarded.

Every op accepts plain ndarrays as well: if no argument is a DiffNode
the op returns a plain ndarray computed by the identical value code, so
inference paths and the tape share bit-identical arithmetic.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

Array = np.ndarray


def as_f64(x) -> Array:
    """Coerce to a C-contiguous float64 array, preserving 0-d shapes."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


class DiffNode:
    """One tape entry: a value plus the local backward rules to its parents."""

    __slots__ = ("value", "grad", "_parents")

    def __init__(self, value, parents: Sequence[tuple["DiffNode", Callable[[Array], Array]]] = ()):
        self.value = as_f64(value)
        self.grad: Array | None = None
        self._parents = tuple(parents)

    @property
    def shape(self):
        return self.value.shape

    def add_grad(self, g: Array) -> None:
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} != value shape {self.value.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self):
        return f"DiffNode(shape={self.value.shape}, leaf={not self._parents})"


def leaf(value) -> DiffNode:
    """Parameter or input node with no parents."""
    return DiffNode(value)


def _is_node(x) -> bool:
    return isinstance(x, DiffNode)


def value_of(x) -> Array:
    return x.value if _is_node(x) else as_f64(x)


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum a broadcasted gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return np.ascontiguousarray(grad)


def _make(value, pairs):
    """Build a node, or a plain array if no parent is a DiffNode."""
    live = [(p, fn) for p, fn in pairs if _is_node(p)]
    if not live:
        return as_f64(value)
    return DiffNode(value, live)


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    return _make(out, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(g, bv.shape)),
    ])


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    return _make(out, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(-g, bv.shape)),
    ])


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    return _make(out, [
        (a, lambda g: _unbroadcast(g * bv, av.shape)),
        (b, lambda g: _unbroadcast(g * av, bv.shape)),
    ])


def neg(a):
    av = value_of(a)
    return _make(-av, [(a, lambda g: -g)])


def square(a):
    av = value_of(a)
    return _make(av * av, [(a, lambda g: g * (2.0 * av))])


def tanh(a):
    av = value_of(a)
    t = np.tanh(av)
    return _make(t, [(a, lambda g: g * (1.0 - t * t))])


def sigmoid(a):
    av = value_of(a)
    s = 1.0 / (1.0 + np.exp(-av))
    return _make(s, [(a, lambda g: g * (s * (1.0 - s)))])


def exp(a):
    av = value_of(a)
    e = np.exp(av)
    return _make(e, [(a, lambda g: g * e)])


def sqrt(a):
    av = value_of(a)
    r = np.sqrt(av)
    return _make(r, [(a, lambda g: g * (0.5 / r))])


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape):
    av = value_of(a)
    old = av.shape
    return _make(av.reshape(shape), [(a, lambda g: np.ascontiguousarray(g.reshape(old)))])


def transpose(a, axes):
    av = value_of(a)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(av.transpose(axes)),
                 [(a, lambda g: np.ascontiguousarray(g.transpose(inv)))])


def concat(parts, axis=0):
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def cut(i):
        lo, hi = offsets[i], offsets[i + 1]

        def fn(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return np.ascontiguousarray(g[tuple(sl)])
        return fn

    return _make(out, [(p, cut(i)) for i, p in enumerate(parts)])


def tile_rows(vec, n: int):
    """Repeat a 1-D vector as n identical rows; backward sums over rows."""
    v = value_of(vec)
    if v.ndim != 1:
        raise ShapeError(f"tile_rows expects a 1-D vector, got shape {v.shape}")
    out = np.ascontiguousarray(np.broadcast_to(v, (n, v.shape[0])))
    return _make(out, [(vec, lambda g: np.ascontiguousarray(g.sum(axis=0)))])


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def total(a):
    av = value_of(a)
    shape = av.shape
    return _make(np.asarray(av.sum()), [(a, lambda g: np.full(shape, float(g.reshape(()))))])


def mean(a):
    av = value_of(a)
    shape = av.shape
    n = av.size
    return _make(np.asarray(av.mean()), [(a, lambda g: np.full(shape, float(g.reshape(())) / n))])


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Strict 2-D matrix product; joins the tape when an operand is a node."""
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {av.shape} and {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"inner dimensions differ: {av.shape} x {bv.shape}")
    out = av @ bv
    return _make(out, [
        (a, lambda g: g @ bv.T),
        (b, lambda g: av.T @ g),
    ])


def conv2d_value(x: Array, k: Array, stride: int) -> Array:
    """Valid-padding strided cross-correlation, (C,H,W) x (O,C,kh,kw)."""
    c, h, w = x.shape
    o, ck, kh, kw = k.shape
    hh = (h - kh) // stride + 1
    ww = (w - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride, :, :]
    return np.ascontiguousarray(np.einsum("ocpq,chwpq->ohw", k, win, optimize=True))


def conv2d(x, k, stride: int = 1):
    """Strided valid cross-correlation with gradients to input and kernels.

    Preconditions: odd square kernel, stride >= 1, kernel fits the input.
    """
    xv, kv = value_of(x), value_of(k)
    if xv.ndim != 3 or kv.ndim != 4:
        raise ShapeError(f"conv2d expects (C,H,W) and (O,C,kh,kw), got {xv.shape} and {kv.shape}")
    c, h, w = xv.shape
    o, ck, kh, kw = kv.shape
    if ck != c:
        raise ShapeError(f"kernel channel count {ck} != input channels {c}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel must be odd and square, got {kh}x{kw}")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if kh > h or kw > w:
        raise ShapeError(f"kernel {kh}x{kw} larger than input {h}x{w}")

    out = conv2d_value(xv, kv, stride)
    hh, ww = out.shape[1], out.shape[2]

    def grad_x(g):
        gx = np.zeros_like(xv)
        for p in range(kh):
            for q in range(kw):
                patch = np.einsum("ohw,oc->chw", g, kv[:, :, p, q], optimize=True)
                gx[:, p:p + stride * hh:stride, q:q + stride * ww:stride] += patch
        return gx

    def grad_k(g):
        win = np.lib.stride_tricks.sliding_window_view(xv, (kh, kw), axis=(1, 2))
        win = win[:, ::stride, ::stride, :, :]
        return np.ascontiguousarray(np.einsum("ohw,chwpq->ocpq", g, win, optimize=True))

    return _make(out, [(x, grad_x), (k, grad_k)])


# ---------------------------------------------------------------------------
# custom ops
# ---------------------------------------------------------------------------

def custom(value, parents_and_vjps):
    """Node from an externally computed value plus explicit vjp closures.

    Used where the forward pass is cheaper or clearer outside the tape
    (the splat rasterizer saves its own intermediates and exposes an
    analytic backward).
    """
    return _make(value, parents_and_vjps)


# ---------------------------------------------------------------------------
# backward sweep and verification
# ---------------------------------------------------------------------------

def backward(loss: DiffNode) -> None:
    """Reverse topological sweep from a scalar-shaped loss.

    Every node reachable from `loss` receives d(loss)/d(node) in `.grad`.
    Calling again without clearing grads accumulates, matching the use of
    one tape per training step.
    """
    if not _is_node(loss):
        raise ContractError("backward expects a DiffNode")
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar-shaped, got shape {loss.value.shape}")

    order: list[DiffNode] = []
    seen: set[int] = set()
    stack: list[tuple[DiffNode, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    # Local downstream accumulators keep this sweep independent of any
    # gradients left over from previous backward calls.
    downstream: dict[int, Array] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = downstream.pop(id(node), None)
        if g is None:
            continue
        node.add_grad(g)
        for parent, vjp in node._parents:
            contrib = vjp(g)
            if contrib.shape != parent.value.shape:
                raise ShapeError(
                    f"vjp produced shape {contrib.shape} for parent of shape {parent.value.shape}")
            acc = downstream.get(id(parent))
            if acc is None:
                downstream[id(parent)] = contrib.copy()
            else:
                acc += contrib


def grad_check(f, params: Sequence[Array], h: float = 1e-5, tol: float = 1e-5) -> dict:
    """Compare analytic gradients of f against central finite differences.

    `f` takes a list of DiffNode leaves and returns a scalar DiffNode; it
    must be deterministic. The step for parameter entry t is
    h * max(1, |t|) so widely scaled parameters are probed sanely.
    Returns {"max_rel_error", "per_param", "passed"}.
    """
    if h <= 0:
        raise ContractError("h must be positive")
    leaves = [leaf(p) for p in params]
    loss = f(leaves)
    if not np.isfinite(loss.value).all():
        raise NumericError("loss is not finite")
    backward(loss)
    analytic = [np.zeros_like(l.value) if l.grad is None else l.grad.copy() for l in leaves]

    per_param = []
    for pi, base in enumerate(params):
        base = as_f64(base).copy()
        numeric = np.zeros_like(base)
        flat = base.ravel()
        num_flat = numeric.ravel()
        for t in range(flat.size):
            step = h * max(1.0, abs(flat[t]))
            orig = flat[t]
            flat[t] = orig + step
            lo_hi = [None, None]
            lo_hi[0] = float(f([leaf(p) if i != pi else leaf(base) for i, p in enumerate(params)]).value.reshape(()))
            flat[t] = orig - step
            lo_hi[1] = float(f([leaf(p) if i != pi else leaf(base) for i, p in enumerate(params)]).value.reshape(()))
            flat[t] = orig
            num_flat[t] = (lo_hi[0] - lo_hi[1]) / (2.0 * step)
        if not np.isfinite(numeric).all():
            raise NumericError("finite-difference probe produced non-finite values")
        denom = np.maximum(1.0, np.maximum(np.abs(analytic[pi]), np.abs(numeric)))
        per_param.append(float(np.max(np.abs(analytic[pi] - numeric) / denom)) if base.size else 0.0)

    worst = max(per_param) if per_param else 0.0
    return {"max_rel_error": worst, "per_param": per_param, "passed": worst <= tol}


def relative_error(a: Array, b: Array) -> float:
    """max |a-b| / max(1, |a|, |b|), elementwise then reduced."""
    a, b = as_f64(a), as_f64(b)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
