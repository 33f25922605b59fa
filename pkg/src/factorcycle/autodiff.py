"""Dense float64 tensors with a recording tape for reverse-mode gradients.

The tape is define-by-run: a ``Tape`` is opened as a context manager, every
primitive applied while it is active appends one node, and ``backward`` walks
the nodes in reverse to accumulate vector-Jacobian products. Outside any tape
the same primitives run as plain numpy computations (inference mode), which is
how detached inputs are produced.

Supported primitive kinds: matmul, add, sub, scalar-mul, relu, leaky-relu,
concat-last-dim, split-last-dim, square, abs, mean-reduce, div-by-scalar.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf value enters or leaves a primitive."""


class TapeError(RuntimeError):
    """Raised on misuse of the tape (bad loss node, nested tape, ...)."""


_state = threading.local()


def _active_tape():
    return getattr(_state, "tape", None)


class Tensor:
    """A dense float64 array, optionally tied to a node on a tape.

    ``node_id`` is only meaningful for the tape in ``tape``; tapes are
    rebuilt every training step, so a tensor that outlives a tape is simply
    re-registered as a leaf on the next one.
    """

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor constructed from non-finite data")
        self.data = arr
        self.tape = None
        self.node_id = None

    @classmethod
    def _wrap(cls, arr, tape, node_id):
        t = object.__new__(cls)
        t.data = arr
        t.tape = tape
        t.node_id = node_id
        return t

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A copy of this value with no tape history."""
        return Tensor._wrap(self.data.copy(), None, None)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, node_id={self.node_id})"


class TapeNode(NamedTuple):
    kind: str
    inputs: tuple
    saved: tuple
    out: int


class Tape:
    """Ordered record of applied primitives; inputs always precede outputs."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._next_id = 0
        self._shapes: dict[int, tuple] = {}

    def __enter__(self):
        if _active_tape() is not None:
            raise TapeError("a tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc):
        _state.tape = None
        return False

    def _register(self, t: Tensor) -> int:
        if t.tape is self and t.node_id is not None:
            return t.node_id
        nid = self._next_id
        self._next_id += 1
        self._shapes[nid] = t.data.shape
        t.tape = self
        t.node_id = nid
        return nid

    def _record(self, kind, input_ids, saved, out_shape) -> int:
        oid = self._next_id
        self._next_id += 1
        self._shapes[oid] = out_shape
        self.nodes.append(TapeNode(kind, input_ids, saved, oid))
        return oid


@dataclass
class GradStore:
    """Gradients of one loss w.r.t. one tape's nodes, keyed by node id.

    Tensors registered on a different tape (stale bindings from an earlier
    graph) or on no tape never alias entries here; they and nodes with no
    path to the loss read as zero, so callers never special-case them.
    """

    tape: "Tape"
    grads: dict = field(default_factory=dict)

    def get(self, t: Tensor):
        if t.tape is not self.tape:
            return None
        return self.grads.get(t.node_id)

    def grad(self, t: Tensor) -> np.ndarray:
        g = self.get(t)
        if g is None:
            return np.zeros_like(t.data)
        return g


# --- primitive forward/backward table ------------------------------------
#
# forward(arrays, attrs) -> (out_array, saved)
# vjp(saved, grad_out)   -> tuple of input gradients (None = no gradient)


def _shape_err(kind, arrays, why):
    shapes = ", ".join(str(a.shape) for a in arrays)
    return ShapeError(f"{kind}: {why} (got shapes {shapes})")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _fwd_matmul(arrays, attrs):
    a, b = arrays
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", arrays, "expected (B,n) @ (n,m)")
    return a @ b, (a, b)


def _vjp_matmul(saved, g):
    a, b = saved
    return g @ b.T, a.T @ g


def _fwd_add(arrays, attrs):
    a, b = arrays
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_err("add", arrays, "operands not broadcastable") from None
    return a + b, (a.shape, b.shape)


def _vjp_add(saved, g):
    sa, sb = saved
    return _unbroadcast(g, sa), _unbroadcast(g, sb)


def _fwd_sub(arrays, attrs):
    a, b = arrays
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_err("sub", arrays, "operands not broadcastable") from None
    return a - b, (a.shape, b.shape)


def _vjp_sub(saved, g):
    sa, sb = saved
    return _unbroadcast(g, sa), _unbroadcast(-g, sb)


def _fwd_scalar_mul(arrays, attrs):
    c = float(attrs["value"])
    if not np.isfinite(c):
        raise NonFiniteError("scalar-mul: non-finite scalar attribute")
    return arrays[0] * c, (c,)


def _vjp_scalar_mul(saved, g):
    return (g * saved[0],)


def _fwd_relu(arrays, attrs):
    x = arrays[0]
    return np.maximum(x, 0.0), (x,)


def _vjp_relu(saved, g):
    # subgradient at exactly 0 is 0 (negative-side slope)
    return (g * (saved[0] > 0.0),)


def _fwd_leaky_relu(arrays, attrs):
    x = arrays[0]
    slope = float(attrs["slope"])
    return np.where(x > 0.0, x, slope * x), (x, slope)


def _vjp_leaky_relu(saved, g):
    x, slope = saved
    return (g * np.where(x > 0.0, 1.0, slope),)


def _fwd_concat(arrays, attrs):
    lead = arrays[0].shape[:-1]
    for a in arrays[1:]:
        if a.shape[:-1] != lead:
            raise _shape_err("concat-last-dim", arrays, "leading dims differ")
    widths = tuple(a.shape[-1] for a in arrays)
    return np.concatenate(arrays, axis=-1), (widths,)


def _vjp_concat(saved, g):
    (widths,) = saved
    out, start = [], 0
    for w in widths:
        out.append(g[..., start : start + w])
        start += w
    return tuple(out)


def _fwd_split(arrays, attrs):
    x = arrays[0]
    sizes = tuple(int(s) for s in attrs["sizes"])
    part = int(attrs["part"])
    if any(s <= 0 for s in sizes) or sum(sizes) != x.shape[-1]:
        raise _shape_err(
            "split-last-dim", arrays, f"sizes {sizes} do not sum to last extent"
        )
    if not 0 <= part < len(sizes):
        raise _shape_err("split-last-dim", arrays, f"part {part} out of range")
    start = sum(sizes[:part])
    stop = start + sizes[part]
    return x[..., start:stop].copy(), (x.shape, start, stop)


def _vjp_split(saved, g):
    in_shape, start, stop = saved
    out = np.zeros(in_shape)
    out[..., start:stop] = g
    return (out,)


def _fwd_square(arrays, attrs):
    x = arrays[0]
    return x * x, (x,)


def _vjp_square(saved, g):
    return (2.0 * saved[0] * g,)


def _fwd_abs(arrays, attrs):
    x = arrays[0]
    return np.abs(x), (x,)


def _vjp_abs(saved, g):
    # sign(0) = 0, matching the relu convention at the kink
    return (g * np.sign(saved[0]),)


def _fwd_mean(arrays, attrs):
    x = arrays[0]
    return np.asarray(x.mean()), (x.shape, x.size)


def _vjp_mean(saved, g):
    shape, size = saved
    return (np.full(shape, float(g) / size),)


def _fwd_div_scalar(arrays, attrs):
    x, s = arrays
    if s.size != 1:
        raise _shape_err("div-by-scalar", arrays, "divisor must be a single value")
    sv = float(s.reshape(())[()])
    return x / sv, (x, sv, s.shape)


def _vjp_div_scalar(saved, g):
    x, s, s_shape = saved
    return g / s, np.full(s_shape, -(g * x).sum() / (s * s))


_OPS: dict[str, tuple[Callable, Callable]] = {
    "matmul": (_fwd_matmul, _vjp_matmul),
    "add": (_fwd_add, _vjp_add),
    "sub": (_fwd_sub, _vjp_sub),
    "scalar-mul": (_fwd_scalar_mul, _vjp_scalar_mul),
    "relu": (_fwd_relu, _vjp_relu),
    "leaky-relu": (_fwd_leaky_relu, _vjp_leaky_relu),
    "concat-last-dim": (_fwd_concat, _vjp_concat),
    "split-last-dim": (_fwd_split, _vjp_split),
    "square": (_fwd_square, _vjp_square),
    "abs": (_fwd_abs, _vjp_abs),
    "mean-reduce": (_fwd_mean, _vjp_mean),
    "div-by-scalar": (_fwd_div_scalar, _vjp_div_scalar),
}


def apply(kind: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Run one primitive, recording it on the active tape if there is one.

    Raises ShapeError on incompatible operands and NonFiniteError if the
    result contains NaN/Inf (inputs are validated when first registered, so
    non-finite values can never propagate silently through a graph).
    """
    try:
        fwd, _ = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    arrays = [t.data for t in inputs]
    out, saved = fwd(arrays, attrs)
    if not np.isfinite(out).all():
        raise NonFiniteError(f"{kind}: non-finite output")
    tape = _active_tape()
    if tape is None:
        return Tensor._wrap(out, None, None)
    ids = tuple(tape._register(t) for t in inputs)
    oid = tape._record(kind, ids, saved, out.shape)
    return Tensor._wrap(out, tape, oid)


def backward(tape: Tape, loss) -> GradStore:
    """Gradients of a scalar loss w.r.t. every ancestor node on the tape.

    ``loss`` may be the loss Tensor or its node id. Each node is visited
    exactly once, in reverse recording order.
    """
    if isinstance(loss, Tensor):
        if loss.tape is not tape or loss.node_id is None:
            raise TapeError("loss tensor is not on this tape")
        loss_id = loss.node_id
    else:
        loss_id = int(loss)
    shape = tape._shapes.get(loss_id)
    if shape is None:
        raise TapeError(f"node {loss_id} is not on this tape")
    if shape != ():
        raise TapeError(f"loss must be scalar-shaped, got {shape}")

    grads: dict[int, np.ndarray] = {loss_id: np.asarray(1.0)}
    for node in reversed(tape.nodes):
        g = grads.get(node.out)
        if g is None:
            continue
        in_grads = _OPS[node.kind][1](node.saved, g)
        for iid, ig in zip(node.inputs, in_grads):
            if ig is None:
                continue
            acc = grads.get(iid)
            grads[iid] = ig if acc is None else acc + ig
    return GradStore(tape, grads)


# --- functional wrappers ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply("matmul", (a, b))


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply("add", (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return apply("sub", (a, b))


def scalar_mul(x: Tensor, value: float) -> Tensor:
    return apply("scalar-mul", (x,), {"value": value})


def relu(x: Tensor) -> Tensor:
    return apply("relu", (x,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return apply("leaky-relu", (x,), {"slope": slope})


def concat_last_dim(*xs: Tensor) -> Tensor:
    return apply("concat-last-dim", xs)


def split_last_dim(x: Tensor, sizes: Sequence[int]) -> tuple[Tensor, ...]:
    sizes = tuple(sizes)
    return tuple(
        apply("split-last-dim", (x,), {"sizes": sizes, "part": i})
        for i in range(len(sizes))
    )


def square(x: Tensor) -> Tensor:
    return apply("square", (x,))


def absolute(x: Tensor) -> Tensor:
    return apply("abs", (x,))


def mean_reduce(x: Tensor) -> Tensor:
    return apply("mean-reduce", (x,))


def div_by_scalar(x: Tensor, s: Tensor) -> Tensor:
    """Elementwise x / s where s is a scalar-shaped tensor in the graph."""
    return apply("div-by-scalar", (x, s))


# --- finite-difference gradient checking -----------------------------------

_KINKED = ("relu", "leaky-relu")


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    n_checked: int
    excluded: list[tuple[int, int]]  # (wrt index, flat coordinate)
    eps: float
    tol: float


def _eval_with_kinks(f):
    """Evaluate f() on a fresh tape; return (value, list of kink-op inputs)."""
    with Tape() as tape:
        out = f()
        if out.data.shape != ():
            raise TapeError("grad_check requires a scalar-valued function")
        # copy: a leaf fed straight into relu aliases the perturbed array
        kinks = [n.saved[0].copy() for n in tape.nodes if n.kind in _KINKED]
    return float(out.data), kinks


def grad_check(
    f: Callable[[], Tensor],
    wrt,
    eps: float = 1e-5,
    tol: float = 1e-4,
    rel_floor: float = 1e-3,
) -> GradCheckReport:
    """Compare backward() against central finite differences, coordinate-wise.

    f is a zero-argument closure that rebuilds its graph from the current
    values of the ``wrt`` tensors (a single Tensor or a sequence), whose
    entries are perturbed in place one coordinate at a time.

    Coordinates whose +/-eps evaluations land on different sides of a
    relu/leaky-relu kink (or exactly on one) are excluded from the
    comparison and reported, since the central difference is meaningless
    across a subgradient boundary. Relative error uses
    |a - n| / max(|a|, |n|, rel_floor) so that near-zero gradients are
    compared against finite-difference noise on an absolute scale.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(wrt, Tensor):
        wrt = [wrt]
    wrt = list(wrt)

    with Tape() as tape:
        out = f()
        if out.data.shape != ():
            raise TapeError("grad_check requires a scalar-valued function")
        store = backward(tape, out)
        analytic = [store.grad(p) for p in wrt]

    excluded: list[tuple[int, int]] = []
    max_rel = 0.0
    n_checked = 0
    for k, p in enumerate(wrt):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_hi, kinks_hi = _eval_with_kinks(f)
            flat[i] = orig - eps
            f_lo, kinks_lo = _eval_with_kinks(f)
            flat[i] = orig
            # a coordinate is excluded only if the +/-eps evaluations put
            # some activation input on different sides of its kink
            crossed = any(
                ((hi > 0.0) != (lo > 0.0)).any()
                for hi, lo in zip(kinks_hi, kinks_lo)
            )
            if crossed:
                excluded.append((k, i))
                continue
            numeric = (f_hi - f_lo) / (2.0 * eps)
            a = float(analytic[k].reshape(-1)[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), rel_floor)
            max_rel = max(max_rel, rel)
            n_checked += 1

    return GradCheckReport(
        max_rel_err=max_rel,
        passed=max_rel < tol,
        n_checked=n_checked,
        excluded=excluded,
        eps=eps,
        tol=tol,
    )
