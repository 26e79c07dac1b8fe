"""Small reverse-mode autodiff over dense numpy arrays.

Every primitive accepts either plain arrays or :class:`Node` objects.  When
all inputs are arrays the primitive is just the numpy computation; when any
input is a node the result is recorded on that node's :class:`Tape`.  Vector-
Jacobian products are written with the same primitives, so running the
reverse sweep over nodes (``create_graph=True``) records the gradient
computation itself and it can be differentiated again.  That is how the
critic's gradient penalty gets its weight gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Node",
    "Tape",
    "ParamStore",
    "FiniteDiffResult",
    "backward",
    "adam_step",
    "finite_diff_check",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "sum",
    "mean",
    "broadcast_to",
    "sum_to",
    "tanh",
    "relu",
    "exp",
    "log",
    "square",
    "softmax",
    "l2norm",
]


class Node:
    """A value recorded on a tape."""

    __array_ufunc__ = None  # make ndarray <op> Node dispatch to Node's reflected ops
    __slots__ = ("value", "tape", "args", "vjp", "index", "name")

    def __init__(self, value, tape, args=(), vjp=None, name=None):
        self.value = value
        self.tape = tape
        self.args = args
        self.vjp = vjp
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)


class Tape:
    """Ordered record of nodes; creation order is a topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def __len__(self):
        return len(self.nodes)

    def var(self, value, name=None) -> Node:
        return Node(np.array(value, dtype=float), self, name=name)

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise KeyError(f"parameter {name!r} already on tape")
        node = self.var(value, name=name)
        self.params[name] = node
        return node

    def grad(self, output: Node, wrt: Sequence[Node], create_graph: bool = False, seed=None):
        """Gradients of ``output`` w.r.t. each node in ``wrt``.

        ``seed`` is the upstream adjoint (defaults to ones, which for a scalar
        output gives the plain gradient).  With ``create_graph`` the returned
        gradients are nodes on this tape.
        """
        if output.tape is not self or any(w.tape is not self for w in wrt):
            raise ValueError("nodes belong to a different tape")
        if seed is None:
            seed = np.ones_like(output.value)
        adj: dict[int, object] = {output.index: seed}
        stop = output.index
        for i in range(stop, -1, -1):
            g = adj.pop(i, None)
            if g is None:
                continue
            node = self.nodes[i]
            if node.vjp is None:
                adj[i] = g  # leaf: keep for collection
                continue
            if create_graph:
                out, args = node, node.args
            else:
                out = node.value
                args = tuple(a.value if isinstance(a, Node) else a for a in node.args)
            grads = node.vjp(g, out, *args)
            for a, ga in zip(node.args, grads):
                if isinstance(a, Node) and ga is not None:
                    prev = adj.get(a.index)
                    adj[a.index] = ga if prev is None else add(prev, ga)
        result = []
        for w in wrt:
            g = adj.get(w.index)
            if g is None:
                g = np.zeros_like(w.value)
            elif not create_graph:
                g = np.array(g, dtype=float)
            result.append(g)
        return result


def backward(tape: Tape, output: Node) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar ``output``; returns gradients of every named parameter."""
    if not isinstance(output, Node):
        raise TypeError("output must be a Node")
    if output.value.size != 1:
        raise ValueError(f"backward needs a scalar output, got shape {output.value.shape}")
    names = list(tape.params)
    grads = tape.grad(output, [tape.params[n] for n in names])
    return dict(zip(names, grads))


# ---------------------------------------------------------------------------
# primitives


def _tape_of(args):
    tape = None
    for a in args:
        if isinstance(a, Node):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("cannot combine nodes from different tapes")
    return tape


def _val(x):
    return x.value if isinstance(x, Node) else x


def _shape(x):
    return x.value.shape if isinstance(x, Node) else np.shape(x)


def _op(value, args, vjp):
    tape = _tape_of(args)
    if tape is None:
        return value
    return Node(np.asarray(value, dtype=float), tape, args, vjp)


def _sum_to_value(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and g.shape[i + lead] != 1
    )
    out = g.sum(axis=axes, keepdims=True)
    return out.reshape(shape)


def sum_to(x, shape):
    """Sum a broadcast array back down to ``shape``."""
    shape = tuple(shape)
    if _shape(x) == shape:
        return x
    in_shape = _shape(x)
    return _op(
        _sum_to_value(_val(x), shape),
        (x,),
        lambda g, out, a: (broadcast_to(g, in_shape),),
    )


def broadcast_to(x, shape):
    shape = tuple(shape)
    if _shape(x) == shape:
        return x
    in_shape = _shape(x)
    return _op(
        np.broadcast_to(_val(x), shape),
        (x,),
        lambda g, out, a: (sum_to(g, in_shape),),
    )


def _needs(*args):
    return tuple(isinstance(a, Node) for a in args)


def add(a, b):
    sa, sb = _shape(a), _shape(b)
    na, nb = _needs(a, b)
    return _op(
        _val(a) + _val(b),
        (a, b),
        lambda g, out, a, b: (sum_to(g, sa) if na else None, sum_to(g, sb) if nb else None),
    )


def sub(a, b):
    sa, sb = _shape(a), _shape(b)
    na, nb = _needs(a, b)
    return _op(
        _val(a) - _val(b),
        (a, b),
        lambda g, out, a, b: (
            sum_to(g, sa) if na else None,
            sum_to(neg(g), sb) if nb else None,
        ),
    )


def mul(a, b):
    sa, sb = _shape(a), _shape(b)
    na, nb = _needs(a, b)
    return _op(
        _val(a) * _val(b),
        (a, b),
        lambda g, out, a, b: (
            sum_to(mul(g, b), sa) if na else None,
            sum_to(mul(g, a), sb) if nb else None,
        ),
    )


def div(a, b):
    sa, sb = _shape(a), _shape(b)
    na, nb = _needs(a, b)
    return _op(
        _val(a) / _val(b),
        (a, b),
        lambda g, out, a, b: (
            sum_to(div(g, b), sa) if na else None,
            sum_to(neg(div(mul(g, out), b)), sb) if nb else None,
        ),
    )


def neg(a):
    return _op(-_val(a), (a,), lambda g, out, a: (neg(g),))


def matmul(a, b):
    """2-D matrix product."""
    if len(_shape(a)) != 2 or len(_shape(b)) != 2:
        raise ValueError("matmul expects 2-D operands")
    na, nb = _needs(a, b)
    return _op(
        _val(a) @ _val(b),
        (a, b),
        lambda g, out, a, b: (
            matmul(g, transpose(b)) if na else None,
            matmul(transpose(a), g) if nb else None,
        ),
    )


def transpose(a):
    return _op(np.transpose(_val(a)), (a,), lambda g, out, a: (transpose(g),))


def reshape(a, shape):
    in_shape = _shape(a)
    return _op(
        np.reshape(_val(a), shape),
        (a,),
        lambda g, out, a: (reshape(g, in_shape),),
    )


def _keep_shape(shape, axis):
    if axis is None:
        return (1,) * len(shape)
    axes = (axis,) if isinstance(axis, int) else axis
    axes = {ax % len(shape) for ax in axes}
    return tuple(1 if i in axes else s for i, s in enumerate(shape))


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    in_shape = _shape(a)
    kshape = _keep_shape(in_shape, axis)
    return _op(
        np.sum(_val(a), axis=axis, keepdims=keepdims),
        (a,),
        lambda g, out, a: (broadcast_to(reshape(g, kshape), in_shape),),
    )


def mean(a, axis=None, keepdims=False):
    shape = _shape(a)
    if axis is None:
        n = int(np.prod(shape))
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tanh(a):
    return _op(
        np.tanh(_val(a)),
        (a,),
        lambda g, out, a: (mul(g, sub(1.0, mul(out, out))),),
    )


def relu(a):
    # derivative at exactly 0 is taken as 0
    def vjp(g, out, a):
        return (mul(g, (_val(a) > 0).astype(float)),)

    return _op(np.maximum(_val(a), 0.0), (a,), vjp)


def exp(a):
    return _op(np.exp(_val(a)), (a,), lambda g, out, a: (mul(g, out),))


def log(a):
    return _op(np.log(_val(a)), (a,), lambda g, out, a: (div(g, a),))


def square(a):
    return _op(np.square(_val(a)), (a,), lambda g, out, a: (mul(g, mul(2.0, a)),))


def softmax(a, axis=-1):
    v = _val(a)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g, out, a):
        inner = sum(mul(g, out), axis=axis, keepdims=True)
        return (mul(out, sub(g, inner)),)

    return _op(s, (a,), vjp)


def l2norm(a, axis=-1):
    """Euclidean norm along ``axis`` (axis removed); zero vectors get a zero subgradient."""
    v = _val(a)
    n = np.sqrt(np.sum(v * v, axis=axis))
    kshape = _keep_shape(np.shape(v), axis)

    def vjp(g, out, a):
        nk = reshape(out, kshape)
        guard = (_val(nk) == 0).astype(float)
        return (mul(a, div(reshape(g, kshape), add(nk, guard))),)

    return _op(n, (a,), vjp)


# ---------------------------------------------------------------------------
# parameters and Adam


class ParamStore:
    """Named parameter arrays with per-parameter Adam state."""

    def __init__(self, params: Mapping[str, np.ndarray] | None = None):
        self._params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}
        for k, val in (params or {}).items():
            self.add(k, val)

    def add(self, name: str, value) -> None:
        if name in self._params:
            raise KeyError(f"parameter {name!r} exists")
        arr = np.array(value, dtype=float)
        self._params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        self.t[name] = 0

    def __getitem__(self, name):
        return self._params[name]

    def __setitem__(self, name, value):
        arr = np.array(value, dtype=float)
        if arr.shape != self._params[name].shape:
            raise ValueError(f"shape of {name!r} is fixed at {self._params[name].shape}")
        self._params[name] = arr

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [k for k in self._params if k.startswith(prefix)]

    def bind(self, tape: Tape, names: Iterable[str] | None = None) -> dict[str, Node]:
        """Place (a subset of) the parameters on ``tape`` as named leaves."""
        names = list(self._params) if names is None else list(names)
        return {k: tape.param(k, self._params[k]) for k in names}

    def copy(self) -> "ParamStore":
        new = ParamStore()
        for k, val in self._params.items():
            new._params[k] = val.copy()
            new.m[k] = self.m[k].copy()
            new.v[k] = self.v[k].copy()
            new.t[k] = self.t[k]
        return new


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """One bias-corrected Adam update, in place; returns ``store``."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    for name, g in grads.items():
        if name not in store:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        g = np.asarray(g, dtype=float)
        p = store[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        t = store.t[name] + 1
        m = beta1 * store.m[name] + (1.0 - beta1) * g
        v = beta2 * store.v[name] + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        store._params[name] = p - lr * mhat / (np.sqrt(vhat) + eps)
        store.m[name], store.v[name], store.t[name] = m, v, t
    return store


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class FiniteDiffResult:
    max_rel_error: float
    non_smooth: list[int] = field(default_factory=list)
    analytic: np.ndarray | None = None
    numeric: np.ndarray | None = None

    def __float__(self):
        return self.max_rel_error


def finite_diff_check(
    fn: Callable, point, step: float = 1e-5, kink_tol: float = 1e-3
) -> FiniteDiffResult:
    """Compare the tape gradient of ``fn`` at ``point`` with central differences.

    ``fn`` must be written with the primitives in this module so that it runs
    both on a node (for the analytic gradient) and on a plain array.
    Coordinates where the one-sided slopes disagree are reported in
    ``non_smooth`` and left out of ``max_rel_error``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.array(point, dtype=float)
    tape = Tape()
    leaf = tape.var(x0)
    out = fn(leaf)
    if not isinstance(out, Node) or out.value.size != 1:
        raise ValueError("fn must return a scalar node")
    (analytic,) = tape.grad(out, [leaf])
    analytic = np.asarray(analytic, dtype=float).reshape(x0.shape)

    def f(x):
        val = float(np.asarray(fn(x)).reshape(()))
        if not np.isfinite(val):
            raise FloatingPointError("function value is not finite")
        return val

    f0 = f(x0)
    numeric = np.zeros_like(x0)
    rel = np.zeros(x0.size)
    kinks = []
    flat = x0.reshape(-1)
    for i in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[i] += step
        xm[i] -= step
        fp, fm = f(xp.reshape(x0.shape)), f(xm.reshape(x0.shape))
        c = (fp - fm) / (2 * step)
        numeric.reshape(-1)[i] = c
        fwd, bwd = (fp - f0) / step, (f0 - fm) / step
        gap = abs(fwd - bwd)
        if gap > kink_tol * (abs(fwd) + abs(bwd)) + 1e-6:
            # curvature shrinks the one-sided gap with the step, a kink does not
            xp[i], xm[i] = flat[i] + step / 2, flat[i] - step / 2
            half = abs(f(xp.reshape(x0.shape)) - 2 * f0 + f(xm.reshape(x0.shape))) / (step / 2)
            if not 0.3 * gap < half < 0.7 * gap:
                kinks.append(i)
                continue
        a = analytic.reshape(-1)[i]
        rel[i] = abs(a - c) / (abs(a) + abs(c) + 1e-12)
    return FiniteDiffResult(float(rel.max(initial=0.0)), kinks, analytic, numeric)
