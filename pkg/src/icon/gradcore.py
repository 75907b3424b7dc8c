"""Reverse-mode differentiation over a dynamically recorded computation graph.

Values are float64 numpy arrays (scalars are 0-d arrays). Each operation
appends a node holding the forward value and closures that map an upstream
gradient to per-parent gradient contributions. `backward` walks the
ancestors of a scalar root in reverse topological order and accumulates
gradients into named variables.

Non-finite values (division by zero, log of a non-positive number, ...)
are allowed to propagate; the training loop checks loss finiteness and
treats a poisoned value as a skipped step.
"""

from __future__ import annotations

import numpy as np

_AUTO_NAME = 0


class TapeNode:
    """One recorded value. Variables have a name; interior nodes have parents."""

    __slots__ = ("value", "parents", "vjps", "stop", "name")

    def __init__(self, value, parents=(), vjps=(), stop=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjps = vjps
        self.stop = stop
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    # Operator sugar keeps formula-heavy call sites readable.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __repr__(self):
        tag = self.name or ("stop" if self.stop else "node")
        return f"TapeNode({tag}, shape={self.value.shape})"


class GradientBundle:
    """Accumulated gradients keyed by variable name; missing means zero."""

    def __init__(self, grads: dict):
        self._grads = grads

    def __contains__(self, name):
        return name in self._grads

    def __getitem__(self, name):
        return self._grads[name]

    def get(self, name, like=None):
        g = self._grads.get(name)
        if g is None and like is not None:
            return np.zeros_like(np.asarray(like, dtype=np.float64))
        return g

    def names(self):
        return self._grads.keys()

    def items(self):
        return self._grads.items()


def variable(value, name: str | None = None) -> TapeNode:
    """Trainable leaf; gradients are collected under its name."""
    global _AUTO_NAME
    if name is None:
        name = f"var{_AUTO_NAME}"
        _AUTO_NAME += 1
    return TapeNode(value, name=name)


def constant(value) -> TapeNode:
    return TapeNode(value, stop=True)


def _as_node(x) -> TapeNode:
    return x if isinstance(x, TapeNode) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the parent's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> TapeNode:
    a, b = _as_node(a), _as_node(b)
    return TapeNode(a.value + b.value, (a, b),
                    (lambda g: _unbroadcast(g, a.value.shape),
                     lambda g: _unbroadcast(g, b.value.shape)))


def sub(a, b) -> TapeNode:
    a, b = _as_node(a), _as_node(b)
    return TapeNode(a.value - b.value, (a, b),
                    (lambda g: _unbroadcast(g, a.value.shape),
                     lambda g: _unbroadcast(-g, b.value.shape)))


def mul(a, b) -> TapeNode:
    a, b = _as_node(a), _as_node(b)
    return TapeNode(a.value * b.value, (a, b),
                    (lambda g: _unbroadcast(g * b.value, a.value.shape),
                     lambda g: _unbroadcast(g * a.value, b.value.shape)))


def div(a, b) -> TapeNode:
    a, b = _as_node(a), _as_node(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.value / b.value
    return TapeNode(out, (a, b),
                    (lambda g: _unbroadcast(g / b.value, a.value.shape),
                     lambda g: _unbroadcast(-g * a.value / (b.value * b.value),
                                            b.value.shape)))


def neg(a) -> TapeNode:
    a = _as_node(a)
    return TapeNode(-a.value, (a,), (lambda g: -g,))


def exp(a) -> TapeNode:
    a = _as_node(a)
    out = np.exp(a.value)
    return TapeNode(out, (a,), (lambda g: g * out,))


def log(a) -> TapeNode:
    a = _as_node(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.value)
    return TapeNode(out, (a,), (lambda g: g / a.value,))


def sqrt(a) -> TapeNode:
    a = _as_node(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.value)
    return TapeNode(out, (a,), (lambda g: g * 0.5 / out,))


def sin(a) -> TapeNode:
    a = _as_node(a)
    return TapeNode(np.sin(a.value), (a,), (lambda g: g * np.cos(a.value),))


def cos(a) -> TapeNode:
    a = _as_node(a)
    return TapeNode(np.cos(a.value), (a,), (lambda g: -g * np.sin(a.value),))


def power(a, exponent: float) -> TapeNode:
    """a ** exponent for a constant exponent."""
    a = _as_node(a)
    exponent = float(exponent)
    out = a.value ** exponent
    return TapeNode(out, (a,),
                    (lambda g: g * exponent * a.value ** (exponent - 1.0),))


def relu(a) -> TapeNode:
    a = _as_node(a)
    mask = a.value > 0
    return TapeNode(np.where(mask, a.value, 0.0), (a,), (lambda g: g * mask,))


def softplus(a) -> TapeNode:
    a = _as_node(a)
    # log1p(exp(x)) with the large-x branch kept linear for stability.
    out = np.where(a.value > 30.0, a.value, np.log1p(np.exp(np.minimum(a.value, 30.0))))
    sig = 1.0 / (1.0 + np.exp(-a.value))
    return TapeNode(out, (a,), (lambda g: g * sig,))


def sigmoid(a) -> TapeNode:
    a = _as_node(a)
    out = 1.0 / (1.0 + np.exp(-a.value))
    return TapeNode(out, (a,), (lambda g: g * out * (1.0 - out),))


def minimum(a, b) -> TapeNode:
    """Elementwise min; on ties the subgradient goes to the first argument."""
    a, b = _as_node(a), _as_node(b)
    take_a = a.value <= b.value
    return TapeNode(np.where(take_a, a.value, b.value), (a, b),
                    (lambda g: _unbroadcast(g * take_a, a.value.shape),
                     lambda g: _unbroadcast(g * ~take_a, b.value.shape)))


def maximum(a, b) -> TapeNode:
    """Elementwise max; on ties the subgradient goes to the first argument."""
    a, b = _as_node(a), _as_node(b)
    take_a = a.value >= b.value
    return TapeNode(np.where(take_a, a.value, b.value), (a, b),
                    (lambda g: _unbroadcast(g * take_a, a.value.shape),
                     lambda g: _unbroadcast(g * ~take_a, b.value.shape)))


def absolute(a) -> TapeNode:
    a = _as_node(a)
    s = np.sign(a.value)
    return TapeNode(np.abs(a.value), (a,), (lambda g: g * s,))


def total(a, axis=None, keepdims=False) -> TapeNode:
    """Sum reduction."""
    a = _as_node(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.value.shape)

    return TapeNode(out, (a,), (back,))


def mean(a, axis=None, keepdims=False) -> TapeNode:
    a = _as_node(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return total(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def dot(a, b) -> TapeNode:
    """Inner product of two vectors."""
    a, b = _as_node(a), _as_node(b)
    return TapeNode(a.value @ b.value, (a, b),
                    (lambda g: g * b.value, lambda g: g * a.value))


def matvec(m, v) -> TapeNode:
    m, v = _as_node(m), _as_node(v)
    return TapeNode(m.value @ v.value, (m, v),
                    (lambda g: np.outer(g, v.value), lambda g: m.value.T @ g))


def matmul(a, b) -> TapeNode:
    """2-d matrix product; the workhorse of batched field evaluation."""
    a, b = _as_node(a), _as_node(b)
    return TapeNode(a.value @ b.value, (a, b),
                    (lambda g: g @ b.value.T, lambda g: a.value.T @ g))


def transpose(a) -> TapeNode:
    a = _as_node(a)
    return TapeNode(a.value.T, (a,), (lambda g: g.T,))


def reshape(a, shape) -> TapeNode:
    a = _as_node(a)
    return TapeNode(a.value.reshape(shape), (a,),
                    (lambda g: g.reshape(a.value.shape),))


def concat(nodes, axis=0) -> TapeNode:
    nodes = [_as_node(n) for n in nodes]
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def make_back(i):
        return lambda g: np.split(g, splits, axis=axis)[i]

    return TapeNode(np.concatenate([n.value for n in nodes], axis=axis),
                    tuple(nodes), tuple(make_back(i) for i in range(len(nodes))))


def take_rows(a, index) -> TapeNode:
    """Row gather along axis 0 (duplicate indices accumulate on backward)."""
    a = _as_node(a)
    index = np.asarray(index)

    def back(g):
        out = np.zeros_like(a.value)
        np.add.at(out, index, g)
        return out

    return TapeNode(a.value[index], (a,), (back,))


def cumsum(a, axis=-1) -> TapeNode:
    a = _as_node(a)

    def back(g):
        return np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)

    return TapeNode(np.cumsum(a.value, axis=axis), (a,), (back,))


def stop_gradient(n) -> TapeNode:
    """Same forward value; backward treats it as a constant."""
    n = _as_node(n)
    return TapeNode(n.value, (n,), (lambda g: g,), stop=True)


_OPS = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
    "exp": exp, "log": log, "sqrt": sqrt, "sin": sin, "cos": cos,
    "power": power, "sum": total, "dot": dot, "matvec": matvec,
    "relu": relu, "softplus": softplus, "sigmoid": sigmoid,
    "min": minimum, "max": maximum, "abs": absolute,
    "matmul": matmul, "reshape": reshape, "concat": concat,
    "cumsum": cumsum, "mean": mean, "take_rows": take_rows,
    "transpose": transpose, "stop_gradient": stop_gradient,
}


def record(op_kind: str, inputs, **kwargs) -> TapeNode:
    """Name-dispatched op construction; `inputs` is the positional list."""
    try:
        op = _OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op_kind {op_kind!r}") from None
    if op_kind == "concat":
        return op(inputs, **kwargs)
    return op(*inputs, **kwargs)


def _topo_order(root: TapeNode, blocked: frozenset) -> list[TapeNode]:
    """Ancestors of root in topological order (parents before children).

    Traversal does not descend past stop-flagged nodes or past nodes whose
    variable name is in `blocked`.
    """
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.stop or (node.name is not None and node.name in blocked):
            continue
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: TapeNode, wrt, treat_constant=()) -> GradientBundle:
    """Gradients of a scalar root with respect to a set of variables.

    Args:
        root: scalar-valued node.
        wrt: iterable of variable nodes or variable names to collect.
        treat_constant: variable names blocked for this pass only, in
            addition to permanently stop-flagged nodes.

    Each node is visited exactly once; two calls over the same record
    produce identical bundles.
    """
    if root.value.size != 1:
        raise ValueError("backward requires a scalar root")
    want = {n.name if isinstance(n, TapeNode) else n for n in wrt}
    blocked = frozenset(n.name if isinstance(n, TapeNode) else n
                        for n in treat_constant)

    order = _topo_order(root, blocked)
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    named: dict[str, np.ndarray] = {}

    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.name is not None and node.name in want and node.name not in blocked:
            named[node.name] = named.get(node.name, 0) + g
        if node.stop or (node.name is not None and node.name in blocked):
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib

    return GradientBundle(named)
