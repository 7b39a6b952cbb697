"""A small replayable reverse-mode differentiation engine over numpy arrays.

A :class:`Graph` records primitive operations in insertion order.  Each node's
value is computed eagerly when it is inserted (so shapes are known
immediately), and the recorded graph can be re-evaluated later with new leaf
values, which is what :func:`grad_check` relies on.

Example::

    g = Graph()
    x = g.leaf("x", np.ones((2, 2)))
    loss = ad.sum(x * x)
    value, grads = eval_and_grad(g, loss)
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from . import linalg


class Op:
    name = "op"

    @staticmethod
    def forward(attrs, *xs):
        raise NotImplementedError

    @staticmethod
    def backward(attrs, g, out, *xs):
        raise NotImplementedError


class Node:
    __slots__ = ("graph", "index", "op", "parents", "attrs", "value", "name")
    # make numpy defer to the reflected operators, e.g. ndarray @ Node
    __array_ufunc__ = None

    def __init__(self, graph, index, op, parents, attrs, value, name=None):
        self.graph = graph
        self.index = index
        self.op = op
        self.parents = parents
        self.attrs = attrs
        self.value = value
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return slice_(self, key)

    def __repr__(self):
        return f"Node({self.index}, {self.op.name}, shape={self.shape})"


class Leaf(Op):
    name = "leaf"


class Graph:
    """Ordered record of primitive operations with named leaves."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: dict[str, Node] = {}
        self.trainable: set[str] = set()

    def leaf(self, name, value, trainable=True) -> Node:
        if name in self.leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        value = np.array(value, dtype=np.float64)
        node = Node(self, len(self.nodes), Leaf, (), {}, value, name)
        self.nodes.append(node)
        self.leaves[name] = node
        if trainable:
            self.trainable.add(name)
        return node

    def constant(self, value) -> Node:
        value = np.array(value, dtype=np.float64)
        node = Node(self, len(self.nodes), Leaf, (), {}, value)
        self.nodes.append(node)
        return node

    def _insert(self, op, parents, attrs):
        value = op.forward(attrs, *(p.value for p in parents))
        node = Node(self, len(self.nodes), op, tuple(parents), attrs, value)
        self.nodes.append(node)
        return node

    def evaluate(self, bindings=None) -> list:
        """Replay the graph with leaves overridden by ``bindings``; returns all node values."""
        bindings = bindings or {}
        unknown = set(bindings) - set(self.leaves)
        if unknown:
            raise KeyError(f"unknown leaves {sorted(unknown)}")
        values = []
        for node in self.nodes:
            if node.op is Leaf:
                if node.name is not None and node.name in bindings:
                    v = np.asarray(bindings[node.name], dtype=np.float64)
                    if v.shape != node.value.shape:
                        raise ShapeMismatch(f"leaf {node.name}: {v.shape} != {node.value.shape}")
                    values.append(v)
                else:
                    values.append(node.value)
            else:
                values.append(node.op.forward(node.attrs, *(values[p.index] for p in node.parents)))
        return values


def _lift(x, graph):
    if isinstance(x, Node):
        return x
    return graph.constant(x)


def _graph_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    raise TypeError("at least one operand must be a graph node")


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _apply(op, *xs, **attrs):
    # without any graph operand the op is plain numpy evaluation
    if not any(isinstance(x, Node) for x in xs):
        return op.forward(attrs, *(np.asarray(x, dtype=np.float64) for x in xs))
    g = _graph_of(*xs)
    parents = [_lift(x, g) for x in xs]
    for p in parents:
        if p.graph is not g:
            raise ValueError("operands belong to different graphs")
    return g._insert(op, parents, attrs)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- primitives

class Add(Op):
    name = "add"

    @staticmethod
    def forward(attrs, a, b):
        return a + b

    @staticmethod
    def backward(attrs, g, out, a, b):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


class Sub(Op):
    name = "subtract"

    @staticmethod
    def forward(attrs, a, b):
        return a - b

    @staticmethod
    def backward(attrs, g, out, a, b):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)


class Mul(Op):
    name = "multiply"

    @staticmethod
    def forward(attrs, a, b):
        return a * b

    @staticmethod
    def backward(attrs, g, out, a, b):
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


class Div(Op):
    name = "divide"

    @staticmethod
    def forward(attrs, a, b):
        return a / b

    @staticmethod
    def backward(attrs, g, out, a, b):
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape)


class Scale(Op):
    name = "scale"

    @staticmethod
    def forward(attrs, a):
        return attrs["c"] * a

    @staticmethod
    def backward(attrs, g, out, a):
        return (attrs["c"] * g,)


class MatMul(Op):
    name = "matmul"

    @staticmethod
    def forward(attrs, a, b):
        return np.matmul(a, b)

    @staticmethod
    def backward(attrs, g, out, a, b):
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Transpose(Op):
    name = "transpose"

    @staticmethod
    def forward(attrs, a):
        return np.swapaxes(a, -1, -2)

    @staticmethod
    def backward(attrs, g, out, a):
        return (np.swapaxes(g, -1, -2),)


class Permute(Op):
    name = "permute"

    @staticmethod
    def forward(attrs, a):
        return np.transpose(a, attrs["axes"])

    @staticmethod
    def backward(attrs, g, out, a):
        return (np.transpose(g, np.argsort(attrs["axes"])),)


class Reshape(Op):
    name = "reshape"

    @staticmethod
    def forward(attrs, a):
        return np.reshape(a, attrs["shape"])

    @staticmethod
    def backward(attrs, g, out, a):
        return (np.reshape(g, a.shape),)


class Relu(Op):
    name = "relu"

    @staticmethod
    def forward(attrs, a):
        return np.maximum(a, 0.0)

    @staticmethod
    def backward(attrs, g, out, a):
        return (g * (a > 0.0),)


class Exp(Op):
    name = "exp"

    @staticmethod
    def forward(attrs, a):
        return np.exp(a)

    @staticmethod
    def backward(attrs, g, out, a):
        return (g * out,)


class Clip(Op):
    name = "clip"

    @staticmethod
    def forward(attrs, a):
        return np.clip(a, attrs["lo"], attrs["hi"])

    @staticmethod
    def backward(attrs, g, out, a):
        return (g * ((a >= attrs["lo"]) & (a <= attrs["hi"])),)


class Inverse(Op):
    name = "matrix-inverse"

    @staticmethod
    def forward(attrs, a):
        return linalg.inverse(a)

    @staticmethod
    def backward(attrs, g, out, a):
        return (-out.T @ g @ out.T,)


class Cholesky(Op):
    """Upper factor ``R`` of ``S = R^T R``."""
    name = "cholesky-factor"

    @staticmethod
    def forward(attrs, s):
        return linalg.cholesky_factor(s)

    @staticmethod
    def backward(attrs, g, out, s):
        # With L = R^T lower and Lbar = g^T:  Sbar = L^-T Phi(L^T Lbar) L^-1, symmetrized.
        n = out.shape[0]
        if n == 0:
            return (np.zeros((0, 0)),)
        lower = out.T
        phi = np.tril(lower.T @ g.T)
        phi[np.diag_indices(n)] *= 0.5
        tmp = linalg.solve_upper(out, phi)
        sbar = linalg.solve_upper(out, tmp.T).T
        return (0.5 * (sbar + sbar.T),)


class BlockDiagRepeat(Op):
    """``kron(I_n, a)`` for a square matrix ``a``."""
    name = "block-diag-repeat"

    @staticmethod
    def forward(attrs, a):
        return np.kron(np.eye(attrs["n"]), a)

    @staticmethod
    def backward(attrs, g, out, a):
        c = a.shape[0]
        n = attrs["n"]
        blocks = g.reshape(n, c, n, c)
        return (np.einsum("icid->cd", blocks),)


class Concat(Op):
    name = "concatenate"

    @staticmethod
    def forward(attrs, *xs):
        return np.concatenate(xs, axis=attrs["axis"])

    @staticmethod
    def backward(attrs, g, out, *xs):
        bounds = np.cumsum([x.shape[attrs["axis"]] for x in xs])[:-1]
        return tuple(np.split(g, bounds, axis=attrs["axis"]))


class Slice(Op):
    name = "slice"

    @staticmethod
    def forward(attrs, a):
        return a[attrs["key"]]

    @staticmethod
    def backward(attrs, g, out, a):
        ga = np.zeros_like(a)
        np.add.at(ga, attrs["key"], g)
        return (ga,)


class Sum(Op):
    name = "reduce-sum"

    @staticmethod
    def forward(attrs, a):
        return np.sum(a, axis=attrs["axis"])

    @staticmethod
    def backward(attrs, g, out, a):
        axis = attrs["axis"]
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)


class SoftmaxCrossEntropy(Op):
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    name = "softmax-cross-entropy"

    @staticmethod
    def forward(attrs, logits):
        labels = attrs["labels"]
        z = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        return np.asarray(np.mean(lse - z[np.arange(len(labels)), labels]))

    @staticmethod
    def backward(attrs, g, out, logits):
        labels = attrs["labels"]
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(len(labels)), labels] -= 1.0
        return (g * p / len(labels),)


def _windows(x, ell):
    """(B, c, N) -> (B, N, ell*c); block j of row k holds x[:, :, k - ell + 1 + j]."""
    b, c, n = x.shape
    xp = np.concatenate([np.zeros((b, c, ell - 1)), x], axis=2)
    win = np.lib.stride_tricks.sliding_window_view(xp, ell, axis=2)  # (B, c, N, ell)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1)).reshape(b, n, ell * c)


class CausalConv(Op):
    """Front-padded 1D convolution with stacked kernel ``Chat = [K_{l-1} ... K_1 K_0]``."""
    name = "causal-conv"

    @staticmethod
    def forward(attrs, chat, x):
        win = _windows(x, attrs["ell"])
        return np.swapaxes(win @ chat.T, 1, 2)

    @staticmethod
    def backward(attrs, g, out, chat, x):
        ell = attrs["ell"]
        b, c, n = x.shape
        gt = np.swapaxes(g, 1, 2)  # (B, N, c_out)
        win = _windows(x, ell)
        gchat = np.einsum("bno,bnw->ow", gt, win)
        gwin = (gt @ chat).reshape(b, n, ell, c)
        gxp = np.zeros((b, c, n + ell - 1))
        for j in range(ell):
            gxp[:, :, j:j + n] += np.swapaxes(gwin[:, :, j, :], 1, 2)
        return gchat, gxp[:, :, ell - 1:]


class AvgPool(Op):
    name = "avg-pool"

    @staticmethod
    def forward(attrs, x):
        s = attrs["size"]
        b, c, n = x.shape
        return x.reshape(b, c, n // s, s).mean(axis=3)

    @staticmethod
    def backward(attrs, g, out, x):
        s = attrs["size"]
        return (np.repeat(g, s, axis=2) / s,)


class MaxPool(Op):
    name = "max-pool"

    @staticmethod
    def forward(attrs, x):
        s = attrs["size"]
        b, c, n = x.shape
        return x.reshape(b, c, n // s, s).max(axis=3)

    @staticmethod
    def backward(attrs, g, out, x):
        s = attrs["size"]
        b, c, n = x.shape
        win = x.reshape(b, c, n // s, s)
        idx = win.argmax(axis=3)
        gx = np.zeros_like(win)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=3)
        return (gx.reshape(b, c, n),)


# ---------------------------------------------------------------- functional API

def add(a, b):
    return _binary(Add, a, b)


def sub(a, b):
    return _binary(Sub, a, b)


def mul(a, b):
    return _binary(Mul, a, b)


def div(a, b):
    return _binary(Div, a, b)


def _binary(op, a, b):
    _check_broadcast(_val(a), _val(b))
    return _apply(op, a, b)


def scale(a, c):
    return _apply(Scale, a, c=float(c))


def matmul(a, b):
    av, bv = _val(a), _val(b)
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeMismatch(f"matmul {av.shape} @ {bv.shape}")
    return _apply(MatMul, a, b)


def transpose(a):
    return _apply(Transpose, a)


def permute(a, axes):
    return _apply(Permute, a, axes=tuple(axes))


def reshape(a, shape):
    return _apply(Reshape, a, shape=tuple(shape))


def relu(a):
    return _apply(Relu, a)


def exp(a):
    return _apply(Exp, a)


def clip(a, lo, hi):
    return _apply(Clip, a, lo=float(lo), hi=float(hi))


def inverse(a):
    v = _val(a)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ShapeMismatch(f"inverse of non-square {v.shape}")
    return _apply(Inverse, a)


def cholesky(s):
    v = _val(s)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ShapeMismatch(f"cholesky of non-square {v.shape}")
    return _apply(Cholesky, s)


def block_diag_repeat(a, n):
    v = _val(a)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ShapeMismatch(f"block_diag_repeat needs a square matrix, got {v.shape}")
    return _apply(BlockDiagRepeat, a, n=int(n))


def concatenate(xs, axis=0):
    return _apply(Concat, *xs, axis=axis)


def slice_(a, key):
    return _apply(Slice, a, key=key)


def sum(a, axis=None):  # noqa: A001 - mirrors numpy
    return _apply(Sum, a, axis=axis)


def softmax_cross_entropy(logits, labels):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    lv = _val(logits)
    if lv.ndim != 2 or lv.shape[0] != len(labels):
        raise ShapeMismatch(f"logits {lv.shape} vs {len(labels)} labels")
    if np.any(labels < 0) or np.any(labels >= lv.shape[1]):
        raise ValueError("label out of range")
    return _apply(SoftmaxCrossEntropy, logits, labels=labels)


def causal_conv(chat, x, ell):
    cv, xv = _val(chat), _val(x)
    if xv.ndim != 3 or cv.ndim != 2 or cv.shape[1] != ell * xv.shape[1]:
        raise ShapeMismatch(f"conv kernel {cv.shape} with ell={ell} on input {xv.shape}")
    return _apply(CausalConv, chat, x, ell=int(ell))


def avg_pool(x, size):
    if _val(x).shape[2] % size:
        raise ShapeMismatch(f"pool size {size} does not divide length {_val(x).shape[2]}")
    return _apply(AvgPool, x, size=int(size))


def max_pool(x, size):
    if _val(x).shape[2] % size:
        raise ShapeMismatch(f"pool size {size} does not divide length {_val(x).shape[2]}")
    return _apply(MaxPool, x, size=int(size))


# ---------------------------------------------------------------- differentiation

def backward(graph: Graph, loss: Node, values=None) -> list:
    values = values if values is not None else [n.value for n in graph.nodes]
    if values[loss.index].size != 1:
        raise ShapeMismatch(f"loss must be scalar, got shape {loss.shape}")
    grads = [None] * (loss.index + 1)
    grads[loss.index] = np.ones_like(values[loss.index])
    for node in reversed(graph.nodes[:loss.index + 1]):
        g = grads[node.index]
        if g is None or node.op is Leaf:
            continue
        ins = [values[p.index] for p in node.parents]
        for p, gp in zip(node.parents, node.op.backward(node.attrs, g, values[node.index], *ins)):
            if grads[p.index] is None:
                grads[p.index] = gp
            else:
                grads[p.index] = grads[p.index] + gp
    return grads


def eval_and_grad(graph: Graph, loss: Node, bindings=None):
    """Return ``(loss value, {leaf name: gradient})`` for every trainable leaf."""
    values = graph.evaluate(bindings) if bindings else None
    grads = backward(graph, loss, values)
    value = float((values or [n.value for n in graph.nodes])[loss.index])
    out = {}
    for name in sorted(graph.trainable):
        node = graph.leaves[name]
        g = grads[node.index] if node.index < len(grads) else None
        out[name] = np.zeros_like(node.value) if g is None else g
    return value, out


def grad_check(graph: Graph, loss: Node, h=1e-6) -> float:
    """Max over trainable scalars of ``|g_ad - g_fd| / max(1, |g_fd|)`` (central differences)."""
    if not 1e-7 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-7, 1e-4]")
    _, grads = eval_and_grad(graph, loss)
    worst = 0.0
    for name in sorted(graph.trainable):
        base = graph.leaves[name].value
        flat = base.ravel()
        for i in range(flat.size):
            up = flat.copy()
            dn = flat.copy()
            up[i] += h
            dn[i] -= h
            f_up = graph.evaluate({name: up.reshape(base.shape)})[loss.index]
            f_dn = graph.evaluate({name: dn.reshape(base.shape)})[loss.index]
            fd = (float(f_up) - float(f_dn)) / (2 * h)
            ad = float(grads[name].ravel()[i])
            worst = max(worst, abs(ad - fd) / max(1.0, abs(fd)))
    return worst
