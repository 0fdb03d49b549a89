"""Dense float64 tensors with reverse-mode automatic differentiation.

Graphs are built eagerly: every operation computes its value immediately and
records a node (operation kind, input nodes, static parameters).  A graph is
meant to live for one forward/backward cycle and be discarded.  Nodes are
immutable once created; re-evaluation with fresh input bindings goes through
an environment dict and never mutates the recorded values, so distinct graphs
are safe to use from distinct threads.

There is no implicit broadcasting.  The only shape-mixing operations are the
explicitly named ones (scalar multiply, bias_add, scale_rows, repeat), each
with a hand-written, auditable gradient.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715

_node_ids = itertools.count()


class Tensor:
    """A float64 array plus the graph record that produced it.

    Leaf tensors have kind ``"leaf"`` and no inputs.  ``requires_grad`` marks
    leaves that should receive gradients; it propagates to every node that
    consumes them.
    """

    __slots__ = ("id", "kind", "inputs", "params", "data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, _kind="leaf", _inputs=(), _params=None):
        self.id = next(_node_ids)
        self.kind = _kind
        self.inputs = tuple(_inputs)
        self.params = _params
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        if _kind == "leaf" and not np.all(np.isfinite(self.data)):
            raise ValueError(f"non-finite values in leaf tensor {self._label()}")

    def _label(self):
        if self.name is not None:
            return f"{self.kind}#{self.id}({self.name})"
        return f"{self.kind}#{self.id}"

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor({self._label()}, shape={self.data.shape})"

    # Operator sugar; the named module functions are the primary API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_tensor(self, key)


def tensor(data, requires_grad=False, name=None):
    """Create a leaf tensor."""
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(data):
    """Leaf tensor that never receives gradients."""
    if isinstance(data, Tensor):
        return data
    return Tensor(data, requires_grad=False)


def parameter(data, name):
    """Named trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(kind, inputs, params=None):
    inputs = tuple(_as_tensor(x) for x in inputs)
    out = _forward(kind, params, [t.data for t in inputs], node=None)
    t = Tensor(out, _kind=kind, _inputs=inputs, _params=params)
    t.requires_grad = any(i.requires_grad for i in inputs)
    return t


# ---------------------------------------------------------------------------
# forward kernels


def _shape_error(kind, node, detail):
    label = node._label() if node is not None else kind
    return ValueError(f"shape mismatch in node {label}: {detail}")


def _forward(kind, params, xs, node):
    """Apply one operation kind to raw arrays. Shared by eager build and re-evaluation."""
    if kind == "add" or kind == "sub" or kind == "mul":
        a, b = xs
        if a.shape != b.shape:
            raise _shape_error(kind, node, f"{a.shape} vs {b.shape}")
        return a + b if kind == "add" else (a - b if kind == "sub" else a * b)
    if kind == "scale":
        return xs[0] * params
    if kind == "smul":
        s, a = xs
        if s.shape != ():
            raise _shape_error(kind, node, f"scalar operand has shape {s.shape}")
        return s * a
    if kind == "matmul":
        a, b = xs
        if a.ndim < 2 or b.ndim < 2:
            raise _shape_error(kind, node, f"{a.shape} @ {b.shape}: operands must be >= 2-d")
        if a.shape[-1] != b.shape[-2]:
            raise _shape_error(kind, node, f"{a.shape} @ {b.shape}")
        if a.ndim != b.ndim and b.ndim != 2:
            raise _shape_error(kind, node, f"{a.shape} @ {b.shape}: batch dims must match or rhs be 2-d")
        if a.ndim == b.ndim and a.shape[:-2] != b.shape[:-2]:
            raise _shape_error(kind, node, f"{a.shape} @ {b.shape}: batch dims must match exactly")
        return np.matmul(a, b)
    if kind == "bias_add":
        x, b = xs
        if b.shape != x.shape[-1:]:
            raise _shape_error(kind, node, f"bias {b.shape} for input {x.shape}")
        return x + b
    if kind == "scale_rows":
        x, s = xs
        if s.shape != x.shape[:-1]:
            raise _shape_error(kind, node, f"row scales {s.shape} for input {x.shape}")
        return x * s[..., None]
    if kind == "reshape":
        return xs[0].reshape(params)
    if kind == "transpose":
        return np.ascontiguousarray(np.transpose(xs[0], params))
    if kind == "slice":
        return xs[0][params].copy()
    if kind == "concat":
        return np.concatenate(xs, axis=params)
    if kind == "repeat":
        n, axis = params
        if xs[0].shape[axis] != 1:
            raise _shape_error(kind, node, f"repeat axis {axis} of {xs[0].shape} must have size 1")
        return np.repeat(xs[0], n, axis=axis)
    if kind == "sum":
        return xs[0].sum(axis=params)
    if kind == "demean":
        return xs[0] - xs[0].mean(axis=params, keepdims=True)
    if kind == "frob_sq":
        return np.asarray((xs[0] * xs[0]).sum())
    if kind == "sqrt":
        if np.any(xs[0] < 0):
            raise ValueError(f"sqrt of negative value in node {node._label() if node else kind}")
        return np.sqrt(xs[0])
    if kind == "reciprocal":
        return 1.0 / xs[0]
    if kind == "gelu":
        x = xs[0]
        return 0.5 * x * (1.0 + np.tanh(_GELU_K * (x + _GELU_C * x**3)))
    if kind == "softmax":
        x = xs[0]
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    if kind == "layer_norm":
        x = xs[0]
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(var + params)
    raise ValueError(f"unknown operation kind {kind!r}")


# ---------------------------------------------------------------------------
# vector-Jacobian products


def _swap(a):
    return np.swapaxes(a, -1, -2)


def _vjp(node, g):
    """Gradients of the node's inputs given the output gradient g."""
    kind, params = node.kind, node.params
    xs = [t.data for t in node.inputs]
    if kind == "add":
        return g, g
    if kind == "sub":
        return g, -g
    if kind == "mul":
        return g * xs[1], g * xs[0]
    if kind == "scale":
        return (g * params,)
    if kind == "smul":
        s, a = xs
        return np.asarray((g * a).sum()), s * g
    if kind == "matmul":
        a, b = xs
        da = np.matmul(g, _swap(b))
        if b.ndim == 2 and a.ndim > 2:
            db = np.matmul(a.reshape(-1, a.shape[-1]).T, g.reshape(-1, g.shape[-1]))
        else:
            db = np.matmul(_swap(a), g)
        return da, db
    if kind == "bias_add":
        x, b = xs
        return g, g.reshape(-1, b.shape[0]).sum(axis=0)
    if kind == "scale_rows":
        x, s = xs
        return g * s[..., None], (g * x).sum(axis=-1)
    if kind == "reshape":
        return (g.reshape(xs[0].shape),)
    if kind == "transpose":
        return (np.transpose(g, np.argsort(params)),)
    if kind == "slice":
        dx = np.zeros_like(xs[0])
        dx[params] = g
        return (dx,)
    if kind == "concat":
        sizes = [x.shape[params] for x in xs]
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=params))
    if kind == "repeat":
        _, axis = params
        return (g.sum(axis=axis, keepdims=True),)
    if kind == "sum":
        if params is None:
            return (np.full(xs[0].shape, g),)
        return (np.repeat(np.expand_dims(g, params), xs[0].shape[params], axis=params),)
    if kind == "demean":
        return (g - g.mean(axis=params, keepdims=True),)
    if kind == "frob_sq":
        return (2.0 * g * xs[0],)
    if kind == "sqrt":
        # Subgradient 0 where the input is exactly 0 (kink of the norm).
        out = node.data
        return (np.where(xs[0] > 0, g / (2.0 * np.where(out > 0, out, 1.0)), 0.0),)
    if kind == "reciprocal":
        return (-g / (xs[0] * xs[0]),)
    if kind == "gelu":
        x = xs[0]
        u = _GELU_K * (x + _GELU_C * x**3)
        t = np.tanh(u)
        du = _GELU_K * (1.0 + 3.0 * _GELU_C * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)
    if kind == "softmax":
        y = node.data
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
    if kind == "layer_norm":
        x = xs[0]
        eps = params
        n = x.shape[-1]
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        y = (x - mu) * inv
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)
    raise ValueError(f"no gradient for operation kind {kind!r}")


# ---------------------------------------------------------------------------
# public operations


def add(a, b):
    return _node("add", (a, b))


def sub(a, b):
    return _node("sub", (a, b))


def mul(a, b):
    """Elementwise product of same-shape tensors."""
    return _node("mul", (a, b))


def scale(a, c):
    """Multiply by a python float constant."""
    return _node("scale", (a,), float(c))


def smul(s, a):
    """Multiply tensor a by a 0-d tensor s (gradient flows into both)."""
    return _node("smul", (s, a))


def matmul(a, b):
    """Matrix product; 2-d x 2-d, batched with equal leading dims, or N-d x 2-d."""
    return _node("matmul", (a, b))


def bias_add(x, b):
    """Add a vector b to the last axis of x (gradient of b sums leading axes)."""
    return _node("bias_add", (x, b))


def scale_rows(x, s):
    """Multiply x[..., i, :] by s[..., i]."""
    return _node("scale_rows", (x, s))


def reshape(x, shape):
    return _node("reshape", (x,), tuple(shape))


def transpose(x, axes):
    return _node("transpose", (x,), tuple(axes))


def slice_tensor(x, key):
    """Basic slicing with python slices (no steps); ints keep the axis collapsed."""
    if not isinstance(key, tuple):
        key = (key,)
    x = _as_tensor(x)
    norm = []
    squeeze = []
    for axis, k in enumerate(key):
        if isinstance(k, int):
            if k < 0:
                k += x.data.shape[axis]
            norm.append(slice(k, k + 1))
            squeeze.append(axis)
        elif isinstance(k, slice):
            if k.step not in (None, 1):
                raise ValueError("slice steps are not supported")
            norm.append(k)
        else:
            raise TypeError(f"unsupported index {k!r}")
    out = _node("slice", (x,), tuple(norm))
    if squeeze:
        new_shape = [s for axis, s in enumerate(out.data.shape) if axis not in squeeze]
        out = reshape(out, new_shape)
    return out


def concat(parts, axis=0):
    return _node("concat", tuple(parts), int(axis))


def repeat(x, n, axis):
    """Repeat a size-1 axis n times (gradient sums back over the copies)."""
    return _node("repeat", (x,), (int(n), int(axis)))


def reduce_sum(x, axis=None):
    """Sum over one axis, or over everything (axis=None -> 0-d result)."""
    return _node("sum", (x,), axis)


def demean(x, axis):
    """Subtract the mean along one axis (kept broadcast internally)."""
    return _node("demean", (x,), int(axis))


def frobenius_sq(x):
    """Sum of squared entries as a 0-d tensor."""
    return _node("frob_sq", (x,))


def sqrt(x):
    return _node("sqrt", (x,))


def reciprocal(x):
    return _node("reciprocal", (x,))


def gelu(x):
    """GELU in the tanh approximation."""
    return _node("gelu", (x,))


def softmax(x):
    """Softmax over the last axis."""
    return _node("softmax", (x,))


def layer_norm(x, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance (no affine terms)."""
    return _node("layer_norm", (x,), float(eps))


# ---------------------------------------------------------------------------
# graphs


class Graph:
    """Topologically ordered view of the nodes reachable from a root tensor."""

    def __init__(self, root):
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.id in seen:
                continue
            seen.add(node.id)
            stack.append((node, True))
            for inp in node.inputs:
                if inp.id not in seen:
                    stack.append((inp, False))
        self.root = root
        self.nodes = tuple(order)
        self.leaves = {n.name: n for n in order if n.kind == "leaf" and n.name is not None}


def evaluate(graph, inputs=None):
    """Recompute the root value, optionally rebinding named leaf tensors.

    ``inputs`` maps leaf names to arrays (or tensors).  Bound arrays must match
    the recorded leaf shapes and be finite.  The recorded graph is not mutated.
    """
    if not inputs:
        return graph.root.data.copy()
    for name in inputs:
        if name not in graph.leaves:
            raise KeyError(f"graph has no leaf named {name!r}")
    env = {}
    for node in graph.nodes:
        if node.kind == "leaf":
            if node.name is not None and node.name in inputs:
                val = inputs[node.name]
                val = val.data if isinstance(val, Tensor) else np.asarray(val, dtype=np.float64)
                if val.shape != node.data.shape:
                    raise _shape_error("leaf", node, f"bound {val.shape}, expected {node.data.shape}")
                if not np.all(np.isfinite(val)):
                    raise ValueError(f"non-finite input bound to {node._label()}")
                env[node.id] = val
            else:
                env[node.id] = node.data
        else:
            env[node.id] = _forward(node.kind, node.params, [env[i.id] for i in node.inputs], node)
    return env[graph.root.id].copy()


def backward(graph):
    """Gradient of the (scalar) root with respect to every named requires_grad leaf."""
    root = graph.root
    if root.data.shape != ():
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    grads = {root.id: np.ones(())}
    for node in reversed(graph.nodes):
        g = grads.pop(node.id, None)
        if g is None or node.kind == "leaf" or not node.requires_grad:
            if node.kind == "leaf" and g is not None:
                grads[node.id] = g
            continue
        for inp, gi in zip(node.inputs, _vjp(node, g)):
            if not inp.requires_grad:
                continue
            if inp.id in grads:
                grads[inp.id] = grads[inp.id] + gi
            else:
                grads[inp.id] = gi
    out = {}
    for node in graph.nodes:
        if node.kind == "leaf" and node.requires_grad and node.name is not None:
            out[node.name] = Tensor(grads.get(node.id, np.zeros(node.data.shape)))
    return out


def gradients(root, params):
    """Backward pass returning gradients for exactly the given parameters.

    ``params`` is a dict name -> Tensor (or a list of named tensors).  Tensors
    the root does not depend on get zero gradients.
    """
    if not isinstance(params, dict):
        params = {p.name: p for p in params}
    graph = Graph(root)
    got = backward(graph)
    out = {}
    for name, p in params.items():
        if name in got:
            out[name] = got[name]
        else:
            out[name] = Tensor(np.zeros(p.data.shape))
    return out
