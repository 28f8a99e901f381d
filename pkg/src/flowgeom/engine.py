"""Reverse-mode automatic differentiation on dense float64 arrays.

A :class:`Graph` is an append-only tape of eagerly evaluated operation
records.  Node ids grow in execution order, so every node's inputs have
strictly smaller ids and a single descending sweep over ids propagates
adjoints exactly once per node.  All values are ``numpy`` arrays of
``float64``; the op vocabulary is the small fixed set needed to express
coupling flows, their Jacobian-vector products, and the training losses.

Gradients are deterministic: the same recorded tape always produces
bitwise-identical adjoints because accumulation happens in a fixed order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

OPS = (
    "add", "sub", "mul", "div", "matmul",
    "relu", "relu_mask_stop_gradient",
    "exp", "log", "sin", "cos", "square",
    "sum", "mean", "l2_norm_sq",
    "concat", "slice", "scale_by_constant",
)

_LEAF_OPS = ("const", "param")


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""

    def __init__(self, op: str, shapes):
        self.op = op
        self.shapes = tuple(shapes)
        super().__init__(f"op '{op}' cannot combine shapes {self.shapes}")


class Parameter:
    """A named trainable array with a same-shaped gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, value, name: str):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Node:
    __slots__ = ("nid", "op", "inputs", "value", "vjp", "param", "needs")

    def __init__(self, nid, op, inputs, value, vjp=None, param=None, needs=False):
        self.nid = nid
        self.op = op
        self.inputs = inputs          # ids of input nodes, all < nid
        self.value = value            # cached primal, float64 ndarray
        self.vjp = vjp                # grad -> sequence of per-input grads
        self.param = param            # Parameter for "param" leaves
        self.needs = needs            # True iff some Parameter is an ancestor


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Graph:
    """Append-only tape; records ops eagerly and replays them backwards."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._param_ids: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def value(self, nid: int) -> np.ndarray:
        return self._nodes[nid].value

    def _append(self, op, inputs, value, vjp=None, param=None, needs=False) -> int:
        nid = len(self._nodes)
        self._nodes.append(Node(nid, op, inputs, value, vjp, param, needs))
        return nid

    # -- leaves ------------------------------------------------------------

    def constant(self, value) -> "Var":
        v = np.asarray(value, dtype=np.float64)
        return Var(self, self._append("const", (), v))

    def param(self, p: Parameter) -> "Var":
        nid = self._param_ids.get(id(p))
        if nid is None:
            nid = self._append("param", (), p.value, param=p, needs=True)
            self._param_ids[id(p)] = nid
        return Var(self, nid)

    # -- recording ---------------------------------------------------------

    def record(self, op: str, inputs: Sequence[int], **kw) -> int:
        """Append one primitive op; primal is computed immediately.

        ``inputs`` are node ids already on this tape.  Extra arguments:
        ``axis`` for sum/mean/concat, ``c`` for scale_by_constant and
        ``idx`` (an integer index array over the last axis) for slice.
        """
        if op not in OPS:
            raise ValueError(f"unknown op {op!r}")
        vals = [self._nodes[i].value for i in inputs]
        needs = tuple(self._nodes[i].needs for i in inputs)
        try:
            # Non-finite values propagate silently; structured overflow
            # reporting is the caller's job (it knows the layer).
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                return self._record(op, inputs, vals, needs, kw)
        except ShapeError:
            raise
        except ValueError as exc:
            raise ShapeError(op, tuple(v.shape for v in vals)) from exc

    def _record(self, op, inputs, vals, needs, kw) -> int:
        if op == "add":
            a, b = vals
            out = a + b
            vjp = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
        elif op == "sub":
            a, b = vals
            out = a - b
            vjp = lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape))
        elif op == "mul":
            a, b = vals
            na, nb = needs
            out = a * b
            vjp = lambda g: (
                _unbroadcast(g * b, a.shape) if na else None,
                _unbroadcast(g * a, b.shape) if nb else None,
            )
        elif op == "div":
            a, b = vals
            out = a / b
            vjp = lambda g: (
                _unbroadcast(g / b, a.shape),
                _unbroadcast(-g * a / (b * b), b.shape),
            )
        elif op == "matmul":
            a, b = vals
            if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
                raise ShapeError(op, (a.shape, b.shape))
            na, nb = needs
            out = a @ b
            vjp = lambda g: (g @ b.T if na else None, a.T @ g if nb else None)
        elif op == "relu":
            (a,) = vals
            out = np.maximum(a, 0.0)
            vjp = lambda g: (g * (a > 0.0),)
        elif op == "relu_mask_stop_gradient":
            # ReLU derivative as data: constant under differentiation so
            # hand-built JVPs remain first-order differentiable.
            (a,) = vals
            out = (a > 0.0).astype(np.float64)
            vjp = lambda g: (np.zeros_like(a),)
        elif op == "exp":
            (a,) = vals
            res = np.exp(a)
            out = res
            vjp = lambda g: (g * res,)
        elif op == "log":
            (a,) = vals
            out = np.log(a)
            vjp = lambda g: (g / a,)
        elif op == "sin":
            (a,) = vals
            out = np.sin(a)
            vjp = lambda g: (g * np.cos(a),)
        elif op == "cos":
            (a,) = vals
            out = np.cos(a)
            vjp = lambda g: (-g * np.sin(a),)
        elif op == "square":
            (a,) = vals
            out = a * a
            vjp = lambda g: (2.0 * a * g,)
        elif op == "sum":
            (a,) = vals
            axis = kw.get("axis")
            out = np.asarray(a.sum(axis=axis))
            if axis is None:
                vjp = lambda g: (np.broadcast_to(g, a.shape),)
            else:
                vjp = lambda g: (np.broadcast_to(np.expand_dims(g, axis), a.shape),)
        elif op == "mean":
            (a,) = vals
            axis = kw.get("axis")
            out = np.asarray(a.mean(axis=axis))
            count = a.size if axis is None else a.shape[axis]
            if axis is None:
                vjp = lambda g: (np.broadcast_to(g / count, a.shape),)
            else:
                vjp = lambda g: (
                    np.broadcast_to(np.expand_dims(g / count, axis), a.shape),
                )
        elif op == "l2_norm_sq":
            (a,) = vals
            out = np.asarray((a * a).sum())
            vjp = lambda g: (2.0 * a * g,)
        elif op == "concat":
            axis = kw.get("axis", -1)
            out = np.concatenate(vals, axis=axis)
            sizes = [v.shape[axis] for v in vals]
            splits = np.cumsum(sizes)[:-1]
            vjp = lambda g: tuple(np.split(g, splits, axis=axis))
        elif op == "slice":
            (a,) = vals
            idx = np.asarray(kw["idx"], dtype=np.intp)
            axis = kw.get("axis", -1)
            if axis not in (-1, 0):
                raise ValueError("slice supports axis -1 or 0")
            out = np.take(a, idx, axis=axis)
            unique = np.unique(idx).size == idx.size

            def vjp(g, a=a, idx=idx, axis=axis, unique=unique):
                full = np.zeros_like(a)
                where = (..., idx) if axis == -1 else (idx,)
                if unique:
                    full[where] = g
                else:
                    np.add.at(full, where, g)
                return (full,)
        elif op == "scale_by_constant":
            (a,) = vals
            c = float(kw["c"])
            out = c * a
            vjp = lambda g: (c * g,)
        else:  # pragma: no cover - exhaustive above
            raise ValueError(op)

        out = np.asarray(out, dtype=np.float64)
        node_needs = any(needs) and op != "relu_mask_stop_gradient"
        return self._append(op, tuple(inputs), out, vjp, needs=node_needs)

    # -- backward ----------------------------------------------------------

    def backward(self, root) -> None:
        """Accumulate d(root)/d(param) into every Parameter on the tape.

        ``root`` must be scalar (shape product 1).  Repeated calls keep
        accumulating; the sweep visits ids in strictly decreasing order.
        """
        root_id = root.nid if isinstance(root, Var) else int(root)
        root_node = self._nodes[root_id]
        if root_node.value.size != 1:
            raise ShapeError("backward", (root_node.value.shape,))

        grads: list[np.ndarray | None] = [None] * (root_id + 1)
        grads[root_id] = np.ones_like(root_node.value)
        nodes = self._nodes
        for nid in range(root_id, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = nodes[nid]
            if node.param is not None:
                node.param.grad += g
                continue
            if not node.needs:
                continue
            for iid, gi in zip(node.inputs, node.vjp(g)):
                if gi is None or not nodes[iid].needs:
                    continue
                prev = grads[iid]
                grads[iid] = gi if prev is None else prev + gi


class Var:
    """Thin handle to a tape node with arithmetic sugar."""

    __slots__ = ("graph", "nid")

    def __init__(self, graph: Graph, nid: int):
        self.graph = graph
        self.nid = nid

    @property
    def value(self) -> np.ndarray:
        return self.graph.value(self.nid)

    @property
    def shape(self):
        return self.value.shape

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            return other
        return self.graph.constant(other)

    def _rec(self, op, *others, **kw) -> "Var":
        ids = (self.nid,) + tuple(o.nid for o in others)
        return Var(self.graph, self.graph.record(op, ids, **kw))

    def __add__(self, other):
        return self._rec("add", self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._rec("sub", self._lift(other))

    def __rsub__(self, other):
        return self._lift(other)._rec("sub", self)

    def __mul__(self, other):
        return self._rec("mul", self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._rec("div", self._lift(other))

    def __rtruediv__(self, other):
        return self._lift(other)._rec("div", self)

    def __matmul__(self, other):
        return self._rec("matmul", other)

    def __neg__(self):
        return self._rec("scale_by_constant", c=-1.0)

    def relu(self):
        return self._rec("relu")

    def relu_mask(self):
        return self._rec("relu_mask_stop_gradient")

    def exp(self):
        return self._rec("exp")

    def log(self):
        return self._rec("log")

    def sin(self):
        return self._rec("sin")

    def cos(self):
        return self._rec("cos")

    def square(self):
        return self._rec("square")

    def sum(self, axis=None):
        return self._rec("sum", axis=axis)

    def mean(self, axis=None):
        return self._rec("mean", axis=axis)

    def l2_norm_sq(self):
        return self._rec("l2_norm_sq")

    def scale(self, c: float):
        return self._rec("scale_by_constant", c=float(c))

    def take(self, idx):
        """Select columns (last-axis gather) by integer index array."""
        return self._rec("slice", idx=idx)

    def take_rows(self, idx):
        """Select rows (first-axis gather) by integer index array."""
        return self._rec("slice", idx=idx, axis=0)


def concat(parts: Sequence[Var], axis: int = -1) -> Var:
    g = parts[0].graph
    return Var(g, g.record("concat", [p.nid for p in parts], axis=axis))


def grad_check(
    f: Callable[[Graph], Var],
    params: Sequence[Parameter],
    h: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` builds a scalar output on a fresh graph from the current values of
    ``params``; it must be deterministic.  The relative error per coordinate
    is ``|autodiff - central| / max(1, |central|)``.
    """
    for p in params:
        p.zero_grad()
    g = Graph()
    out = f(g)
    g.backward(out)
    analytic = [p.grad.copy() for p in params]

    def evaluate() -> float:
        gg = Graph()
        return float(f(gg).value)

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = evaluate()
            flat[i] = orig - h
            lo = evaluate()
            flat[i] = orig
            fd = (hi - lo) / (2.0 * h)
            rel = abs(ana.reshape(-1)[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, rel)
    return worst
