"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2-D ``float64`` array wrapped in a :class:`Tensor`.  Leaves
that need gradients are registered on a :class:`Tape`; each primitive records
its inputs together with a closure implementing the vector-Jacobian product.
:meth:`Tape.backward` replays the record in reverse.

Reductions that scatter into rows (``edge_scatter_sum`` and the backward of
``edge_gather``) multiply by a CSR incidence matrix whose columns are the
edges; each output row accumulates its edges in ascending edge order, so
results are reproducible bit for bit.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ConfigError, DimensionError, DomainError, EdgeIndexError, NonFiniteError, StateError, TrainingError

LOG_EPS = 1e-12

# Finiteness assertion on every op output; disable with JSDMP_CHECK_FINITE=0.
CHECK_FINITE = os.environ.get("JSDMP_CHECK_FINITE", "1") != "0"

Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A dense matrix, optionally attached to a tape.

    1-D input is stored as a column vector and scalars as ``1x1``.
    """

    __slots__ = ("values", "grad", "requires_grad", "node_id", "tape", "name")

    def __init__(self, values, *, requires_grad=False, tape=None, node_id=None, name=None):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got array of shape {arr.shape}")
        if requires_grad and (tape is None or node_id is None):
            raise StateError("a tensor requiring gradients must be created through a Tape")
        self.values = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = tape
        self.node_id = node_id
        self.name = name

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def item(self) -> float:
        if self.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


class _Node:
    __slots__ = ("op", "out_id", "inputs", "backward")

    def __init__(self, op, out_id, inputs, backward):
        self.op = op
        self.out_id = out_id
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Records operations for a single forward/backward pass.

    Parameters are registered by name with :meth:`param`.  A tape supports
    exactly one call to :meth:`backward`; build a new one for the next step.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._params: dict[str, Tensor] = {}
        self._next_id = 0
        self._consumed = False

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id - 1

    def param(self, name: str, values) -> Tensor:
        if name in self._params:
            raise ConfigError(f"parameter {name!r} registered twice on the same tape")
        t = Tensor(values, requires_grad=True, tape=self, node_id=self._new_id(), name=name)
        self._params[name] = t
        return t

    def params(self, arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
        return {name: self.param(name, arr) for name, arr in arrays.items()}

    @property
    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def __len__(self):
        return len(self._nodes)

    def _record(self, op: str, values: np.ndarray, inputs, backward: Backward) -> Tensor:
        if self._consumed:
            raise StateError("tape already consumed by backward(); start a new tape")
        out = Tensor(values, requires_grad=True, tape=self, node_id=self._new_id())
        self._nodes.append(_Node(op, out.node_id, tuple(inputs), backward))
        return out

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Return ``{name: gradient}`` for every registered parameter."""
        if self._consumed:
            raise StateError("backward() already called on this tape")
        if loss.shape != (1, 1):
            raise DimensionError(f"loss must be a 1x1 tensor, got shape {loss.shape}")
        if loss.tape is not self or not self._nodes:
            raise StateError("loss was not produced by a forward pass recorded on this tape")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones((1, 1))}
        for node in reversed(self._nodes):
            g = grads.pop(node.out_id, None)
            if g is None:
                continue
            for t, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                prev = grads.get(t.node_id)
                grads[t.node_id] = gi if prev is None else prev + gi
        self._consumed = True
        # recorded tensors point back at the tape; dropping the graph breaks
        # the cycle so a step's intermediates are freed without waiting for gc
        self._nodes = []
        out = {}
        for name, p in self._params.items():
            g = grads.get(p.node_id)
            p.grad = np.zeros_like(p.values) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
            out[name] = p.grad
        return out


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    return tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op: str, values: np.ndarray, inputs: Sequence[Tensor], backward: Backward) -> Tensor:
    if CHECK_FINITE and not math.isfinite(values.sum()) and not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{op} produced non-finite values")
    tape = None
    for t in inputs:
        if t.requires_grad:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise StateError(f"{op}: inputs belong to different tapes")
    if tape is None:
        return Tensor(values)
    return tape._record(op, values, inputs, backward)


def _same_shape(op: str, a: Tensor, b: Tensor):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# dense algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values

    def bwd(g):
        return (g @ bv.T if a.requires_grad else None, av.T @ g if b.requires_grad else None)

    return _result("matmul", av @ bv, (a, b), bwd)


def transpose(x: Tensor) -> Tensor:
    return _result("transpose", x.values.T.copy(), (x,), lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _result("add", a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _result("sub", a.values - b.values, (a, b), lambda g: (g, -g))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("hadamard", a, b)
    av, bv = a.values, b.values
    return _result("hadamard", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(x: Tensor, c: float) -> Tensor:
    return _result("scale", x.values * c, (x,), lambda g: (g * c,))


def add_scalar(x: Tensor, c: float) -> Tensor:
    return _result("add_scalar", x.values + c, (x,), lambda g: (g,))


def scale_by(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``x`` by the 1x1 tensor ``s``."""
    if s.shape != (1, 1):
        raise DimensionError(f"scale_by: scalar operand must be 1x1, got {s.shape}")
    xv, sv = x.values, s.values[0, 0]
    return _result("scale_by", xv * sv, (x, s), lambda g: (g * sv, np.array([[np.sum(g * xv)]])))


def row_scale(x: Tensor, v: Tensor) -> Tensor:
    """Multiply row ``i`` of ``x`` by ``v[i, 0]``."""
    if v.shape != (x.rows, 1):
        raise DimensionError(f"row_scale: expected column of length {x.rows}, got {v.shape}")
    xv, vv = x.values, v.values
    return _result("row_scale", xv * vv, (x, v), lambda g: (g * vv, np.sum(g * xv, axis=1, keepdims=True)))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add the row vector ``b`` (1 x cols) to every row of ``x``."""
    if b.shape != (1, x.cols):
        raise DimensionError(f"add_bias: expected bias of shape (1, {x.cols}), got {b.shape}")
    return _result("add_bias", x.values + b.values, (x, b), lambda g: (g, g.sum(axis=0, keepdims=True)))


def row_sum(x: Tensor) -> Tensor:
    n = x.cols
    return _result("row_sum", x.values.sum(axis=1, keepdims=True), (x,), lambda g: (np.repeat(g, n, axis=1),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result("sum", np.array([[x.values.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),))


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.rows:
        raise DimensionError(f"slice_rows: invalid range [{start}, {stop}) for {x.rows} rows")
    shape = x.shape

    def bwd(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _result("slice_rows", x.values[start:stop].copy(), (x,), bwd)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.values)
    return _result("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    """Natural log with arguments clamped to at least ``LOG_EPS``.

    Negative arguments are rejected; zeros are clamped.
    """
    xv = x.values
    if np.any(xv < 0):
        bad = np.argwhere(xv < 0)[0]
        raise DomainError(f"log of negative value {xv[tuple(bad)]!r} at index {tuple(int(i) for i in bad)}")
    xc = np.maximum(xv, LOG_EPS)
    live = xv >= LOG_EPS
    return _result("log", np.log(xc), (x,), lambda g: (g * live / xc,))


def relu(x: Tensor) -> Tensor:
    xv = x.values
    return _result("relu", np.maximum(xv, 0.0), (x,), lambda g: (g * (xv > 0),))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.values)
    return _result("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def power(x: Tensor, p: float) -> Tensor:
    xv = x.values
    if np.any(xv <= 0):
        raise DomainError(f"power({p}) requires strictly positive inputs")
    y = xv**p
    return _result("power", y, (x,), lambda g: (g * p * y / xv,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    xv = x.values
    inside = (xv >= lo) & (xv <= hi)
    return _result("clip", np.clip(xv, lo, hi), (x,), lambda g: (g * inside,))


_UNARY = {"exp": exp, "log": log, "relu": relu, "sigmoid": sigmoid}
_BINARY = {"add": add, "hadamard": hadamard}


def elementwise(op: str, *operands: Tensor, c: float | None = None) -> Tensor:
    """Dispatch by name: exp, log, relu, sigmoid, scale (needs ``c``), add, hadamard."""
    if op in _UNARY:
        (x,) = operands
        return _UNARY[op](x)
    if op in _BINARY:
        a, b = operands
        return _BINARY[op](a, b)
    if op == "scale":
        if c is None:
            raise ConfigError("elementwise('scale') needs the constant c")
        (x,) = operands
        return scale(x, c)
    raise ConfigError(f"unknown elementwise op {op!r}")


def row_log_softmax(x: Tensor) -> Tensor:
    z = x.values - x.values.max(axis=1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    s = np.exp(y)

    def bwd(g):
        return (g - s * g.sum(axis=1, keepdims=True),)

    return _result("row_log_softmax", y, (x,), bwd)


def row_softmax(x: Tensor) -> Tensor:
    z = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        return (s * (g - np.sum(g * s, axis=1, keepdims=True)),)

    return _result("row_softmax", s, (x,), bwd)


# ---------------------------------------------------------------------------
# edge-indexed primitives


def _check_index(op: str, index: np.ndarray, n: int) -> np.ndarray:
    index = np.asarray(index)
    if index.ndim != 1 or (index.size and not np.issubdtype(index.dtype, np.integer)):
        raise EdgeIndexError(f"{op}: edge index must be a 1-D integer array")
    bad = np.flatnonzero((index < 0) | (index >= n))
    if bad.size:
        e = int(bad[0])
        raise EdgeIndexError(f"{op}: edge {e} has endpoint {int(index[e])} outside [0, {n})")
    return index.astype(np.int64, copy=False)


_PLANS: list[tuple[np.ndarray, int, sp.csr_matrix]] = []


def scatter_matrix(index: np.ndarray, n: int) -> sp.csr_matrix:
    """``n x len(index)`` 0/1 matrix with a one at ``(index[e], e)``.

    Cached per index array (by identity) since graphs reuse their edge arrays.
    """
    for arr, size, mat in _PLANS:
        if arr is index and size == n:
            return mat
    m = index.shape[0]
    order = np.argsort(index, kind="stable")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(index, minlength=n), out=indptr[1:])
    mat = sp.csr_matrix((np.ones(m), order, indptr), shape=(n, m))
    _PLANS.append((index, n, mat))
    if len(_PLANS) > 16:
        del _PLANS[0]
    return mat


def edge_gather(x: Tensor, index) -> Tensor:
    """Row ``e`` of the result is row ``index[e]`` of ``x``."""
    n = x.rows
    index = _check_index("edge_gather", index, n)

    def bwd(g):
        return (scatter_matrix(index, n) @ g,)

    return _result("edge_gather", x.values[index], (x,), bwd)


def edge_scatter_sum(messages: Tensor, index, n: int) -> Tensor:
    """Row ``i`` of the result sums the message rows with ``index[e] == i``."""
    index = _check_index("edge_scatter_sum", index, n)
    if index.shape[0] != messages.rows:
        raise DimensionError(f"edge_scatter_sum: {messages.rows} messages but {index.shape[0]} indices")
    out = scatter_matrix(index, n) @ messages.values
    return _result("edge_scatter_sum", out, (messages,), lambda g: (g[index],))


def spmm(matrix: sp.spmatrix, x: Tensor) -> Tensor:
    """Constant sparse matrix times a tensor."""
    if matrix.shape[1] != x.rows:
        raise DimensionError(f"spmm: cannot multiply {matrix.shape} by {x.shape}")
    mt = matrix.T.tocsr()
    return _result("spmm", np.asarray(matrix @ x.values), (x,), lambda g: (np.asarray(mt @ g),))


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a seeded generator")
    mask = (rng.random(x.shape, dtype=np.float32) >= rate) / (1.0 - rate)
    return _result("dropout", x.values * mask, (x,), lambda g: (g * mask,))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over the rows selected by ``mask``."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ConfigError("cross-entropy mask selects no nodes")
    labels = np.asarray(labels)
    z = logits.values[idx]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = labels[idx]
    loss = -logp[np.arange(idx.size), y].mean()
    shape = logits.shape

    def bwd(g):
        p = np.exp(logp)
        p[np.arange(idx.size), y] -= 1.0
        full = np.zeros(shape)
        full[idx] = p * (g[0, 0] / idx.size)
        return (full,)

    return _result("softmax_cross_entropy", np.array([[loss]]), (logits,), bwd)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    no_decay: frozenset = frozenset()
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], frozen=()) -> None:
    """Bias-corrected Adam with decoupled weight decay; updates ``params`` in place.

    Weight decay shrinks a parameter before the moment update and is skipped
    for names in ``state.no_decay``.  Names in ``frozen`` are left untouched.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        if name in frozen:
            continue
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if state.weight_decay and name not in state.no_decay:
            p -= state.lr * state.weight_decay * p
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
