"""Dense float64 tensors with tape-based reverse-mode differentiation.

The kernel is deliberately small: explicit shapes, no broadcasting beyond
matrix-vector products, scalar-tensor scaling and elementwise maps. Every
operation validates that its output is finite and raises NumericalError
otherwise, so NaN/Inf never propagate silently.

Gradients are only recorded while a Tape is active:

    with Tape() as tape:
        loss = ...            # ops on tensors with requires_grad=True
        tape.backward(loss)   # accumulates into .grad (numpy arrays)

A tape and the tensors flowing through it form a single-owner unit; the
active-tape stack is thread-local, so independent runs may execute in
parallel threads or processes without shared mutable state.
"""

from __future__ import annotations

import threading

import numpy as np

from ..errors import NumericalError, ShapeError

_state = threading.local()


def _tape_stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables gradient recording."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A dense float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"non-finite values in tensor {name or '<unnamed>'}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __getstate__(self):
        return (self.data, self.requires_grad, self.name)

    def __setstate__(self, state):
        self.data, self.requires_grad, self.name = state
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


class Tape:
    """Recorded operations in execution order, replayed in reverse for backward.

    Reverse execution order is a valid reverse topological order of the
    recorded graph; tensors that never participated keep zero gradients.
    """

    def __init__(self):
        self._ops: list = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self) -> int:
        return len(self._ops)

    def record(self, backward_fn) -> None:
        self._ops.append(backward_fn)

    def backward(self, loss: Tensor) -> None:
        if loss.shape != ():
            raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones((), dtype=np.float64)
        for fn in reversed(self._ops):
            fn()

    def clear(self) -> None:
        self._ops.clear()


def _check_finite(op: str, arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values produced by op '{op}'")
    return arr


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite gradient for tensor {t.name or '<unnamed>'}")
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    _check_finite(op, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    stack = _tape_stack()
    if out.requires_grad and stack and _grad_enabled():

        def _step():
            if out.grad is not None:
                backward_fn(out.grad)

        stack[-1].record(_step)
    return out


def constant(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def zeros(shape, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad=requires_grad, name=name)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make("add", a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make("sub", a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make("mul", a.data * b.data, (a, b), backward)


def affine(a: Tensor, scale: float = 1.0, shift: float = 0.0) -> Tensor:
    """scale * a + shift with python-float constants."""

    def backward(g):
        _accumulate(a, g * scale)

    return _make("affine", scale * a.data + shift, (a,), backward)


def smul(a: Tensor, s: Tensor) -> Tensor:
    """Scale tensor a by the scalar tensor s."""
    if s.shape != ():
        raise ShapeError(f"smul: scale must be scalar, got {s.shape}")

    def backward(g):
        _accumulate(a, g * s.data)
        _accumulate(s, np.sum(g * a.data))

    return _make("smul", a.data * s.data, (a, s), backward)


def sdiv(a: Tensor, s: Tensor) -> Tensor:
    """Divide tensor a by the scalar tensor s."""
    if s.shape != ():
        raise ShapeError(f"sdiv: divisor must be scalar, got {s.shape}")

    def backward(g):
        _accumulate(a, g / s.data)
        _accumulate(s, np.sum(-g * a.data) / (s.data * s.data))

    return _make("sdiv", a.data / s.data, (a, s), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for (m,n)@(n,), (m,n)@(n,k) and (n,)@(n,k)."""
    if a.data.ndim == 2 and b.data.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

        def backward(g):
            _accumulate(a, np.outer(g, b.data))
            _accumulate(b, a.data.T @ g)

    elif a.data.ndim == 2 and b.data.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

        def backward(g):
            _accumulate(a, g @ b.data.T)
            _accumulate(b, a.data.T @ g)

    elif a.data.ndim == 1 and b.data.ndim == 2:
        if a.shape[0] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

        def backward(g):
            _accumulate(a, b.data @ g)
            _accumulate(b, np.outer(a.data, g))

    else:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
    return _make("matmul", a.data @ b.data, (a, b), backward)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: need equal 1-d shapes, got {a.shape}, {b.shape}")

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make("dot", np.dot(a.data, b.data), (a, b), backward)


def outer(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"outer: need 1-d operands, got {a.shape}, {b.shape}")

    def backward(g):
        _accumulate(a, g @ b.data)
        _accumulate(b, g.T @ a.data)

    return _make("outer", np.outer(a.data, b.data), (a, b), backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = np.empty_like(a.data)
    pos = a.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ex = np.exp(a.data[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make("sigmoid", out_data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make("tanh", out_data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        _accumulate(a, g * mask)

    return _make("relu", a.data * mask, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _make("exp", out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make("log", out_data, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def backward(g):
        _accumulate(a, g * sign)

    return _make("absolute", np.abs(a.data), (a,), backward)


def power(a: Tensor, p: float) -> Tensor:
    out_data = a.data**p

    def backward(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _make("power", out_data, (a,), backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; gradient passes only through unclamped entries."""
    inside = (a.data > lo) & (a.data < hi)

    def backward(g):
        _accumulate(a, g * inside)

    return _make("clamp", np.clip(a.data, lo, hi), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    return _make("sum_all", np.asarray(np.sum(a.data)), (a,), backward)


def row_sum(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"row_sum: need a matrix, got {a.shape}")

    def backward(g):
        _accumulate(a, np.repeat(g[:, None], a.shape[1], axis=1))

    return _make("row_sum", a.data.sum(axis=1), (a,), backward)


def concat(parts: list[Tensor]) -> Tensor:
    """Concatenate scalars and 1-d tensors into one vector."""
    if not parts:
        raise ShapeError("concat: empty input")
    flats = [np.atleast_1d(p.data) for p in parts]
    sizes = [f.shape[0] for f in flats]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            piece = g[lo:hi]
            _accumulate(part, piece.reshape(part.shape))

    return _make("concat", np.concatenate(flats), tuple(parts), backward)


def get_item(a: Tensor, i: int) -> Tensor:
    if a.data.ndim != 1:
        raise ShapeError(f"get_item: need a vector, got {a.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[i] = float(g)
        _accumulate(a, full)

    return _make("get_item", np.asarray(a.data[i]), (a,), backward)


def get_row(a: Tensor, i: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"get_row: need a matrix, got {a.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[i, :] = g
        _accumulate(a, full)

    return _make("get_row", a.data[i, :].copy(), (a,), backward)


def get_col(a: Tensor, j: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"get_col: need a matrix, got {a.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, j] = g
        _accumulate(a, full)

    return _make("get_col", a.data[:, j].copy(), (a,), backward)


def gather_rows(a: Tensor, idx: list[int]) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows: need a matrix, got {a.shape}")
    idx_arr = np.asarray(idx, dtype=np.intp)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx_arr, g)
        _accumulate(a, full)

    return _make("gather_rows", a.data[idx_arr, :].copy(), (a,), backward)


def stack_cols(vecs: list[Tensor]) -> Tensor:
    """Stack equal-length vectors as the columns of a matrix."""
    if not vecs:
        raise ShapeError("stack_cols: empty input")
    m = vecs[0].shape[0]
    for v in vecs:
        if v.shape != (m,):
            raise ShapeError(f"stack_cols: inconsistent shapes {v.shape} vs ({m},)")

    def backward(g):
        for j, v in enumerate(vecs):
            _accumulate(v, g[:, j])

    return _make("stack_cols", np.stack([v.data for v in vecs], axis=1), tuple(vecs), backward)


def scatter_symmetric(values: Tensor, pairs: list[tuple[int, int]], n: int) -> Tensor:
    """Place values[e] at both (u, v) and (v, u) of an n-by-n matrix.

    Pairs must be distinct undirected edges without self-loops.
    """
    if values.data.ndim != 1 or values.shape[0] != len(pairs):
        raise ShapeError(f"scatter_symmetric: {values.shape} values for {len(pairs)} pairs")
    out_data = np.zeros((n, n), dtype=np.float64)
    for e, (u, v) in enumerate(pairs):
        out_data[u, v] = values.data[e]
        out_data[v, u] = values.data[e]

    def backward(g):
        gv = np.empty(len(pairs), dtype=np.float64)
        for e, (u, v) in enumerate(pairs):
            gv[e] = g[u, v] + g[v, u]
        _accumulate(values, gv)

    return _make("scatter_symmetric", out_data, (values,), backward)
