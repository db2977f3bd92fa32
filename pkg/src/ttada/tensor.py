"""Dense 2-D tensors with reverse-mode automatic differentiation.

Values are float64 numpy arrays in row-major order. Operations executed
inside a ``with Tape():`` block are recorded onto that tape; ``backward``
replays the tape in exact reverse execution order and accumulates
gradients into every tensor that requires them. There is no broadcasting
beyond scalar-with-tensor: all shapes are explicit, which keeps the
backward pass auditable.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, ValidationError

__all__ = [
    "Tensor",
    "Tape",
    "matmul",
    "transpose",
    "softmax_rows",
    "mean_rows",
    "l2_normalize_rows",
    "concat_rows",
    "gather_rows",
    "log_elem",
    "tanh_elem",
    "mul_elem",
    "add",
    "scale",
    "neg",
    "sum_all",
    "clamp_min",
    "backward",
    "finite_diff_grad",
    "max_relative_error",
]


class Tensor:
    """A 2-D float64 value, optionally carrying a gradient buffer.

    Scalars are stored as 1x1, vectors as 1xN. ``grad`` is populated by
    ``backward`` and has the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        self.data = _as_matrix(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal fast path: takes ownership of a fresh float64 array.
        t = object.__new__(cls)
        t.data = _as_matrix(arr)
        t.requires_grad = requires_grad
        t.grad = None
        return t

    @classmethod
    def zeros(cls, rows: int, cols: int, requires_grad: bool = False) -> "Tensor":
        return cls._wrap(np.zeros((rows, cols)), requires_grad)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _as_matrix(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim == 2:
        return arr
    raise ShapeError(f"tensors are 2-D; got shape {tuple(arr.shape)}")


# ---------------------------------------------------------------------------
# Tape

# One adaptation run owns one tape on one logical thread; distinct runs get
# distinct tapes, so the active-tape stack is thread-local.
_LOCAL = threading.local()

# A backward rule maps the output gradient to (input, contribution) pairs.
BackwardRule = Callable[[np.ndarray], list[tuple[Tensor, np.ndarray]]]


class Tape:
    """Ordered record of executed operations (a Wengert list)."""

    __slots__ = ("_records",)

    def __init__(self):
        self._records: list[tuple[Tensor, BackwardRule]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self._records)


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _emit(out: Tensor, rule: BackwardRule) -> Tensor:
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape._records.append((out, rule))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires-grad tensor reachable from ``loss``.

    Repeated calls without ``zero_grad`` accumulate. Tensors with
    ``requires_grad == False`` are never touched.
    """
    if loss.data.size != 1:
        raise ValidationError(f"backward: loss must be scalar, got shape {loss.shape}")
    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    touched: dict[int, Tensor] = {id(loss): loss}
    for out, rule in reversed(tape._records):
        out_grad = flows.get(id(out))
        if out_grad is None:
            continue
        for inp, contrib in rule(out_grad):
            if not inp.requires_grad:
                continue
            key = id(inp)
            if key in flows:
                flows[key] = flows[key] + contrib
            else:
                flows[key] = contrib
                touched[key] = inp
    for key, tensor in touched.items():
        if not tensor.requires_grad:
            continue
        flow = flows[key]
        tensor.grad = flow.copy() if tensor.grad is None else tensor.grad + flow


# ---------------------------------------------------------------------------
# Operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} vs {b.shape}")
    out = Tensor._wrap(a.data @ b.data, a.requires_grad or b.requires_grad)

    def rule(g: np.ndarray):
        contribs = []
        if a.requires_grad:
            contribs.append((a, g @ b.data.T))
        if b.requires_grad:
            contribs.append((b, a.data.T @ g))
        return contribs

    return _emit(out, rule)


def transpose(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.ascontiguousarray(a.data.T), a.requires_grad)

    def rule(g: np.ndarray):
        return [(a, np.ascontiguousarray(g.T))]

    return _emit(out, rule)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax, computed with max-subtraction for stability."""
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax_rows: input contains non-finite entries")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor._wrap(s, a.requires_grad)

    def rule(g: np.ndarray):
        dot = np.sum(g * s, axis=1, keepdims=True)
        return [(a, s * (g - dot))]

    return _emit(out, rule)


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean over rows, yielding a 1xC tensor."""
    r = a.shape[0]
    if r == 0:
        raise ValidationError("mean_rows: empty input (0 rows)")
    out = Tensor._wrap(a.data.mean(axis=0, keepdims=True), a.requires_grad)

    def rule(g: np.ndarray):
        return [(a, np.tile(g / r, (r, 1)))]

    return _emit(out, rule)


def l2_normalize_rows(a: Tensor, min_norm: float = 1e-12) -> Tensor:
    norms = np.sqrt(np.sum(a.data * a.data, axis=1, keepdims=True))
    small = np.where(norms.reshape(-1) < min_norm)[0]
    if small.size:
        raise NumericError(
            f"l2_normalize_rows: row {int(small[0])} has norm below {min_norm:g}"
        )
    y = a.data / norms
    out = Tensor._wrap(y, a.requires_grad)

    def rule(g: np.ndarray):
        dot = np.sum(g * y, axis=1, keepdims=True)
        return [(a, (g - y * dot) / norms)]

    return _emit(out, rule)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows: column counts differ: {a.shape} vs {b.shape}")
    r1 = a.shape[0]
    out = Tensor._wrap(
        np.concatenate([a.data, b.data], axis=0), a.requires_grad or b.requires_grad
    )

    def rule(g: np.ndarray):
        contribs = []
        if a.requires_grad:
            contribs.append((a, g[:r1]))
        if b.requires_grad:
            contribs.append((b, g[r1:]))
        return contribs

    return _emit(out, rule)


def gather_rows(a: Tensor, indices: Sequence[int]) -> Tensor:
    """Select rows of ``a`` by index; backward scatter-adds into ``a``."""
    idx = np.asarray(indices, dtype=np.intp).reshape(-1)
    if idx.size == 0:
        raise ValidationError("gather_rows: empty index list")
    if idx.min(initial=0) < 0 or idx.max(initial=0) >= a.shape[0]:
        raise ValidationError(
            f"gather_rows: index out of range for {a.shape[0]} rows: {idx.tolist()}"
        )
    out = Tensor._wrap(a.data[idx].copy(), a.requires_grad)

    def rule(g: np.ndarray):
        scattered = np.zeros_like(a.data)
        np.add.at(scattered, idx, g)
        return [(a, scattered)]

    return _emit(out, rule)


def log_elem(a: Tensor) -> Tensor:
    bad = np.argwhere(a.data <= 0.0)
    if bad.size:
        i, j = (int(v) for v in bad[0])
        raise NumericError(f"log_elem: non-positive entry at index ({i}, {j})")
    out = Tensor._wrap(np.log(a.data), a.requires_grad)

    def rule(g: np.ndarray):
        return [(a, g / a.data)]

    return _emit(out, rule)


def tanh_elem(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor._wrap(y, a.requires_grad)

    def rule(g: np.ndarray):
        return [(a, g * (1.0 - y * y))]

    return _emit(out, rule)


def mul_elem(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul_elem: shapes differ: {a.shape} vs {b.shape}")
    out = Tensor._wrap(a.data * b.data, a.requires_grad or b.requires_grad)

    def rule(g: np.ndarray):
        contribs = []
        if a.requires_grad:
            contribs.append((a, g * b.data))
        if b.requires_grad:
            contribs.append((b, g * a.data))
        return contribs

    return _emit(out, rule)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ: {a.shape} vs {b.shape}")
    out = Tensor._wrap(a.data + b.data, a.requires_grad or b.requires_grad)

    def rule(g: np.ndarray):
        contribs = []
        if a.requires_grad:
            contribs.append((a, g))
        if b.requires_grad:
            contribs.append((b, g))
        return contribs

    return _emit(out, rule)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out = Tensor._wrap(a.data * factor, a.requires_grad)

    def rule(g: np.ndarray):
        return [(a, g * factor)]

    return _emit(out, rule)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor._wrap(np.array([[a.data.sum()]]), a.requires_grad)

    def rule(g: np.ndarray):
        return [(a, np.full_like(a.data, g[0, 0]))]

    return _emit(out, rule)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max with ``floor``; subgradient 0 below the floor."""
    mask = a.data >= floor
    out = Tensor._wrap(np.maximum(a.data, floor), a.requires_grad)

    def rule(g: np.ndarray):
        return [(a, g * mask)]

    return _emit(out, rule)


# ---------------------------------------------------------------------------
# Verification helpers


def finite_diff_grad(f: Callable[[Tensor], "Tensor | float"], x: Tensor, eps: float = 1e-5) -> Tensor:
    """Central-difference gradient estimate of a scalar function of ``x``."""
    probe = Tensor(x.data.copy())
    grad = np.zeros_like(x.data)
    it = np.nditer(x.data, flags=["multi_index"])
    for _ in it:
        ij = it.multi_index
        base = probe.data[ij]
        probe.data[ij] = base + eps
        fp = _scalar(f(probe))
        probe.data[ij] = base - eps
        fm = _scalar(f(probe))
        probe.data[ij] = base
        grad[ij] = (fp - fm) / (2.0 * eps)
    return Tensor._wrap(grad, False)


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        return value.item()
    return float(value)


def max_relative_error(analytic, reference, floor: float = 1e-6) -> float:
    """Max absolute deviation, relative to the reference gradient's scale.

    The denominator is floored so that a near-zero reference gradient does
    not turn finite-difference noise into a spurious blow-up.
    """
    a = analytic.data if isinstance(analytic, Tensor) else np.asarray(analytic)
    r = reference.data if isinstance(reference, Tensor) else np.asarray(reference)
    if a.shape != r.shape:
        raise ShapeError(f"max_relative_error: shapes differ: {a.shape} vs {r.shape}")
    denom = max(float(np.max(np.abs(r))), floor)
    return float(np.max(np.abs(a - r))) / denom
