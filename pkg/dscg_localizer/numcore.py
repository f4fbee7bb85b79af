"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the primitives the message-passing network needs live here: affine maps,
elementwise arithmetic, the two normalisations, row gather/scatter for edge
messages and per-head reductions. Values are numpy float64 arrays with at most
two axes; a :class:`GradTape` made active with ``with GradTape() as tape``
records every primitive that touches a watched tensor.
"""

from __future__ import annotations

from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .constants import LAYER_NORM_EPS, SCALE_NORM_EPS
from .errors import ContractError, DimensionError, NonFiniteError

ArrayLike = np.ndarray | Sequence[float] | float

_ACTIVE_TAPE: ContextVar[Optional["GradTape"]] = ContextVar("dscg_active_tape", default=None)


class Tensor:
    """Immutable float64 value of rank 0, 1 or 2."""

    __slots__ = ("_value", "name")

    def __init__(self, value: ArrayLike, name: Optional[str] = None) -> None:
        array = np.array(value, dtype=np.float64)
        self._value = _validated(array)
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        tensor = cls.__new__(cls)
        tensor._value = _validated(np.asarray(array, dtype=np.float64))
        tensor.name = None
        return tensor

    @property
    def value(self) -> np.ndarray:
        return self._value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._value.shape

    @property
    def ndim(self) -> int:
        return self._value.ndim

    @property
    def size(self) -> int:
        return int(self._value.size)

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self._value.reshape(-1)

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self._value.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self._value.copy()

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"


def _validated(array: np.ndarray) -> np.ndarray:
    if array.ndim > 2:
        raise DimensionError(f"tensors have at most two axes, got shape {array.shape}")
    if any(extent == 0 for extent in array.shape):
        raise DimensionError(f"tensor extents must be positive, got shape {array.shape}")
    if not np.isfinite(array).all():
        raise NonFiniteError("tensor contains NaN or Inf")
    if array.flags.writeable:
        if array.base is not None or not array.flags.owndata:
            array = array.copy()
        array.flags.writeable = False
    return array


@dataclass(slots=True)
class TapeEntry:
    op: str
    output: Tensor
    inputs: Tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class GradTape:
    """Ordered record of primitive applications.

    Entries are appended in execution order, which is a topological order of
    the computation; :func:`backward` replays them in reverse. A tape is
    single-writer: use one per worker thread.
    """

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []
        self.watched: Dict[str, Tensor] = {}
        self.relu_inputs: List[np.ndarray] = []
        self._tracked: set[int] = set()
        self._tokens: List[object] = []

    def __enter__(self) -> "GradTape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def watch(self, name: str, tensor: Tensor) -> Tensor:
        if name in self.watched:
            raise ContractError(f"parameter '{name}' is already watched")
        tensor.name = tensor.name or name
        self.watched[name] = tensor
        self._tracked.add(id(tensor))
        return tensor

    def is_tracked(self, tensor: Tensor) -> bool:
        return id(tensor) in self._tracked

    def record(
        self,
        op: str,
        output: Tensor,
        inputs: Tuple[Tensor, ...],
        vjp: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]],
    ) -> None:
        if not any(id(item) in self._tracked for item in inputs):
            return
        self.entries.append(TapeEntry(op=op, output=output, inputs=inputs, vjp=vjp))
        self._tracked.add(id(output))

    def relu_pattern(self) -> np.ndarray:
        """Sign pattern of every ReLU pre-activation seen so far."""
        if not self.relu_inputs:
            return np.zeros(0, dtype=bool)
        return np.concatenate([pre.reshape(-1) > 0 for pre in self.relu_inputs])

    def relu_margin(self) -> float:
        """Smallest absolute ReLU pre-activation seen so far."""
        if not self.relu_inputs:
            return float("inf")
        return float(min(np.abs(pre).min() for pre in self.relu_inputs))

    def __len__(self) -> int:
        return len(self.entries)


def current_tape() -> Optional[GradTape]:
    return _ACTIVE_TAPE.get()


def _emit(
    op: str,
    value: np.ndarray,
    inputs: Tuple[Tensor, ...],
    vjp: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]],
) -> Tensor:
    out = Tensor._wrap(value)
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        tape.record(op, out, inputs, vjp)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# primitives


def affine(W: Tensor, b: Optional[Tensor], x: Tensor) -> Tensor:
    """``W x + b`` for a vector ``x`` or row-wise for a matrix of rows ``x``."""
    if W.ndim != 2:
        raise DimensionError(f"affine: weight must be a matrix, got shape {W.shape}")
    m, n = W.shape
    if b is not None and b.shape != (m,):
        raise DimensionError(f"affine: bias shape {b.shape} does not match output width {m}")
    if x.ndim not in (1, 2) or x.shape[-1] != n:
        raise DimensionError(f"affine: input shape {x.shape} does not match weight {W.shape}")
    Wv, xv = W.value, x.value
    # einsum without BLAS keeps each output row independent of how many rows are stacked
    out = np.einsum("...n,mn->...m", xv, Wv, optimize=False)
    if b is not None:
        out = out + b.value
    matrix_input = x.ndim == 2

    def vjp(g: np.ndarray):
        gW = g.T @ xv if matrix_input else np.outer(g, xv)
        gx = g @ Wv
        if b is None:
            return gW, gx
        gb = g.sum(axis=0) if matrix_input else g
        return gW, gb, gx

    inputs = (W, x) if b is None else (W, b, x)
    return _emit("affine", out, inputs, vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _emit("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _emit("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _emit("scale", a.value * factor, (a,), lambda g: (g * factor,))


def relu(a: Tensor) -> Tensor:
    pre = a.value
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        tape.relu_inputs.append(pre)
    mask = pre > 0
    # subgradient 0 at the kink
    return _emit("relu", np.where(mask, pre, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    if ndim not in (1, 2) or any(t.ndim != ndim for t in tensors):
        raise DimensionError("concat: all inputs must be vectors or all matrices")
    if ndim == 2 and len({t.shape[0] for t in tensors}) != 1:
        raise DimensionError("concat: row counts differ")
    widths = [t.shape[-1] for t in tensors]
    splits = np.cumsum(widths)[:-1]
    out = np.concatenate([t.value for t in tensors], axis=-1)
    return _emit("concat", out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=-1)))


def gather_rows(X: Tensor, index: np.ndarray) -> Tensor:
    if X.ndim != 2:
        raise DimensionError(f"gather_rows: expected a matrix, got shape {X.shape}")
    idx = np.asarray(index, dtype=np.int64)
    rows = X.shape[0]
    if idx.ndim != 1 or idx.size == 0:
        raise DimensionError("gather_rows: index must be a non-empty vector")
    if idx.min() < 0 or idx.max() >= rows:
        raise DimensionError("gather_rows: index out of range")

    def vjp(g: np.ndarray):
        out = np.zeros((rows, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _emit("gather_rows", X.value[idx], (X,), vjp)


def scatter_add_rows(M: Tensor, index: np.ndarray, rows: int) -> Tensor:
    """Sum the rows of ``M`` into ``rows`` buckets given by ``index``, in index order."""
    if M.ndim != 2:
        raise DimensionError(f"scatter_add_rows: expected a matrix, got shape {M.shape}")
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != (M.shape[0],):
        raise DimensionError("scatter_add_rows: one index per row required")
    if idx.min() < 0 or idx.max() >= rows:
        raise DimensionError("scatter_add_rows: index out of range")
    out = np.zeros((rows, M.shape[1]))
    np.add.at(out, idx, M.value)
    return _emit("scatter_add_rows", out, (M,), lambda g: (g[idx],))


def _heads_view(array: np.ndarray, heads: int) -> np.ndarray:
    rows, width = array.shape
    if width % heads:
        raise DimensionError(f"width {width} is not divisible by {heads} heads")
    return array.reshape(rows, heads, width // heads)


def head_dot(a: Tensor, b: Tensor, heads: int) -> Tensor:
    """Per-row, per-head dot products of contiguous head slices: ``[R x d] -> [R x H]``."""
    _same_shape("head_dot", a, b)
    if a.ndim != 2:
        raise DimensionError("head_dot expects matrices")
    a3, b3 = _heads_view(a.value, heads), _heads_view(b.value, heads)
    shape = a.shape

    def vjp(g: np.ndarray):
        g3 = g[:, :, None]
        return (g3 * b3).reshape(shape), (g3 * a3).reshape(shape)

    return _emit("head_dot", (a3 * b3).sum(axis=-1), (a, b), vjp)


def head_weight(alpha: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scale each head slice of ``v`` by its per-row weight in ``alpha`` (``[R x H]``)."""
    if v.ndim != 2 or alpha.shape != (v.shape[0], heads):
        raise DimensionError(f"head_weight: weights {alpha.shape} do not fit values {v.shape} with {heads} heads")
    v3 = _heads_view(v.value, heads)
    av = alpha.value
    shape = v.shape

    def vjp(g: np.ndarray):
        g3 = _heads_view(g, heads)
        return (g3 * v3).sum(axis=-1), (av[:, :, None] * g3).reshape(shape)

    return _emit("head_weight", (av[:, :, None] * v3).reshape(shape), (alpha, v), vjp)


def mean_rows(X: Tensor) -> Tensor:
    if X.ndim != 2:
        raise DimensionError("mean_rows expects a matrix")
    rows = X.shape[0]
    shape = X.shape
    return _emit("mean_rows", X.value.mean(axis=0), (X,), lambda g: (np.broadcast_to(g / rows, shape).copy(),))


def sum_squares(x: Tensor) -> Tensor:
    xv = x.value
    return _emit("sum_squares", np.array(np.sum(xv * xv)), (x,), lambda g: (2.0 * g * xv,))


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise to zero mean and unit variance along the last axis, then ``* gain + shift``."""
    width = x.shape[-1] if x.ndim else 0
    if x.ndim not in (1, 2) or width < 2:
        raise DimensionError(f"layer_norm needs at least two features, got shape {x.shape}")
    if gain.shape != (width,) or shift.shape != (width,):
        raise DimensionError("layer_norm: gain/shift must match the feature width")
    xv, gv = x.value, gain.value
    centred = xv - xv.mean(axis=-1, keepdims=True)
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv
    matrix_input = x.ndim == 2

    def vjp(g: np.ndarray):
        gxhat = g * gv
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        if matrix_input:
            return gx, (g * xhat).sum(axis=0), g.sum(axis=0)
        return gx, g * xhat, g

    return _emit("layer_norm", xhat * gv + shift.value, (x, gain, shift), vjp)


def scale_norm(x: Tensor, gain: Tensor, eps: float = SCALE_NORM_EPS) -> Tensor:
    """``gain * x / max(||x||, eps)`` along the last axis; ``gain`` is a scalar."""
    if gain.size != 1:
        raise DimensionError("scale_norm: gain must be a scalar")
    if x.ndim not in (1, 2):
        raise DimensionError("scale_norm expects a vector or matrix")
    xv = x.value
    g = float(gain.value.reshape(-1)[0])
    norm = np.sqrt((xv * xv).sum(axis=-1, keepdims=True))
    denom = np.maximum(norm, eps)
    unit = xv / denom
    above = norm > eps
    gain_shape = gain.shape

    def vjp(gout: np.ndarray):
        radial = np.where(above, unit * (gout * unit).sum(axis=-1, keepdims=True), 0.0)
        gx = g * (gout - radial) / denom
        ggain = np.array(np.sum(gout * unit)).reshape(gain_shape)
        return gx, ggain

    return _emit("scale_norm", g * unit, (x, gain), vjp)


# ---------------------------------------------------------------------------
# differentiation


def backward(tape: GradTape, loss: Tensor) -> Dict[str, Tensor]:
    """Reverse-mode gradients of a scalar ``loss`` for every watched parameter.

    Parameters the loss does not depend on get a zero gradient.
    """
    if loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    adjoints: Dict[int, np.ndarray] = {}
    if tape.is_tracked(loss):
        adjoints[id(loss)] = np.ones(())
    for entry in reversed(tape.entries):
        upstream = adjoints.pop(id(entry.output), None)
        if upstream is None:
            continue
        for item, grad in zip(entry.inputs, entry.vjp(upstream)):
            if grad is None or not tape.is_tracked(item):
                continue
            key = id(item)
            if key in adjoints:
                adjoints[key] = adjoints[key] + grad
            else:
                adjoints[key] = grad
    grads: Dict[str, Tensor] = {}
    for name, tensor in tape.watched.items():
        grad = adjoints.get(id(tensor))
        grads[name] = Tensor(np.zeros(tensor.shape) if grad is None else np.reshape(grad, tensor.shape))
    return grads


def merge_gradients(maps: Sequence[Mapping[str, Tensor]]) -> Dict[str, Tensor]:
    """Sum gradient maps in the given order, key by key in sorted key order."""
    if not maps:
        raise ContractError("merge_gradients needs at least one gradient map")
    keys = sorted(maps[0])
    for other in maps[1:]:
        if sorted(other) != keys:
            raise ContractError("gradient maps have different keys")
    merged: Dict[str, Tensor] = {}
    for key in keys:
        total = maps[0][key].value
        for other in maps[1:]:
            total = total + other[key].value
        merged[key] = Tensor(total)
    return merged


@dataclass(frozen=True, slots=True)
class CoordinateCheck:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float
    skipped: bool = False


@dataclass(slots=True)
class GradCheckReport:
    tol: float
    coordinates: List[CoordinateCheck] = field(default_factory=list)

    @property
    def checked(self) -> List[CoordinateCheck]:
        return [c for c in self.coordinates if not c.skipped]

    @property
    def skipped(self) -> List[CoordinateCheck]:
        return [c for c in self.coordinates if c.skipped]

    @property
    def max_rel_error(self) -> float:
        return max((c.rel_error for c in self.checked), default=0.0)

    @property
    def failures(self) -> List[CoordinateCheck]:
        return [c for c in self.checked if c.rel_error > self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures


def _evaluate(f: Callable[[Dict[str, Tensor]], Tensor], params: Mapping[str, np.ndarray]) -> Tuple[float, np.ndarray]:
    with GradTape() as tape:
        try:
            value = f({name: Tensor(array, name=name) for name, array in params.items()})
        except NonFiniteError as exc:
            raise NonFiniteError(f"gradient check evaluation is not finite: {exc}") from exc
    if value.ndim != 0:
        raise ContractError("gradient check function must return a scalar")
    return value.item(), tape.relu_pattern()


def grad_check(
    f: Callable[[Dict[str, Tensor]], Tensor],
    params: Mapping[str, ArrayLike | Tensor],
    *,
    step: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-5,
    names: Optional[Iterable[str]] = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` with central finite differences.

    A coordinate whose perturbation flips the sign of any ReLU pre-activation
    straddles a kink; it is reported as skipped instead of compared. The
    relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    base = {
        name: np.array(value.value if isinstance(value, Tensor) else value, dtype=np.float64)
        for name, value in params.items()
    }
    with GradTape() as tape:
        watched = {name: tape.watch(name, Tensor(array, name=name)) for name, array in base.items()}
        loss = f(watched)
    analytic = backward(tape, loss)

    report = GradCheckReport(tol=tol)
    for name in names if names is not None else base:
        array = base[name]
        grad = analytic[name].value
        for index in np.ndindex(*array.shape):
            original = array[index]
            array[index] = original + step
            f_plus, pattern_plus = _evaluate(f, base)
            array[index] = original - step
            f_minus, pattern_minus = _evaluate(f, base)
            array[index] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(grad[index])
            crosses_kink = pattern_plus.shape != pattern_minus.shape or bool((pattern_plus != pattern_minus).any())
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            report.coordinates.append(
                CoordinateCheck(
                    name=name,
                    index=tuple(int(i) for i in index),
                    analytic=a,
                    numeric=numeric,
                    rel_error=0.0 if crosses_kink else rel,
                    skipped=crosses_kink,
                )
            )
    return report


__all__ = [
    "Tensor",
    "GradTape",
    "TapeEntry",
    "current_tape",
    "affine",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "concat",
    "gather_rows",
    "scatter_add_rows",
    "head_dot",
    "head_weight",
    "mean_rows",
    "sum_squares",
    "layer_norm",
    "scale_norm",
    "backward",
    "merge_gradients",
    "grad_check",
    "GradCheckReport",
    "CoordinateCheck",
]
