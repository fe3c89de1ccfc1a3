"""
Dense tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a row-major numpy array. Every differentiable operation is a
`Function` subclass; applying it records the inputs on the output tensor so
`backward()` can walk the graph in reverse topological order. The graph lives
only from one forward pass to the matching backward call.
"""

from __future__ import annotations

import itertools
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Iterator, Optional, Sequence, Union

import numpy as np

from src.errors import ContractError, DimensionError, NumericError

logger = logging.getLogger(__name__)

MAX_DIMS = 5

_ids = itertools.count()
_state = threading.local()


def default_dtype() -> type:
    """Storage dtype for new tensors (float32 unless a precision context is active)."""
    return getattr(_state, "dtype", np.float32)


@contextmanager
def no_grad() -> Iterator[None]:
    """Build no graph on this thread (evaluation forward passes)."""
    previous = getattr(_state, "no_grad", False)
    _state.no_grad = True
    try:
        yield
    finally:
        _state.no_grad = previous


@contextmanager
def precision(dtype: type) -> Iterator[None]:
    """Temporarily store tensors created on this thread with another dtype.

    Gradient checks run under ``precision(np.float64)`` so that central
    differences are not dominated by float32 rounding.
    """
    previous = default_dtype()
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = previous


class Function:
    """Base class for differentiable operations.

    ``forward`` receives the input arrays and returns the output array;
    ``backward`` receives dLoss/dOutput and returns one gradient (or None)
    per input, each with the shape of that input.
    """

    kind = "op"

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs
        self.saved: dict[str, Any] = {}

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__}.forward")

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__}.backward")

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out = np.asarray(fn.forward(*(t.data for t in inputs), **kwargs), dtype=default_dtype())
        if not np.isfinite(out).all():
            raise NumericError(f"{cls.kind} produced non-finite values")
        requires_grad = not getattr(_state, "no_grad", False) and any(t.requires_grad for t in inputs)
        if not requires_grad:
            fn.saved.clear()
        return Tensor(out, requires_grad=requires_grad, _creator=fn if requires_grad else None)


class Tensor:
    """A dense float tensor of at most five axes, optionally tracking gradients."""

    def __init__(
        self,
        data: Union[np.ndarray, float, int, Sequence],
        requires_grad: bool = False,
        _creator: Optional[Function] = None,
    ):
        arr = np.asarray(data, dtype=default_dtype(), order="C")
        if arr.ndim > MAX_DIMS:
            raise DimensionError(f"Tensors hold at most {MAX_DIMS} axes, got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.creator = _creator
        self.id = next(_ids)

    # ── Shape bookkeeping ──────────────────────────────

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> "ComputeGraph":
        return backward(self)

    # ── Operators ──────────────────────────────────────

    def __add__(self, other: Union["Tensor", float, int]) -> "Tensor":
        from src.ndarr import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Union["Tensor", float, int]) -> "Tensor":
        from src.ndarr import ops
        return ops.sub(self, other)

    def __rsub__(self, other: Union[float, int]) -> "Tensor":
        from src.ndarr import ops
        return ops.sub(as_tensor(other), self)

    def __mul__(self, other: Union["Tensor", float, int]) -> "Tensor":
        from src.ndarr import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Union[float, int]) -> "Tensor":
        from src.ndarr import ops
        if isinstance(other, Tensor):
            raise ContractError("Division is only defined by a Python scalar")
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self) -> "Tensor":
        from src.ndarr import ops
        return ops.neg(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def as_tensor(value: Union[Tensor, np.ndarray, float, int]) -> Tensor:
    """Wrap constants; tensors pass through unchanged."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


# ============================================
# Graph traversal
# ============================================

@dataclass(frozen=True)
class OpRecord:
    kind: str
    input_ids: tuple[int, ...]
    output_id: int
    saved: tuple[str, ...]


class ComputeGraph:
    """Topologically ordered view of the graph that produced ``output``."""

    def __init__(self, output: Tensor):
        self.output = output
        self.tensors: list[Tensor] = []
        seen: set[int] = set()
        # iterative post-order DFS; graphs are deeper than the recursion limit
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                self.tensors.append(tensor)
                continue
            if tensor.id in seen:
                continue
            seen.add(tensor.id)
            stack.append((tensor, True))
            if tensor.creator is not None:
                for inp in reversed(tensor.creator.inputs):
                    if inp.requires_grad and inp.id not in seen:
                        stack.append((inp, False))

        self.nodes = [
            OpRecord(
                kind=t.creator.kind,
                input_ids=tuple(i.id for i in t.creator.inputs),
                output_id=t.id,
                saved=tuple(t.creator.saved),
            )
            for t in self.tensors
            if t.creator is not None
        ]

    @property
    def leaves(self) -> list[Tensor]:
        return [t for t in self.tensors if t.creator is None]

    def free(self) -> None:
        for tensor in self.tensors:
            if tensor.creator is not None:
                tensor.creator.saved.clear()
                tensor.creator = None


def backward(loss: Tensor) -> ComputeGraph:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls until ``zero_grad``. The graph is
    freed afterwards, so a second backward through the same forward pass is a
    contract error.
    """
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or loss.creator is None:
        raise ContractError("backward() called on a tensor that is not connected to a graph")

    graph = ComputeGraph(loss)
    pending: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}

    for tensor in reversed(graph.tensors):
        grad = pending.pop(tensor.id, None)
        if grad is None:
            continue
        if tensor.creator is None:
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            continue
        tensor.grad = grad
        input_grads = tensor.creator.backward(grad)
        for inp, g in zip(tensor.creator.inputs, input_grads):
            if g is None or not inp.requires_grad:
                continue
            if g.shape != inp.shape:
                raise DimensionError(
                    f"{tensor.creator.kind} returned gradient {g.shape} for input {inp.shape}"
                )
            g = g.astype(inp.data.dtype, copy=False)
            pending[inp.id] = pending[inp.id] + g if inp.id in pending else g

    graph.free()
    return graph
