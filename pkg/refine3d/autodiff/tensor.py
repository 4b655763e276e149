"""
Tensor and Graph - define-by-run reverse-mode differentiation.

Every differentiable op appends a node to the calling thread's active Graph. backward()
walks that record in exact reverse execution order once; a second backward on the same
record is an error until a new forward pass starts a fresh Graph.
"""
from __future__ import annotations

import logging
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from refine3d.errors import DimensionError, GraphError, NumericError
from refine3d.settings import debug_from_env

logger = logging.getLogger(__name__)

_local = threading.local()
_FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))
_debug_checks: Optional[bool] = None

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


# ---------------- thread-local modes ----------------
def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them (inference, finite differences)"""
    previous = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


def default_dtype() -> np.dtype:
    return getattr(_local, "dtype", np.dtype(np.float32))


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Switch the default float type for tensors built from non-float data (64-bit for gradient checks)"""
    dtype = np.dtype(dtype)
    if dtype not in _FLOAT_TYPES:
        raise ValueError(f"precision must be float32 or float64, got {dtype}")
    previous = default_dtype()
    _local.dtype = dtype
    try:
        yield
    finally:
        _local.dtype = previous


@contextmanager
def record_branches() -> Iterator[List[bytes]]:
    """Collect the branch pattern (masks, argmax winners) of every kinked op run in the block"""
    previous = getattr(_local, "branches", None)
    _local.branches = []
    try:
        yield _local.branches
    finally:
        _local.branches = previous


def note_branches(pattern: np.ndarray) -> None:
    branches = getattr(_local, "branches", None)
    if branches is not None:
        branches.append(np.ascontiguousarray(pattern).tobytes())


def set_debug_checks(enabled: bool) -> None:
    """Check every op output for NaN/Inf (also enabled by REFINE3D_DEBUG)"""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    if _debug_checks is None:
        set_debug_checks(debug_from_env())
    return bool(_debug_checks)


# ---------------- Tensor ----------------
class Tensor:
    """
    n-dimensional float array taking part in reverse-mode differentiation.

    Leaf tensors created with requires_grad=True own a zero-initialised `grad` buffer
    of the same shape; gradients accumulate into it until zero_grad().
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data)
        if dtype is None:
            dtype = array.dtype if array.dtype in _FLOAT_TYPES else default_dtype()
        self.data: np.ndarray = np.asarray(array, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if self.requires_grad else None
        self._node: Optional[Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype.name}{flag})"

    # operators are bound in refine3d.autodiff.ops


# ---------------- Graph ----------------
class Node:
    __slots__ = ("graph", "index", "op", "out", "parents", "backward_fn")

    def __init__(self, graph: "Graph", index: int, op: str, out: Tensor, parents: Sequence[Tensor], backward_fn: BackwardFn):
        self.graph = graph
        self.index = index
        self.op = op
        self.out = out
        self.parents = tuple(parents)
        self.backward_fn = backward_fn


class Graph:
    """Ordered record of the operations executed by one forward pass"""

    def __init__(self):
        self.nodes: List[Node] = []
        self.consumed = False

    def record(self, op: str, out: Tensor, parents: Sequence[Tensor], backward_fn: BackwardFn) -> None:
        node = Node(self, len(self.nodes), op, out, parents, backward_fn)
        self.nodes.append(node)
        out._node = node

    def run_backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise GraphError("backward already ran for this forward pass; run a new forward pass first")
        self.consumed = True
        if getattr(_local, "graph", None) is self:
            _local.graph = None

        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes[: loss._node.index + 1]):
            out = node.out
            if out.grad is None:
                continue
            grads = node.backward_fn(out.grad)
            for parent, grad in zip(node.parents, grads):
                if grad is None or not parent.requires_grad:
                    continue
                _accumulate(parent, grad)
            # every consumer of `out` was recorded after it, so its gradient is complete
            out.grad = None
        self.nodes = []


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if grad.shape != tensor.shape:
        raise GraphError(f"gradient shape {grad.shape} does not match tensor shape {tensor.shape}")
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=tensor.dtype, copy=True)
    else:
        tensor.grad += grad


def current_graph() -> Graph:
    graph = getattr(_local, "graph", None)
    if graph is None or graph.consumed:
        graph = Graph()
        _local.graph = graph
    return graph


def reset_graph() -> None:
    """Drop this thread's pending record without running backward"""
    _local.graph = None


def make_result(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op's output and record it when any parent needs a gradient"""
    out = Tensor(data)
    if debug_checks_enabled() and not np.all(np.isfinite(out.data)):
        raise NumericError(f"{op} produced non-finite values for output shape {out.shape}")
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        current_graph().record(op, out, parents, backward_fn)
    return out


def backward(loss: Tensor) -> None:
    """
    Populate `grad` on every requires_grad tensor the scalar `loss` depends on.

    A loss that does not require gradients is a no-op.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss._node is None:
        loss.grad = loss.grad + 1 if loss.grad is not None else np.ones_like(loss.data)
        return
    loss._node.graph.run_backward(loss)
