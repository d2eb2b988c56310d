"""Tensor container and the reverse-mode differentiation engine.

Every traced operation produces a Tensor that remembers its primitive name,
its parent tensors and any op-specific context.  `grad`/`backward` walk that
graph in reverse topological order exactly once per node.

Vector-Jacobian products are themselves built from traced primitives, so
running the engine with ``create_graph=True`` records the backward
computation and a second pass differentiates through it.  That is what the
gradient-penalty term of the critic loss relies on.

A graph is single-threaded during forward/backward; independent graphs may
live on different threads (all mode flags are thread-local).
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _default_dtype() -> np.dtype:
    return getattr(_state, "default_dtype", np.dtype(np.float32))


@contextlib.contextmanager
def set_grad_enabled(mode: bool):
    prev = _grad_enabled()
    _state.grad_enabled = mode
    try:
        yield
    finally:
        _state.grad_enabled = prev


def no_grad():
    """Context manager disabling graph recording (inference / plain numpy)."""
    return set_grad_enabled(False)


@contextlib.contextmanager
def using_dtype(dtype):
    """Context manager switching the default float dtype (tests use float64)."""
    prev = _default_dtype()
    _state.default_dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.default_dtype = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_op", "_parents", "_ctx")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_default_dtype())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._op: str | None = None
        self._parents: tuple[Tensor, ...] | None = None
        self._ctx: dict | None = None

    # -- inspection ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- operator sugar (wired up by ops.py) --------------------------------

    def __add__(self, other):
        return _OPS["add"](self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _OPS["sub"](self, other)

    def __rsub__(self, other):
        return _OPS["sub"](other, self)

    def __mul__(self, other):
        return _OPS["mul"](self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _OPS["div"](self, other)

    def __rtruediv__(self, other):
        return _OPS["div"](other, self)

    def __neg__(self):
        return _OPS["neg"](self)

    def __matmul__(self, other):
        return _OPS["matmul"](self, other)


# populated by ops.py at import time (operator sugar plus the VJP table)
_OPS: dict[str, Callable] = {}
_VJPS: dict[str, Callable] = {}


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap ``x`` as a constant Tensor.  Float arrays keep their dtype
    unless one is forced; everything else takes the forced/default dtype."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype.kind != "f":
        arr = arr.astype(_default_dtype())
    return Tensor(arr)


def coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap a binary op's operands; plain scalars/arrays inherit the dtype
    of the Tensor operand so constants never change the computation dtype."""
    if isinstance(a, Tensor):
        return a, (b if isinstance(b, Tensor) else as_tensor(b, a.dtype))
    if isinstance(b, Tensor):
        return as_tensor(a, b.dtype), b
    return as_tensor(a), as_tensor(b)


def make_op_output(
    data: np.ndarray,
    op: str,
    parents: tuple[Tensor, ...],
    ctx: dict | None = None,
) -> Tensor:
    """Wrap an op result, recording the node when tracing is active."""
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._op = op
        out._parents = parents
        out._ctx = ctx
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    """Interior nodes of the graph, dependencies before dependents."""
    order: list[Tensor] = []
    seen: set[int] = {id(root)}
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, idx = stack[-1]
        parents = node._parents or ()
        if idx < len(parents):
            stack[-1] = (node, idx + 1)
            p = parents[idx]
            if p._op is not None and id(p) not in seen:
                seen.add(id(p))
                stack.append((p, 0))
        else:
            stack.pop()
            order.append(node)
    return order


def _run_backward(
    loss: Tensor, create_graph: bool, keep: frozenset[int]
) -> dict[int, tuple[Tensor, Tensor]]:
    """Reverse sweep.  Returns ``id -> (tensor, grad)`` for leaves and for
    any interior node whose id is in ``keep``."""
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    add_op = _OPS["add"]
    seed = Tensor(np.ones_like(loss.data))
    grads: dict[int, tuple[Tensor, Tensor]] = {id(loss): (loss, seed)}
    order = _topo_order(loss)
    with set_grad_enabled(create_graph):
        for node in reversed(order):
            entry = grads.get(id(node))
            if entry is None:
                continue
            if id(node) not in keep:
                del grads[id(node)]
            g = entry[1]
            pgrads = _VJPS[node._op](node, g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = (p, pg) if acc is None else (p, add_op(acc[1], pg))
    return grads


def grad(
    loss: Tensor,
    wrt: Sequence[Tensor],
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradients of a scalar loss with respect to ``wrt`` tensors.

    With ``create_graph=True`` the returned gradients are themselves traced
    tensors, so a further ``grad``/``backward`` call differentiates through
    them (second-order gradients).
    """
    keep = frozenset(id(t) for t in wrt)
    grads = _run_backward(loss, create_graph, keep)
    out = []
    for t in wrt:
        entry = grads.get(id(t))
        out.append(Tensor(np.zeros_like(t.data)) if entry is None else entry[1])
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` (accumulating) on every reachable leaf tensor."""
    grads = _run_backward(loss, create_graph=False, keep=frozenset())
    for t, g in grads.values():
        if t._op is None and t.requires_grad:
            if t.grad is None:
                t.grad = g.data.copy()
            else:
                t.grad += g.data
