"""Tensor and tape for reverse-mode differentiation.

Operations record a node on the active :class:`Tape` (one per thread) when at
least one input requires a gradient. Gradients of complex tensors follow the
``dL/dRe + i dL/dIm`` convention, which is twice the Wirtinger derivative with
respect to the conjugate variable; stepping against it decreases a real loss.
"""

from __future__ import annotations

import threading
import weakref
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import GraphError

_local = threading.local()


def _stack() -> list:
    st = getattr(_local, "tapes", None)
    if st is None:
        st = _local.tapes = []
    return st


def current_tape() -> "Tape | None":
    st = _stack()
    return st[-1] if st else None


@contextmanager
def no_grad():
    """Suspend recording on this thread, even inside an active tape."""
    st = _stack()
    st.append(None)
    try:
        yield
    finally:
        st.pop()


class Node:
    """One recorded operation. The tape is held weakly so graphs free by refcount."""

    __slots__ = ("id", "op", "parents", "vjp", "_tape")

    def __init__(self, id: int, op: str, parents: tuple, vjp: Callable, tape: "Tape"):
        self.id = id
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self._tape = weakref.ref(tape)

    @property
    def tape(self) -> "Tape | None":
        return self._tape()


@dataclass
class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block are
    recorded. Parents always precede their children, so a reverse sweep over
    ``nodes`` is a valid topological order.
    """

    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def record(self, op: str, parents: tuple, vjp: Callable) -> Node:
        node = Node(len(self.nodes), op, parents, vjp, self)
        self.nodes.append(node)
        return node

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if np.iscomplexobj(arr):
        return arr.astype(np.complex128, copy=False)
    return arr.astype(np.float64, copy=False)


class Tensor:
    """An n-dimensional float64 or complex128 array with an optional tape handle."""

    __slots__ = ("data", "requires_grad", "grad", "_node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _node: Node | None = None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node = _node

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    @property
    def node_id(self) -> int | None:
        return None if self._node is None else self._node.id

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar; definitions live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.div(self, other)
        return ops.mul(self, 1.0 / other)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def backward(self, grad=None) -> None:
        """Populate ``.grad`` of every leaf that requires a gradient.

        Leaf gradients are replaced, not accumulated, so replaying the same tape
        gives identical results.
        """
        backward(self, grad)


def backward(out: Tensor, grad=None, leaves: Sequence[Tensor] | None = None) -> None:
    node = out._node
    tape = node.tape if node is not None else None
    if tape is None or node.id >= len(tape.nodes) or tape.nodes[node.id] is not node:
        raise GraphError("tensor is not recorded on a live tape")
    if grad is None:
        if out.size != 1:
            raise GraphError("backward() without an explicit gradient needs a scalar output")
        grad = np.ones_like(out.data)
    grads: dict[int, np.ndarray] = {node.id: np.asarray(grad)}
    leaf_grads: dict[int, tuple[Tensor, np.ndarray]] = {}
    nodes = tape.nodes
    for nid in range(node.id, -1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        cur = nodes[nid]
        parent_grads = cur.vjp(g)
        for parent, pg in zip(cur.parents, parent_grads):
            if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                continue
            if not parent.is_complex and np.iscomplexobj(pg):
                pg = pg.real
            if parent._node is not None:
                pid = parent._node.id
                grads[pid] = grads[pid] + pg if pid in grads else pg
            else:
                key = id(parent)
                if key in leaf_grads:
                    leaf_grads[key] = (parent, leaf_grads[key][1] + pg)
                else:
                    leaf_grads[key] = (parent, pg)
    for parent, g in leaf_grads.values():
        parent.grad = np.array(g, dtype=parent.data.dtype)
    if leaves is not None:
        for leaf in leaves:
            if id(leaf) not in leaf_grads:
                leaf.grad = np.zeros_like(leaf.data)
