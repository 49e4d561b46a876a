"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and remembers the operation that
produced it. Calling :meth:`Tensor.backward` on a scalar collects the
reachable nodes into a :class:`Graph` (ordered by construction), then walks
that order in reverse, handing each node's upstream gradient to its local
backward rule.

Only leaves created with ``requires_grad=True`` keep a ``.grad`` buffer;
intermediate gradients are dropped as soon as they have been propagated.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "DimensionError",
    "ContractError",
    "NumericError",
    "get_default_dtype",
    "set_default_dtype",
    "as_tensor",
]

_DTYPE = np.float64
_ids = itertools.count()


class DimensionError(ValueError):
    """Shapes of operands do not fit together."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class NumericError(FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


def get_default_dtype():
    return _DTYPE


def set_default_dtype(dtype) -> None:
    """Switch between float64 (reference) and float32 (speed) storage."""
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DTYPE = dtype


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An n-dimensional array that can take part in gradient computation.

    Parameters
    ----------
    data : array_like
        Values; copied into the default floating dtype.
    requires_grad : bool
        Leaf tensors with this flag accumulate ``.grad`` during backward.
    name : str, optional
        Label used in diagnostics.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward: BackwardFn | None = None,
                 _op: str = "leaf"):
        arr = np.asarray(data, dtype=_DTYPE)
        if arr.ndim > 4:
            raise DimensionError(f"at most 4 axes supported, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.name = name
        self.op = _op
        self._parents = _parents
        self._backward = _backward
        self.id = next(_ids)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_nonscalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        from . import functional as F
        if isinstance(other, Tensor):
            return F.add(self, other)
        return F.shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        if isinstance(other, Tensor):
            return F.sub(self, other)
        return F.shift(self, -float(other))

    def __rsub__(self, other):
        from . import functional as F
        return F.shift(F.scale(self, -1.0), float(other))

    def __mul__(self, other):
        from . import functional as F
        if isinstance(other, Tensor):
            return F.mul(self, other)
        return F.scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import functional as F
        if isinstance(other, Tensor):
            return F.elementwise_div(self, other, 0.0)
        return F.scale(self, 1.0 / float(other))

    def __neg__(self):
        from . import functional as F
        return F.scale(self, -1.0)

    # -- autodiff -----------------------------------------------------------
    def backward(self) -> "Graph":
        """Populate ``.grad`` of every reachable leaf with d(self)/d(leaf)."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        graph = Graph.from_output(self)
        graph.backward()
        return graph


def _raise_nonscalar(t: Tensor):
    raise ContractError(f"item() needs a single element, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Graph:
    """Operation records reachable from one output, in construction order."""

    def __init__(self, nodes: list[Tensor], output: Tensor):
        self.nodes = nodes
        self.output = output

    @classmethod
    def from_output(cls, output: Tensor) -> "Graph":
        seen: dict[int, Tensor] = {}
        stack = [output]
        while stack:
            t = stack.pop()
            if t.id in seen:
                continue
            seen[t.id] = t
            stack.extend(p for p in t._parents if p.requires_grad)
        # ids are issued monotonically, so sorting restores construction order
        return cls(sorted(seen.values(), key=lambda t: t.id), output)

    def leaves(self) -> list[Tensor]:
        return [t for t in self.nodes if t.is_leaf and t.requires_grad]

    def backward(self) -> None:
        grads: dict[int, np.ndarray] = {
            self.output.id: np.ones_like(self.output.data)
        }
        for node in reversed(self.nodes):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise DimensionError(
                        f"{node.op}: gradient shape {pg.shape} != input shape {parent.shape}"
                    )
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
        for leaf in self.leaves():
            if leaf.grad is not None and not np.all(np.isfinite(leaf.grad)):
                raise NumericError(f"non-finite gradient in {leaf.name or leaf.op}")

    def first_nonfinite(self) -> Tensor | None:
        """Earliest node (construction order) holding a NaN or Inf."""
        for node in self.nodes:
            if not np.all(np.isfinite(node.data)):
                return node
        return None


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
