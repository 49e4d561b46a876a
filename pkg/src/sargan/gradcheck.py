"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import ContractError, Tensor, get_default_dtype


@dataclass
class BlockResult:
    name: str
    max_rel_error: float
    checked: int
    total: int
    passed: bool


@dataclass
class GradCheckReport:
    label: str
    tol: float
    blocks: list[BlockResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    @property
    def failures(self) -> list[BlockResult]:
        return [b for b in self.blocks if not b.passed]

    def __str__(self) -> str:
        lines = [f"{self.label}: {'PASS' if self.passed else 'FAIL'} "
                 f"(max rel err {self.max_rel_error:.2e}, tol {self.tol:.0e})"]
        for b in self.blocks:
            lines.append(f"  {b.name:<28s} {b.max_rel_error:.2e}  [{b.checked}/{b.total}]"
                         + ("" if b.passed else "  FAIL"))
        return "\n".join(lines)


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
               tol: float = 1e-4, names: Sequence[str] | None = None,
               max_per_block: int | None = None, seed: int = 0,
               label: str = "grad_check") -> GradCheckReport:
    """Compare backprop gradients of ``f()`` against central differences.

    ``f`` rebuilds the graph from scratch on every call and returns a scalar.
    With ``max_per_block`` set, large parameter blocks are checked on a
    seeded random subset of their elements.
    """
    if get_default_dtype() is not np.float64:
        raise ContractError("gradient checks require 64-bit mode")
    names = list(names) if names is not None else [p.name or f"param{i}" for i, p in enumerate(params)]
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    report = GradCheckReport(label=label, tol=tol)
    for p, a, name in zip(params, analytic, names):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_block is not None and flat.size > max_per_block:
            idx = np.sort(rng.choice(flat.size, size=max_per_block, replace=False))
        numeric = np.empty(idx.size)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            numeric[k] = (fp - fm) / (2.0 * h)
        err = relative_error(a.reshape(-1)[idx], numeric)
        worst = float(err.max()) if err.size else 0.0
        report.blocks.append(BlockResult(name, worst, int(idx.size), int(flat.size), worst <= tol))
    for p in params:
        p.grad = None
    return report
