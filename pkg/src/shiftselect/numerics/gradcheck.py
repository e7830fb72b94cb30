"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

FD_STEP = 1e-5
DENOM_FLOOR = 1e-8


class GradCheckError(RuntimeError):
    pass


@dataclass
class GradReport:
    op_name: str
    max_rel_error: float
    per_input_errors: list[float] = field(default_factory=list)
    passed: bool = False
    tol: float = 0.0

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.op_name}: max_rel_error={self.max_rel_error:.3e} (tol {self.tol:g})"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|a - b| / max(max|a|, max|b|, 1e-8) over one input's entries."""
    if analytic.size == 0:
        return 0.0
    diff = np.max(np.abs(analytic - numeric))
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), DENOM_FLOOR)
    return float(diff / scale)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence,
    tol: float = 1e-5,
    *,
    op_name: str | None = None,
    entries: int | None = None,
    seed: int = 0,
    h: float = FD_STEP,
) -> GradReport:
    """Compare ``fn``'s reverse-mode gradient against central differences.

    ``fn`` maps tensors to a scalar tensor. When ``entries`` is given, only
    that many randomly chosen coordinates of each input are probed.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    name = op_name or getattr(fn, "__name__", "fn")
    base = [np.array(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)) for x in inputs]
    if not all(np.all(np.isfinite(b)) for b in base):
        raise ValueError("grad_check inputs must be finite")

    leaves = [Tensor(b.copy(), requires_grad=True) for b in base]
    try:
        out = fn(*leaves)
    except Exception as exc:
        raise GradCheckError(f"{name}: function raised during the analytic pass") from exc
    if out.size != 1:
        raise GradCheckError(f"{name}: function must return a scalar, got shape {out.shape}")
    out.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    rng = np.random.default_rng(seed)

    def evaluate(arrays) -> float:
        with no_grad():
            return fn(*[Tensor(a) for a in arrays]).item()

    errors = []
    for i, b in enumerate(base):
        flat_idx = np.arange(b.size)
        if entries is not None and entries < b.size:
            flat_idx = np.sort(rng.choice(b.size, size=entries, replace=False))
        numeric = np.zeros(len(flat_idx))
        arrays = [x.copy() for x in base]
        flat = arrays[i].reshape(-1)
        for n, j in enumerate(flat_idx):
            orig = flat[j]
            try:
                flat[j] = orig + h
                f_plus = evaluate(arrays)
                flat[j] = orig - h
                f_minus = evaluate(arrays)
            except Exception as exc:
                raise GradCheckError(f"{name}: function raised while probing input {i}, entry {j}") from exc
            flat[j] = orig
            numeric[n] = (f_plus - f_minus) / (2.0 * h)
        errors.append(relative_error(analytic[i].reshape(-1)[flat_idx], numeric))

    worst = max(errors) if errors else 0.0
    return GradReport(op_name=name, max_rel_error=worst, per_input_errors=errors, passed=worst <= tol, tol=tol)
