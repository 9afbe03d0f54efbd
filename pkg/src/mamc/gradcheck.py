"""Central finite-difference verification of reverse-mode gradients.

The checker evaluates a scalar-valued closure, backpropagates, then
perturbs sampled entries of each leaf tensor by +/-h and compares the
finite-difference quotient against the recorded gradient.  Run it on
float64 leaves; float32 cannot support the tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

__all__ = ["GradCheckEntry", "GradCheckReport", "grad_check"]


@dataclass(frozen=True)
class GradCheckEntry:
    name: str
    max_rel_err: float
    checked: int

    def ok(self, tolerance: float) -> bool:
        return self.max_rel_err < tolerance


@dataclass(frozen=True)
class GradCheckReport:
    entries: tuple[GradCheckEntry, ...]
    tolerance: float

    @property
    def ok(self) -> bool:
        return all(e.ok(self.tolerance) for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def failures(self) -> list[GradCheckEntry]:
        return [e for e in self.entries if not e.ok(self.tolerance)]

    def summary(self) -> str:
        lines = [
            f"{'ok' if e.ok(self.tolerance) else 'FAIL':4s} "
            f"{e.name:40s} max_rel_err={e.max_rel_err:.3e} ({e.checked} entries)"
            for e in self.entries
        ]
        return "\n".join(lines)


def _rel_err(a: float, n: float, atol: float) -> float:
    # differences at the finite-difference noise floor count as agreement;
    # this covers directions the loss is exactly invariant to (true zero
    # gradients), where the quotient is nothing but rounding noise
    if abs(a - n) <= atol:
        return 0.0
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def grad_check(
    fn,
    leaves,
    *,
    step: float = 1e-6,
    tolerance: float = 1e-4,
    atol: float = 1e-7,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn()`` against finite differences.

    ``fn`` must return a scalar Tensor computed from the ``(name, Tensor)``
    leaves; it is re-evaluated many times and must be deterministic.  With
    ``max_entries`` set, only that many randomly sampled entries of each
    leaf are perturbed, which keeps large models tractable.
    """
    leaves = list(leaves)
    if rng is None:
        rng = np.random.default_rng(0)

    for _, leaf in leaves:
        leaf.grad = None
    out = fn()
    out.backward()
    analytic = {}
    for name, leaf in leaves:
        if leaf.grad is None:
            analytic[name] = np.zeros_like(leaf.data)
        else:
            analytic[name] = leaf.grad.copy()

    entries = []
    for name, leaf in leaves:
        flat = leaf.data.reshape(-1)
        size = flat.size
        if max_entries is None or size <= max_entries:
            indices = np.arange(size)
        else:
            indices = rng.choice(size, size=max_entries, replace=False)
        grads = analytic[name].reshape(-1)
        worst = 0.0
        for idx in indices:
            saved = flat[idx]
            flat[idx] = saved + step
            f_plus = float(fn().data)
            flat[idx] = saved - step
            f_minus = float(fn().data)
            flat[idx] = saved
            numeric = (f_plus - f_minus) / (2.0 * step)
            worst = max(worst, _rel_err(float(grads[idx]), numeric, atol))
        entries.append(GradCheckEntry(name, worst, len(indices)))

    return GradCheckReport(tuple(entries), tolerance)
