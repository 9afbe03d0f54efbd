"""Adam with bias correction over named parameters."""

from __future__ import annotations

import numpy as np

__all__ = ["adam_step"]


def adam_step(
    named_params,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One update over ``(name, Parameter)`` pairs; clears gradients after.

    Every parameter must have a populated gradient; the check runs before
    any state is touched so a failed step leaves parameters unchanged.
    """
    pairs = list(named_params)
    for name, p in pairs:
        if p.tensor.grad is None:
            raise ValueError(f"no gradient for parameter {name!r}")

    for _, p in pairs:
        g = p.tensor.grad
        p.step_count += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        m_hat = p.m / (1.0 - beta1**p.step_count)
        v_hat = p.v / (1.0 - beta2**p.step_count)
        p.tensor.data -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        p.tensor.grad = None
