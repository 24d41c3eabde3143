"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(closure: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6) -> float:
    """Max over all input elements of |analytic - numeric| / max(1, |analytic|).

    ``closure(*inputs)`` must return a scalar tensor. Inputs are perturbed in
    place and restored.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    closure(*inputs).backward()
    worst = 0.0
    with no_grad():
        for t in inputs:
            analytic = np.zeros_like(t.data) if t.grad is None else t.grad
            flat = t.data.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                hi, lo = orig + eps, orig - eps
                flat[k] = hi
                fp = closure(*inputs).item()
                flat[k] = lo
                fm = closure(*inputs).item()
                flat[k] = orig
                # divide by the step actually representable, not 2*eps
                num = (fp - fm) / (hi - lo)
                a = analytic.reshape(-1)[k]
                worst = max(worst, abs(a - num) / max(1.0, abs(a)))
    return worst
