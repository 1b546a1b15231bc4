"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericError, UsageError
from .tensor import Tape, Tensor, backward, no_tape


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and central differences.

    The error per element is ``|a - n| / max(1, |a|, |n|)``.  ``x.data`` is
    perturbed in place and restored afterwards.
    """
    if step <= 0:
        raise UsageError("step must be positive")
    x.requires_grad = True
    with Tape() as tape:
        loss = f(x)
    if loss.size != 1:
        raise UsageError(f"f must return a scalar, got shape {loss.shape}")
    backward(loss, tape, params=[x])
    analytic = x.grad.copy()

    numeric = np.empty_like(x.data)
    flat = x.data.reshape(-1)
    out = numeric.reshape(-1)
    with no_tape():
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = f(x).item()
            flat[k] = orig - step
            down = f(x).item()
            flat[k] = orig
            out[k] = (up - down) / (2 * step)
    if not (np.all(np.isfinite(numeric)) and np.all(np.isfinite(analytic))):
        raise NumericError("finite_diff_check: non-finite gradient")
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
