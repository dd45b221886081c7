"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


def numerical_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float) -> np.ndarray:
    """Central differences of a scalar ``f``; complex inputs get dRe + i dIm."""
    x = np.array(x)
    grad = np.zeros(x.shape, dtype=x.dtype)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    steps = [1.0, 1j] if np.iscomplexobj(x) else [1.0]
    for i in range(flat.size):
        orig = flat[i]
        for step in steps:
            flat[i] = orig + h * step
            fp = f(Tensor(x)).item()
            flat[i] = orig - h * step
            fm = f(Tensor(x)).item()
            flat[i] = orig
            gflat[i] += step * (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst componentwise relative error.

    Components smaller than 1e-3 of the largest numeric component are measured
    against that floor instead of their own magnitude.
    """
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    floor = 1e-3 * float(np.max(np.abs(n), initial=0.0)) + 1e-12
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom, initial=0.0))


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-6) -> float:
    """Compare ``backward()`` against central differences; return the worst relative error."""
    x0 = np.array(x.data if isinstance(x, Tensor) else x)
    xt = Tensor(x0.copy(), requires_grad=True)
    with Tape():
        out = f(xt)
        out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(x0)
    numeric = numerical_grad(f, x0, h)
    return relative_error(analytic, numeric)
