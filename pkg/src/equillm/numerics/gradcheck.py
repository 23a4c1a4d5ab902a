"""Central finite-difference gradient check."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NumericalError
from .tensor import Tensor, backward, no_grad


def finite_diff_check(f: Callable[[], Tensor], theta: Tensor, h: float = 1e-6) -> float:
    """Max over components of ``|analytic - central| / max(1e-12, |central|)``.

    ``f`` takes no arguments and must read ``theta`` (it is perturbed in place
    and restored).  The analytic gradient comes from one taped evaluation.
    """
    saved_flag = theta.requires_grad
    saved_grad = theta.grad
    theta.requires_grad = True
    theta.grad = None
    try:
        loss = f()
        if not np.isfinite(loss.data):
            raise NumericalError("f is not finite at theta")
        backward(loss)
        analytic = np.zeros_like(theta.data) if theta.grad is None else theta.grad.copy()
    finally:
        theta.grad = saved_grad
        theta.requires_grad = saved_flag

    base = theta.data
    flat = base.reshape(-1)
    central = np.empty(flat.size)
    with no_grad():
        for k in range(flat.size):
            orig = flat[k]
            up, down = orig + h, orig - h
            flat[k] = up
            fp = float(f().data)
            flat[k] = down
            fm = float(f().data)
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericalError(f"f is not finite at theta +/- h e_{k}")
            # divide by the step actually taken, which differs from 2h by rounding
            central[k] = (fp - fm) / (up - down)
    err = np.abs(analytic.reshape(-1) - central) / np.maximum(1e-12, np.abs(central))
    return float(err.max()) if err.size else 0.0
