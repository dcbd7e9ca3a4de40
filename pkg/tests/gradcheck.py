"""Central finite-difference oracle used to check every autodiff path.

Kept independent of the tape: it only ever perturbs raw parameter arrays and
re-runs a caller-supplied forward function.
"""
from __future__ import annotations

import numpy as np

from storylab import tensor as T


def finite_difference_grad(forward, param: T.Tensor, h: float = 1e-5) -> np.ndarray:
    """d forward() / d param via central differences, entry by entry."""
    grad = np.zeros_like(param.data)
    flat = param.data.ravel()
    out = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = forward()
        flat[i] = orig - h
        lo = forward()
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   abs_floor: float = 1e-6) -> float:
    """Max relative error, falling back to absolute below `abs_floor` magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    diff = np.abs(analytic - numeric)
    rel = np.where(denom > abs_floor, diff / np.maximum(denom, abs_floor), 0.0)
    tiny_ok = np.where(denom <= abs_floor, diff, 0.0)
    if np.any(tiny_ok > 1e-8):
        return float("inf")
    return float(rel.max()) if rel.size else 0.0


def check_gradients(build_loss, params: dict[str, T.Tensor], h: float = 1e-5,
                    tol: float = 1e-4) -> dict[str, float]:
    """Compare tape gradients of build_loss() against the oracle per parameter.

    `build_loss` must be deterministic and re-runnable; it returns the scalar
    loss Tensor. Returns the worst relative error per parameter name and
    asserts all are within tolerance.
    """
    for p in params.values():
        p.zero_grad()
    loss = build_loss()
    T.backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    def forward() -> float:
        with T.no_grad():
            return build_loss().item()

    errors = {}
    for name, p in params.items():
        numeric = finite_difference_grad(forward, p, h=h)
        err = relative_error(analytic[name], numeric)
        errors[name] = err
        assert err < tol, f"gradient mismatch for {name}: rel err {err:.3e}"
    return errors
