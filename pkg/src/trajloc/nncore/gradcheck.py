"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np


def numerical_gradients(loss_fn, params: dict, step=1e-5) -> dict:
    """Perturb every entry of every array in ``params`` (in place, restored)."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        out[name] = g
    return out


def relative_error(analytic, numeric) -> float:
    a, n = np.ravel(analytic), np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < 1e-10:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(loss_fn, params: dict, analytic: dict, step=1e-5) -> dict[str, float]:
    """Relative error per parameter array between ``analytic`` and central differences."""
    numeric = numerical_gradients(loss_fn, params, step)
    return {k: relative_error(analytic[k], numeric[k]) for k in params}
