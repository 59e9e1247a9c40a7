"""Gradient verification by central finite differences.

The analytic gradients come from one taped backward pass; the numeric
side re-evaluates the graph twice per perturbed coordinate, so it never
touches the adjoint code it is checking.
"""

from __future__ import annotations

import numpy as np

from drpred.errors import DrpredError
from drpred.autodiff.tensor import Tape, Tensor

REL_ERR_FLOOR = 1e-8


def gradcheck(f, params, step=1e-5, max_coords=64, rng=None):
    """Return the max relative error between analytic and numeric grads.

    `f` builds a scalar Tensor from the current parameter values and must
    be deterministic across calls (fix any sampling noise beforehand).
    Coordinates are subsampled per tensor when a tensor has more than
    `max_coords` entries. Requires float64 parameters.
    """
    params = list(params)
    for p in params:
        if p.values.dtype != np.float64:
            raise DrpredError("gradcheck requires float64 parameters")
        p.zero_grad()

    with Tape() as tape:
        out = f()
    if not isinstance(out, Tensor) or out.values.size != 1:
        raise DrpredError("gradcheck expects f to produce a scalar Tensor")
    if not np.isfinite(out.values).all():
        raise DrpredError("gradcheck: non-finite objective value")
    tape.backward(out)

    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.values) for p in params
    ]

    rng = rng or np.random.default_rng(0)
    max_rel = 0.0
    for p, a in zip(params, analytic):
        flat = p.values.reshape(-1)
        n = flat.size
        if n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = np.arange(n)
        a_flat = a.reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = float(f().values.reshape(()))
            flat[idx] = orig - step
            f_minus = float(f().values.reshape(()))
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise DrpredError("gradcheck: non-finite objective during perturbation")
            numeric = (f_plus - f_minus) / (2 * step)
            denom = max(abs(a_flat[idx]), abs(numeric), REL_ERR_FLOOR)
            max_rel = max(max_rel, abs(a_flat[idx] - numeric) / denom)
    return max_rel
