"""Adam optimizer with bias correction."""

from __future__ import annotations

import numpy as np

from drpred.errors import DimensionError, TrainingDivergedError


class AdamState:
    """Per-parameter first/second moment buffers plus the step counter.

    Buffers are allocated lazily on the first step so the state can be
    constructed before the parameter shapes are known.
    """

    def __init__(self, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None
        self.step = 0


def adam_step(params, grads, state: AdamState):
    """Apply one bias-corrected Adam update in place.

    `params` is a list of Tensors, `grads` a parallel list of ndarrays.
    Raises TrainingDivergedError on non-finite gradients.
    """
    if len(params) != len(grads):
        raise DimensionError("adam_step: params and grads length mismatch")
    if state.m is None:
        state.m = [np.zeros_like(p.values, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p.values, dtype=np.float64) for p in params]
    if len(state.m) != len(params):
        raise DimensionError("adam_step: state was initialized for a different parameter set")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    # Folding the bias corrections into the step size is algebraically
    # identical to correcting m and v separately.
    correction2 = np.sqrt(1 - b2**t)
    step_size = state.learning_rate * correction2 / (1 - b1**t)
    eps_hat = state.epsilon * correction2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g)
        if g.shape != p.values.shape:
            raise DimensionError(f"adam_step: grad shape {g.shape} vs param {p.values.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient in adam_step")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        denom = np.sqrt(v)
        denom += eps_hat
        p.values -= (step_size * m / denom).astype(p.values.dtype)
    return params
