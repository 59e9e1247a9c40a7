"""Minimal reverse-mode automatic differentiation engine.

Tensors wrap numpy buffers; operations record adjoint closures onto the
active Tape, and Tape.backward replays them in exact reverse order.
"""

from drpred.autodiff.tensor import Tensor, Tape, grad_enabled
from drpred.autodiff import ops
from drpred.autodiff.optim import AdamState, adam_step
from drpred.autodiff.gradcheck import gradcheck
from drpred.autodiff.checkpoint import save_arrays, load_arrays

__all__ = [
    "Tensor",
    "Tape",
    "grad_enabled",
    "ops",
    "AdamState",
    "adam_step",
    "gradcheck",
    "save_arrays",
    "load_arrays",
]
