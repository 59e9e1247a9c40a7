"""Small parameter-initialization helpers shared by the neural modules."""

from __future__ import annotations

import numpy as np

from drpred.autodiff import Tensor
from drpred.rng import SplitRng


def glorot_uniform(rng: SplitRng, n_in: int, n_out: int, dtype=np.float32) -> Tensor:
    bound = np.sqrt(6.0 / (n_in + n_out))
    values = rng.uniform(-bound, bound, (n_in, n_out), dtype=dtype)
    return Tensor(values, requires_grad=True, dtype=dtype)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, dtype=dtype)


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True, dtype=dtype)


def scalar(value, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=True, dtype=dtype)
