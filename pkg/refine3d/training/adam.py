"""
Adam optimizer and learning-rate schedule
"""
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from refine3d.autodiff.tensor import Tensor
from refine3d.errors import GraphError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8

BASE_LR = 0.001
DECAY_EPOCHS = 150
DECAY_FACTOR = 2.0


@dataclass
class AdamState:
    """First/second moments per parameter name and the applied-step counter tau"""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    tau: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS

    def moments_for(self, name: str, like: np.ndarray):
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)
        return self.m[name], self.v[name]


def adam_step(
    params: Dict[str, Tensor],
    state: AdamState,
    lr: float,
    grads: Optional[Dict[str, np.ndarray]] = None,
    grad_scale: float = 1.0,
) -> None:
    """
    One bias-corrected Adam update of `params` in place.

    Gradients come from `grads` when given, else from each tensor's `.grad`.
    `grad_scale` multiplies every gradient before it enters the moments.
    With lr == 0 the moments and tau still advance but no parameter byte changes.
    """
    resolved = {}
    for name, tensor in params.items():
        g = grads.get(name) if grads is not None else tensor.grad
        if g is None:
            raise GraphError(f"adam_step: no gradient for parameter {name!r}")
        if g.shape != tensor.shape:
            raise GraphError(f"adam_step: gradient {list(g.shape)} does not match {name} {list(tensor.shape)}")
        resolved[name] = g

    state.tau += 1
    bc1 = 1.0 - state.beta1 ** state.tau
    bc2 = 1.0 - state.beta2 ** state.tau
    for name, tensor in params.items():
        g = resolved[name] * grad_scale if grad_scale != 1.0 else resolved[name]
        m, v = state.moments_for(name, tensor.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if lr == 0.0:
            continue
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        tensor.data -= update.astype(tensor.dtype, copy=False)


def lr_at(
    epoch: int,
    base: float = BASE_LR,
    decay_epochs: int = DECAY_EPOCHS,
    factor: float = DECAY_FACTOR,
    mode: str = "once",
) -> float:
    """
    Learning rate for `epoch`.

    "once": divided by `factor` from `decay_epochs` on. "every": divided again at
    every further multiple of `decay_epochs`.
    """
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    if mode == "once":
        return base / factor if epoch >= decay_epochs else base
    if mode == "every":
        return base / factor ** (epoch // decay_epochs)
    raise ValueError(f"unknown lr decay mode {mode!r}")
