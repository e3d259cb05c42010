"""Decoupled-weight-decay Adam on raw numpy parameter arrays.

Used both for editor training (through autodiff Tensors) and for the
Gaussian-scene update (analytic gradients); in both cases the optimizer
mutates the parameter arrays in place.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import NumericError, ShapeError


class OptimizerState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray],
               state: OptimizerState) -> None:
    """One AdamW update, in place. Rejects non-finite gradients without
    touching parameters or moments."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(f"adamw_step: got {len(params)} params, {len(grads)} grads, "
                         f"state of size {len(state.m)}")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"adamw_step: param shape {p.shape} vs grad shape {g.shape}")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("adamw_step: non-finite gradient, step rejected")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p -= state.lr * (mhat / (np.sqrt(vhat) + state.eps))
        if state.weight_decay != 0.0:
            p -= state.lr * state.weight_decay * p


class AdamW:
    """Tensor-facing wrapper: steps every tracked Tensor from its .grad."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.state = OptimizerState([p.data for p in self.params], lr=lr,
                                    betas=betas, eps=eps, weight_decay=weight_decay)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = float(value)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = []
        for p in self.params:
            if p.grad is None:
                grads.append(np.zeros_like(p.data))
            else:
                grads.append(np.asarray(p.grad, dtype=p.data.dtype))
        adamw_step([p.data for p in self.params], grads, self.state)
