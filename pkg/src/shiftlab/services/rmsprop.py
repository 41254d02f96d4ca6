from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import ContractError

DEFAULT_LR = 1e-3
DEFAULT_RHO = 0.9
DEFAULT_EPS = 1e-8


@dataclass(frozen=True)
class RmsPropState:
    """Leaky mean of squared gradients for one parameter array."""

    v: np.ndarray
    rho: float = DEFAULT_RHO
    lr: float = DEFAULT_LR
    eps: float = DEFAULT_EPS

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ContractError(f"rho must lie in (0, 1), got {self.rho}")
        if self.lr <= 0.0 or self.eps <= 0.0:
            raise ContractError("learning rate and epsilon must be positive")
        if np.any(self.v < 0):
            raise ContractError("accumulator must be non-negative")

    @classmethod
    def zeros(cls, shape, **kwargs) -> "RmsPropState":
        return cls(v=np.zeros(shape, dtype=np.float64), **kwargs)


def rmsprop_step(state: RmsPropState, params: np.ndarray, grads: np.ndarray
                 ) -> tuple[np.ndarray, RmsPropState]:
    """One RMSProp update; pure, inputs are never modified.

    v' = rho*v + (1-rho)*g^2 ;  p' = p - lr*g / (sqrt(v') + eps)
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.v.shape:
        raise ContractError(
            f"rmsprop shapes differ: params {params.shape}, grads {grads.shape}, "
            f"state {state.v.shape}")
    v = state.rho * state.v + (1.0 - state.rho) * grads * grads
    new_params = params - state.lr * grads / (np.sqrt(v) + state.eps)
    return new_params, replace(state, v=v)


class RmsProp:
    """Named-parameter wrapper around ``rmsprop_step``."""

    def __init__(self, params: dict[str, np.ndarray], lr: float = DEFAULT_LR,
                 rho: float = DEFAULT_RHO, eps: float = DEFAULT_EPS) -> None:
        self.states = {k: RmsPropState.zeros(np.shape(p), rho=rho, lr=lr, eps=eps)
                       for k, p in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]
             ) -> dict[str, np.ndarray]:
        updated = {}
        for key, value in params.items():
            updated[key], self.states[key] = rmsprop_step(self.states[key], value, grads[key])
        return updated
