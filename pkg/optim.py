"""
Optimizer module for the mixture-activation training engine
Adam with per-parameter moments and the nonnegativity projection for mixture weights
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping

import numpy as np

from errors import ConfigError, StateError
from mixture import EPS, MixtureWeights
from tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """First/second moments per named parameter plus the step counter"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
        )

    def start_phase(self, reset_moments: bool = False) -> None:
        """Restart the bias-correction clock; moments persist unless reset"""
        self.t = 0
        if reset_moments:
            for name in self.m:
                self.m[name].fill(0.0)
                self.v[name].fill(0.0)


def zero_grad(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def project_nonneg(w: MixtureWeights) -> None:
    """w_i <- max(w_i, 1e-6), in place"""
    np.maximum(w.w.data, EPS, out=w.w.data)


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float,
              mixtures: Iterable[MixtureWeights] = ()) -> None:
    """
    One bias-corrected Adam update over the trainable parameters, then
    the projection of every trainable mixture layer onto w >= 1e-6

    Frozen parameters (requires_grad False) are skipped entirely, so
    their moments stay untouched.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t

    for name, p in params.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise StateError(f"adam_step: trainable parameter '{name}' has no gradient")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        g = p.grad
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)

    for w in mixtures:
        if w.w.requires_grad:
            project_nonneg(w)
