"""
Mixture activation module
A(x) = P1*relu(x) + P2*tanh(x) + P3*sin(x) with P_i = w_i / sum(w_j)
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

import tensor as T
from errors import ConfigError
from tensor import Tensor

# Projection floor keeping sum(w) > 0
EPS = 1e-6

BASIS_NAMES = ("relu", "tanh", "sin")
_BASIS = {1: T.relu, 2: T.tanh, 3: T.sin}


@dataclass
class MixtureWeights:
    """Raw per-layer weights (w1, w2, w3), one slot per basis function"""

    w: Tensor
    layer_name: str

    def values(self) -> np.ndarray:
        return self.w.data.copy()


@dataclass
class SimplexCoords:
    """Normalized weights P, nonnegative and summing to one"""

    P: Tensor

    def values(self) -> np.ndarray:
        return self.P.data.copy()


def init_mixture(layer_name: str, value: float = 1.0, requires_grad: bool = True) -> MixtureWeights:
    return MixtureWeights(Tensor(np.full(3, float(value)), requires_grad=requires_grad), layer_name)


def basis_eval(i: int, x: Tensor) -> Tensor:
    """f1 = relu, f2 = tanh, f3 = sin"""
    if i not in _BASIS:
        raise ConfigError(f"basis index must be 1, 2 or 3, got {i}")
    return _BASIS[i](x)


def normalize_weights(w: MixtureWeights) -> SimplexCoords:
    # quotient through the sum: both numerator and denominator carry gradient
    return SimplexCoords(T.div_scalar(w.w, T.sum_all(w.w)))


def mixture_forward(x: Tensor, w: MixtureWeights, basis: Sequence[int] = (1, 2, 3)) -> Tensor:
    """
    Evaluate the mixture activation elementwise

    Args:
        x: pre-activation tensor of any shape
        w: raw weights of this layer
        basis: basis function placed in each weight slot

    Returns:
        Tensor shaped like x; gradients reach both x and w
    """
    P = normalize_weights(w).P
    out = None
    for slot, i in enumerate(basis):
        term = T.mul(basis_eval(i, x), T.select(P, slot))
        out = term if out is None else T.add(out, term)
    return out


def dominant_slot(P: Sequence[float]) -> Tuple[int, str]:
    """Index and basis name of the largest coordinate (first wins on ties)"""
    slot = int(np.argmax(np.asarray(P, dtype=np.float64)))
    return slot, BASIS_NAMES[slot]
