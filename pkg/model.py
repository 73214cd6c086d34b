"""
Model module for the mixture-activation training engine
Two convolutional layers, two fully connected layers and three mixture activations
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

import tensor as T
from errors import ConfigError, DataError, ShapeError
from mixture import MixtureWeights, init_mixture, mixture_forward
from tensor import Tensor

logger = logging.getLogger(__name__)

IMAGE_SIZE = 28
NUM_CLASSES = 10
PARAMETER_GROUPS = {
    "backbone": [
        "conv1.kernel", "conv1.bias", "conv2.kernel", "conv2.bias",
        "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias",
    ],
    "mixture": ["act1.w", "act2.w", "act3.w"],
}


@dataclass
class Model:
    """
    conv1 -> act1 -> pool -> conv2 -> act2 -> pool -> fc1 -> act3 -> fc2

    Fully connected weights are stored [in x out].
    """

    conv1_kernel: Tensor
    conv1_bias: Tensor
    conv2_kernel: Tensor
    conv2_bias: Tensor
    fc1_weight: Tensor
    fc1_bias: Tensor
    fc2_weight: Tensor
    fc2_bias: Tensor
    act1: MixtureWeights
    act2: MixtureWeights
    act3: MixtureWeights
    basis: Tuple[int, int, int] = (1, 2, 3)
    groups: Dict[str, List[str]] = field(default_factory=lambda: {k: list(v) for k, v in PARAMETER_GROUPS.items()})

    def parameters(self) -> Dict[str, Tensor]:
        """All trainable tensors, backbone first, in a fixed order"""
        return {
            "conv1.kernel": self.conv1_kernel,
            "conv1.bias": self.conv1_bias,
            "conv2.kernel": self.conv2_kernel,
            "conv2.bias": self.conv2_bias,
            "fc1.weight": self.fc1_weight,
            "fc1.bias": self.fc1_bias,
            "fc2.weight": self.fc2_weight,
            "fc2.bias": self.fc2_bias,
            "act1.w": self.act1.w,
            "act2.w": self.act2.w,
            "act3.w": self.act3.w,
        }

    def mixtures(self) -> List[MixtureWeights]:
        return [self.act1, self.act2, self.act3]

    @property
    def channels(self) -> Tuple[int, int]:
        return self.conv1_kernel.shape[0], self.conv2_kernel.shape[0]

    @property
    def hidden(self) -> int:
        return self.fc1_weight.shape[1]


def _uniform(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)), requires_grad=True)


def _zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def expected_parameter_count(channels: Tuple[int, int], hidden: int) -> int:
    c1, c2 = channels
    flat = c2 * (IMAGE_SIZE // 4) ** 2
    return (c1 * 9 + c1) + (c2 * c1 * 9 + c2) + (flat * hidden + hidden) + (hidden * NUM_CLASSES + NUM_CLASSES) + 9


def parameter_count(m: Model) -> int:
    return sum(t.size for t in m.parameters().values())


def build_model(seed: int, channels: Tuple[int, int] = (8, 16), hidden: int = 128) -> Model:
    """
    Build the classifier with seeded fan-in uniform weights, zero biases
    and uniform mixture weights (w = 1 in every layer)
    """
    rng = np.random.default_rng(seed)
    c1, c2 = channels
    flat = c2 * (IMAGE_SIZE // 4) ** 2
    m = Model(
        conv1_kernel=_uniform(rng, (c1, 1, 3, 3), 1 * 9),
        conv1_bias=_zeros(c1),
        conv2_kernel=_uniform(rng, (c2, c1, 3, 3), c1 * 9),
        conv2_bias=_zeros(c2),
        fc1_weight=_uniform(rng, (flat, hidden), flat),
        fc1_bias=_zeros(hidden),
        fc2_weight=_uniform(rng, (hidden, NUM_CLASSES), hidden),
        fc2_bias=_zeros(NUM_CLASSES),
        act1=init_mixture("act1"),
        act2=init_mixture("act2"),
        act3=init_mixture("act3"),
    )
    count = parameter_count(m)
    if count != expected_parameter_count(channels, hidden):
        raise ShapeError(f"parameter count {count} does not match the layer dimensions")
    logger.debug(f"✅ Model built: channels={channels}, hidden={hidden}, {count:,} parameters")
    return m


def model_from_arrays(arrays: Dict[str, np.ndarray]) -> Model:
    """Rebuild a model from named parameter arrays (checkpoint layout)"""
    missing = [name for names in PARAMETER_GROUPS.values() for name in names if name not in arrays]
    if missing:
        raise ShapeError(f"missing parameter arrays: {missing}")

    def t(name):
        return Tensor(np.array(arrays[name], dtype=np.float64), requires_grad=True)

    return Model(
        conv1_kernel=t("conv1.kernel"), conv1_bias=t("conv1.bias"),
        conv2_kernel=t("conv2.kernel"), conv2_bias=t("conv2.bias"),
        fc1_weight=t("fc1.weight"), fc1_bias=t("fc1.bias"),
        fc2_weight=t("fc2.weight"), fc2_bias=t("fc2.bias"),
        act1=MixtureWeights(t("act1.w"), "act1"),
        act2=MixtureWeights(t("act2.w"), "act2"),
        act3=MixtureWeights(t("act3.w"), "act3"),
    )


def model_forward(m: Model, batch: Tensor) -> Tensor:
    """Logits [N x 10] for a batch [N x 1 x 28 x 28] of pixels in [0, 1]"""
    if batch.ndim != 4 or batch.shape[1:] != (1, IMAGE_SIZE, IMAGE_SIZE):
        raise ShapeError(f"model_forward: expected [N x 1 x 28 x 28], got {batch.shape}")
    if batch.size and (batch.data.min() < 0.0 or batch.data.max() > 1.0):
        raise DataError("model_forward: pixel values must lie in [0, 1]")

    h = T.conv2d(batch, m.conv1_kernel, m.conv1_bias, stride=1, padding=1)
    h = T.max_pool2x2(mixture_forward(h, m.act1, m.basis))
    h = T.conv2d(h, m.conv2_kernel, m.conv2_bias, stride=1, padding=1)
    h = T.max_pool2x2(mixture_forward(h, m.act2, m.basis))
    h = T.reshape(h, (batch.shape[0], -1))
    h = T.add(T.matmul(h, m.fc1_weight), m.fc1_bias)
    h = mixture_forward(h, m.act3, m.basis)
    return T.add(T.matmul(h, m.fc2_weight), m.fc2_bias)


def set_trainable(m: Model, group: str, flag: bool) -> None:
    """Toggle requires_grad for every tensor of a parameter group"""
    if group not in m.groups:
        raise ConfigError(f"unknown parameter group '{group}', expected one of {list(m.groups)}")
    params = m.parameters()
    for name in m.groups[group]:
        params[name].requires_grad = flag


def snapshot(m: Model, group: str) -> Dict[str, np.ndarray]:
    """Copies of a group's arrays, for freeze-contract checks"""
    if group not in m.groups:
        raise ConfigError(f"unknown parameter group '{group}'")
    params = m.parameters()
    return {name: params[name].data.copy() for name in m.groups[group]}
