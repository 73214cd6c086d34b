"""
Tensor module for the mixture-activation training engine
Dense float64 arrays with tape-based reverse-mode differentiation
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import ConfigError, DataError, ShapeError, StateError

logger = logging.getLogger(__name__)

Grad = Optional[np.ndarray]
BackwardRule = Callable[[np.ndarray], Tuple[Grad, ...]]
Operand = Union["Tensor", float]

_uids = itertools.count()
_tape_stack: List["Tape"] = []


class Tensor:
    """n-dimensional float64 array with an optional gradient slot"""

    __slots__ = ("data", "requires_grad", "grad", "uid")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Grad = None
        self.uid = next(_uids)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    """One recorded primitive: inputs, output and the rule mapping g_out to g_inputs"""

    node_id: int
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardRule


class Tape:
    """
    Ordered record of primitive operations

    Operations are recorded only while the tape is active
    (``with Tape() as tape:``) and only when an input requires grad.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self.next_id = 0
        self._outputs: Dict[int, Node] = {}

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, rule: BackwardRule) -> Node:
        node = Node(self.next_id, op, inputs, output, rule)
        self.next_id += 1
        self.nodes.append(node)
        self._outputs[output.uid] = node
        return node

    def produced(self, tensor: Tensor) -> bool:
        return tensor.uid in self._outputs

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)


def active_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


def _result(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], rule: BackwardRule) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if out.requires_grad and tape is not None:
        tape.record(op, inputs, out, rule)
    return out


def _as_tensor(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    return g.reshape(-1, shape[-1]).sum(axis=0).reshape(shape)


def _check_operands(op: str, a: Tensor, b: Tensor) -> None:
    # equal shapes, a scalar operand, or a bias matching the trailing dimension
    if b.shape == a.shape or b.ndim == 0:
        return
    if b.ndim == 1 and a.ndim >= 1 and b.shape[0] == a.shape[-1]:
        return
    raise ShapeError(f"{op}: operand shape {b.shape} does not fit {a.shape}")


# =============================================================================
# Backward rules (module level so each can be inspected or swapped in tests)
# =============================================================================

def _relu_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * (x > 0)


def _tanh_grad(out: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * (1.0 - out * out)


def _sin_grad(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g * np.cos(x)


# =============================================================================
# Primitives
# =============================================================================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [m x k] and b [k x n]"""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def rule(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result("matmul", a.data @ b.data, (a, b), rule)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation with zero padding

    Args:
        x: input [N x C x H x W]
        kernel: filters [F x C x kh x kw]
        bias: per-filter bias [F]
        stride: step between windows, >= 1
        padding: zero rows/columns added on every side

    Returns:
        Output [N x F x H' x W'] with H' = (H + 2*padding - kh) / stride + 1
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: kernel {kernel.shape} expects {kc} channels, input {x.shape} has {c}")
    if bias.shape != (f,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {f} filters")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride} and {padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ConfigError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ConfigError(
            f"conv2d: non-integer output size for input {h}x{w}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}"
        )
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    kmat = kernel.data.reshape(f, -1)
    out = (cols @ kmat.T).reshape(n, ho, wo, f).transpose(0, 3, 1, 2) + bias.data[None, :, None, None]

    def rule(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
        gk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ kmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            gx = gxp[:, :, padding:padding + h, padding:padding + w]
        return gx, gk, gb

    return _result("conv2d", np.ascontiguousarray(out), (x, kernel, bias), rule)


def relu(x: Tensor) -> Tensor:
    return _result("relu", np.maximum(x.data, 0.0), (x,), lambda g: (_relu_grad(x.data, g),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result("tanh", out, (x,), lambda g: (_tanh_grad(out, g),))


def sin(x: Tensor) -> Tensor:
    return _result("sin", np.sin(x.data), (x,), lambda g: (_sin_grad(x.data, g),))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result("scale", x.data * c, (x,), lambda g: (g * c,))


def add(a: Tensor, b: Operand) -> Tensor:
    b = _as_tensor(b)
    if a.ndim == 0 and b.ndim > 0:
        a, b = b, a
    _check_operands("add", a, b)
    return _result("add", a.data + b.data, (a, b), lambda g: (g, _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Operand) -> Tensor:
    b = _as_tensor(b)
    if a.ndim == 0 and b.ndim > 0:
        a, b = b, a
    _check_operands("mul", a, b)

    def rule(g):
        ga = g * b.data if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result("mul", a.data * b.data, (a, b), rule)


def div_scalar(x: Tensor, s: Operand) -> Tensor:
    """Divide by a python float or a single-element tensor (quotient rule into s)"""
    if not isinstance(s, Tensor):
        s = float(s)
        return _result("div_scalar", x.data / s, (x,), lambda g: (g / s,))
    if s.size != 1:
        raise ShapeError(f"div_scalar: divisor must hold one element, got shape {s.shape}")
    denom = s.data.reshape(-1)[0]

    def rule(g):
        gx = g / denom if x.requires_grad else None
        gs = np.full(s.shape, -(g * x.data).sum() / (denom * denom)) if s.requires_grad else None
        return gx, gs

    return _result("div_scalar", x.data / denom, (x, s), rule)


_UNARY = {"relu": relu, "tanh": tanh, "sin": sin}
_BINARY = {"scale": scale, "add": add, "mul": mul, "div_scalar": div_scalar}


def elementwise(x: Tensor, primitive: str, operand: Optional[Operand] = None) -> Tensor:
    """Apply one named elementwise primitive: relu, tanh, sin, scale, add, mul, div_scalar"""
    if primitive in _UNARY:
        return _UNARY[primitive](x)
    if primitive in _BINARY:
        if operand is None:
            raise ConfigError(f"elementwise: '{primitive}' needs an operand")
        return _BINARY[primitive](x, operand)
    raise ConfigError(f"elementwise: unknown primitive '{primitive}'")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"reshape: {x.shape} -> {tuple(shape)}: {e}") from e
    return _result("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def select(x: Tensor, index: int) -> Tensor:
    """Element ``index`` of a 1-D tensor as a scalar tensor"""
    if x.ndim != 1:
        raise ShapeError(f"select: expected a 1-D tensor, got {x.shape}")

    def rule(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _result("select", np.array(x.data[index]), (x,), rule)


def sum_all(x: Tensor) -> Tensor:
    return _result("sum", np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    return _result("mean", np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / x.size),))


def max_pool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; gradient goes to the first row-major argmax"""
    if x.ndim != 4:
        raise ShapeError(f"max_pool2x2: expected a 4-D tensor, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2x2: spatial dims must be even, got {h}x{w}")
    windows = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    argmax = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, argmax, axis=-1)[..., 0]

    def rule(g):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, argmax, g[..., None], axis=-1)
        return (gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return _result("max_pool2x2", out, (x,), rule)


def reduce(x: Tensor, kind: str) -> Tensor:
    """Reductions: ``sum`` and ``mean`` over all elements, ``max_over_window`` (2x2 pooling)"""
    if kind == "sum":
        return sum_all(x)
    if kind == "mean":
        return mean_all(x)
    if kind == "max_over_window":
        return max_pool2x2(x)
    raise ConfigError(f"reduce: unknown kind '{kind}'")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch mean of -log softmax(logits)[label], stabilized by max subtraction"""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if n and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"softmax_cross_entropy: labels must lie in [0, {k})")
    rows = np.arange(n)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = -(z[rows, labels] - lse).mean()

    def rule(g):
        probs = np.exp(z - lse[:, None])
        probs[rows, labels] -= 1.0
        return (probs * (float(g) / n),)

    return _result("softmax_cross_entropy", np.array(loss), (logits,), rule)


# =============================================================================
# Reverse pass
# =============================================================================

def backward(tape: Tape, loss: Tensor) -> None:
    """
    Replay the tape in reverse and fill ``grad`` on the leaf tensors
    (requires_grad inputs no recorded op produced) reachable from ``loss``

    Gradients from several uses of one tensor add up. Leaf tensors
    accumulate onto an existing ``grad``; callers zero it between steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not tape.produced(loss):
        raise StateError("backward: loss was not recorded on this tape")

    grads: Dict[int, np.ndarray] = {loss.uid: np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output.uid, None)
        if g is None:
            continue
        for tensor, g_in in zip(node.inputs, node.backward(g)):
            if g_in is None or not tensor.requires_grad:
                continue
            grads[tensor.uid] = grads[tensor.uid] + g_in if tensor.uid in grads else g_in
            if not tape.produced(tensor):
                leaves[tensor.uid] = tensor

    for uid, tensor in leaves.items():
        g = np.array(grads[uid], dtype=np.float64).reshape(tensor.shape)
        tensor.grad = g if tensor.grad is None else tensor.grad + g


@dataclass
class GradcheckReport:
    """Max relative errors of one gradient check"""

    central: float  # plain central differences at the base step
    refined: float  # after smaller steps and one-sided stencils on kinked elements
    elements: int


def _relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _central_difference(f: Callable[[], Tensor], p: Tensor, index: int, h: float) -> float:
    original = p.data.flat[index]
    p.data.flat[index] = original + h
    plus = f().item()
    p.data.flat[index] = original - h
    minus = f().item()
    p.data.flat[index] = original
    return (plus - minus) / (2.0 * h)


def _one_sided_difference(f: Callable[[], Tensor], p: Tensor, index: int, h: float,
                          base: float, direction: int) -> float:
    # second order, sampling only theta and the side given by direction
    original = p.data.flat[index]
    p.data.flat[index] = original + direction * h
    near = f().item()
    p.data.flat[index] = original + direction * 2.0 * h
    far = f().item()
    p.data.flat[index] = original
    return direction * (-3.0 * base + 4.0 * near - far) / (2.0 * h)


def gradcheck_report(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-3,
                     refine: int = 2, tol: float = 1e-4) -> GradcheckReport:
    """
    Compare tape gradients with finite differences

    Every element is first checked with a central difference at ``h``.
    An element that disagrees beyond ``tol`` may sit within a step of a
    ReLU or max-pool kink, where the central stencil averages two slopes.
    It is retried with one-sided stencils, which see only the smooth piece
    holding theta, and with central steps h/10, h/100, ... (``refine`` of
    them). A wrong backward rule disagrees under every stencil.
    """
    if h <= 0:
        raise ConfigError(f"gradcheck: step must be positive, got {h}")
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    base = loss.item()

    central = refined = 0.0
    for p, grad in zip(params, analytic):
        for index in range(p.size):
            a = grad.flat[index]
            first = best = _relative_error(a, _central_difference(f, p, index, h))
            for k in range(refine + 1):
                if best <= tol:
                    break
                step = h / 10 ** k
                candidates = [_one_sided_difference(f, p, index, step, base, d) for d in (1, -1)]
                if k > 0:
                    candidates.append(_central_difference(f, p, index, step))
                best = min(best, *(_relative_error(a, n) for n in candidates))
            central = max(central, first)
            refined = max(refined, best)
    elements = sum(p.size for p in params)
    logger.debug(f"gradcheck: {elements} elements, max rel error {central:.3e} at h={h:g}, {refined:.3e} refined")
    return GradcheckReport(central=float(central), refined=float(refined), elements=elements)


def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-3,
              refine: int = 2, tol: float = 1e-4) -> float:
    """
    Max over elements of |a - n| / max(|a|, |n|, 1e-8), tape gradient ``a``
    against finite difference ``n``, kink-aware (see ``gradcheck_report``)
    """
    return gradcheck_report(f, params, h, refine, tol).refined
