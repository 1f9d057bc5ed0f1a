"""
Dense float64 tensors with reverse-mode differentiation.

Every operation in this module returns a new immutable `Tensor`. When a `Tape`
is active in the current context, the operation is recorded together with the
vector-Jacobian product of its inputs, and `Tape.backward` replays the records
in strict reverse order. Tapes live in a context variable, so each thread (and
each forward/backward pass) owns its own.

Image maps use the layout batch x channels x height x width.
"""

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import settings
from .errors import NumericalError, ShapeError

VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_ACTIVE_TAPE: contextvars.ContextVar[Optional["Tape"]] = contextvars.ContextVar(
    "cycleseg_active_tape", default=None
)


# ============================================================================
# Values
# ============================================================================
class Tensor:
    """Immutable dense array of 64-bit floats."""

    __slots__ = ("_data",)

    def __init__(self, data) -> None:
        array = np.array(data, dtype=np.float64)
        if any(extent < 1 for extent in array.shape):
            raise ShapeError(f"Tensor extents must be positive, got {array.shape}")
        array.flags.writeable = False
        self._data = array

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the values."""
        return self._data.copy()

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self._data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"<{type(self).__name__} shape={self.shape}>"


class Parameter(Tensor):
    """Trainable leaf tensor. Its values are replaced, never mutated in place."""

    __slots__ = ()

    def assign(self, values) -> None:
        array = np.array(values, dtype=np.float64)
        if array.shape != self.shape:
            raise ShapeError(f"Cannot assign shape {array.shape} to parameter of shape {self.shape}")
        array.flags.writeable = False
        self._data = array


def _wrap(array: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    # keeps 0-d results 0-d
    array = np.require(array, dtype=np.float64, requirements="C")
    array.flags.writeable = False
    out._data = array
    return out


# ============================================================================
# Tape
# ============================================================================
@dataclass
class _Node:
    tensor: Tensor
    parents: Tuple[Optional[int], ...]
    vjp: Optional[VJP]


class Gradients:
    """Gradient buffers of one backward pass, looked up by tensor."""

    def __init__(self, tape: "Tape", buffers: List[Optional[np.ndarray]]) -> None:
        self._tape = tape
        self._buffers = buffers

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        node_id = self._tape.node_id(tensor)
        if node_id is None or self._buffers[node_id] is None:
            return np.zeros(tensor.shape)
        return self._buffers[node_id]

    def for_params(self, params: Sequence[Tensor]) -> List[np.ndarray]:
        return [self[p] for p in params]


class Tape:
    """Ordered record of operations; recording order is a topological order.

    Usage:
        with Tape() as tape:
            tape.watch(*params)
            loss = forward(...)
        grads = tape.backward(loss)
    """

    def __init__(self) -> None:
        self.nodes: List[_Node] = []
        self._index: Dict[int, int] = {}
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise RuntimeError("Tape is already active")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info) -> bool:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def watch(self, *tensors: Tensor) -> None:
        """Register leaf tensors whose gradients are wanted."""
        for tensor in tensors:
            if id(tensor) not in self._index:
                self._index[id(tensor)] = len(self.nodes)
                self.nodes.append(_Node(tensor, (), None))

    def node_id(self, tensor: Tensor) -> Optional[int]:
        return self._index.get(id(tensor))

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp: VJP) -> None:
        parents = tuple(self._index.get(id(t)) for t in inputs)
        if all(p is None for p in parents):
            return
        self._index[id(out)] = len(self.nodes)
        self.nodes.append(_Node(out, parents, vjp))

    def backward(self, loss: Tensor) -> Gradients:
        """Accumulate d(loss)/d(node) for every recorded node."""
        if loss.size != 1:
            raise ShapeError(f"backward() needs a single-element loss, got shape {loss.shape}")
        buffers: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        root = self.node_id(loss)
        if root is None:
            return Gradients(self, buffers)

        buffers[root] = np.ones(loss.shape)
        for idx in range(root, -1, -1):
            grad = buffers[idx]
            node = self.nodes[idx]
            if grad is None or node.vjp is None:
                continue
            for parent, parent_grad in zip(node.parents, node.vjp(grad)):
                if parent is None or parent_grad is None:
                    continue
                # no in-place accumulation: vjps may hand back their input buffer
                buffers[parent] = parent_grad if buffers[parent] is None else buffers[parent] + parent_grad
        return Gradients(self, buffers)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPE.get()


def backward(tape: Tape, scalar_loss: Tensor) -> Gradients:
    return tape.backward(scalar_loss)


def _emit(array: np.ndarray, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    out = _wrap(array)
    if settings.DEBUG and not np.all(np.isfinite(out.data)):
        raise NumericalError(f"Non-finite values produced (shape {out.shape})")
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        tape.record(out, inputs, vjp)
    return out


# ============================================================================
# Elementwise
# ============================================================================
UNARY_KINDS = ("sigmoid", "tanh", "relu")
BINARY_KINDS = ("add", "sub", "mul")


def _is_channel_bias(a: Tensor, b: Tensor) -> bool:
    return a.ndim == 4 and b.ndim == 1 and b.shape[0] == a.shape[1]


def elementwise(kind: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Apply an elementwise operation.

    Args:
        kind: One of add, sub, mul, sigmoid, tanh, relu
        a: First operand
        b: Second operand for binary kinds. Shapes must match, except that a
            per-channel bias vector may be added to a 4-D map.

    Returns:
        New tensor of a's shape

    Raises:
        ShapeError: On mismatched operand shapes
    """
    x = a.data
    if kind in UNARY_KINDS:
        if b is not None:
            raise ShapeError(f"{kind} takes a single operand")
        if kind == "sigmoid":
            z = np.exp(-np.abs(x))
            y = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
            return _emit(y, (a,), lambda g: (g * y * (1.0 - y),))
        if kind == "tanh":
            y = np.tanh(x)
            return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))
        mask = x > 0
        return _emit(np.where(mask, x, 0.0), (a,), lambda g: (np.where(mask, g, 0.0),))

    if kind not in BINARY_KINDS:
        raise ValueError(f"Unknown elementwise kind: {kind}")
    if b is None:
        raise ShapeError(f"{kind} needs two operands")

    if kind == "add" and a.shape != b.shape and _is_channel_bias(a, b):
        return _emit(
            x + b.data[None, :, None, None],
            (a, b),
            lambda g: (g, g.sum(axis=(0, 2, 3))),
        )
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")

    y_data = b.data
    if kind == "add":
        return _emit(x + y_data, (a, b), lambda g: (g, g))
    if kind == "sub":
        return _emit(x - y_data, (a, b), lambda g: (g, -g))
    return _emit(x * y_data, (a, b), lambda g: (g * y_data, g * x))


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("mul", a, b)


def sigmoid(x: Tensor) -> Tensor:
    return elementwise("sigmoid", x)


def tanh(x: Tensor) -> Tensor:
    return elementwise("tanh", x)


def relu(x: Tensor) -> Tensor:
    return elementwise("relu", x)


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _emit(x.data * factor, (x,), lambda g: (g * factor,))


def average(tensors: Sequence[Tensor]) -> Tensor:
    """Mean of equally shaped tensors; a single tensor is returned as is."""
    if not tensors:
        raise ShapeError("average() of no tensors")
    if len(tensors) == 1:
        return tensors[0]
    acc = tensors[0]
    for t in tensors[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(tensors))


# ============================================================================
# Linear algebra & shape
# ============================================================================
def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    x, y = a.data, b.data
    return _emit(x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    source_shape = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(source_shape),))


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat() of no tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from e
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)))


def total(x: Tensor) -> Tensor:
    """Sum of all elements as a 0-d tensor."""
    source_shape = x.shape
    return _emit(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, source_shape).copy(),))


def flatten_map(x: Tensor) -> Tensor:
    """1 x C x H x W map -> (H*W) x C matrix, rows in row-major pixel order."""
    if x.ndim != 4 or x.shape[0] != 1:
        raise ShapeError(f"flatten_map expects a 1xCxHxW map, got {x.shape}")
    _, channels, height, width = x.shape
    return transpose(reshape(x, (channels, height * width)), (1, 0))


def unflatten_map(rows: Tensor, height: int, width: int) -> Tensor:
    """(H*W) x C matrix -> 1 x C x H x W map."""
    if rows.ndim != 2 or rows.shape[0] != height * width:
        raise ShapeError(f"unflatten_map: {rows.shape} does not hold {height}x{width} rows")
    return reshape(transpose(rows, (1, 0)), (1, rows.shape[1], height, width))


# ============================================================================
# Softmax
# ============================================================================
def softmax_rows(s: Tensor) -> Tensor:
    if s.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got {s.shape}")
    shifted = s.data - s.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    return _emit(p, (s,), lambda g: (p * (g - (g * p).sum(axis=1, keepdims=True)),))


def log_softmax_rows(s: Tensor) -> Tensor:
    if s.ndim != 2:
        raise ShapeError(f"log_softmax_rows expects a matrix, got {s.shape}")
    shifted = s.data - s.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - log_z
    p = np.exp(out)
    return _emit(out, (s,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


# ============================================================================
# Convolution
# ============================================================================
def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor], stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding (no kernel flip).

    Args:
        x: Input map N x C x H x W
        kernel: Weights O x C x kH x kW
        bias: Per-output-channel bias of length O, or None
        stride: Positive step between windows
        padding: Non-negative zero border on each side

    Returns:
        Map N x O x floor((H + 2p - kH)/stride) + 1 x floor((W + 2p - kW)/stride) + 1

    Raises:
        ShapeError: On channel mismatch or non-positive output size
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} padding={padding}")
    n, channels, height, width = x.shape
    out_channels, in_channels, kh, kw = kernel.shape
    if in_channels != channels:
        raise ShapeError(f"conv2d: kernel expects {in_channels} channels, input has {channels}")
    if bias is not None and bias.shape != (out_channels,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {out_channels} outputs")
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d: non-positive output size {out_h}x{out_w}")

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    weights = kernel.data
    out = np.tensordot(windows, weights, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def vjp(g: np.ndarray):
        grad_kernel = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                contribution = np.tensordot(g, weights[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += contribution
        grad_x = grad_padded[:, :, padding:padding + height, padding:padding + width]
        grad_bias = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return grad_x, grad_kernel, grad_bias

    inputs = (x, kernel, bias) if bias is not None else (x, kernel)
    return _emit(out, inputs, vjp)


# ============================================================================
# Pooling & resampling
# ============================================================================
POOL_KINDS = ("roi_avg", "roi_max")


def bin_edges(extent: int, bins: int) -> List[int]:
    """Floor partition of [0, extent) into `bins` near-equal bins."""
    return [(i * extent) // bins for i in range(bins + 1)]


def pool(kind: str, x: Tensor, out_h: int, out_w: int) -> Tensor:
    """ROI pooling of the whole map onto an out_h x out_w grid.

    Bin i along an axis of extent H spans floor(i*H/out_h) .. floor((i+1)*H/out_h).
    """
    if kind not in POOL_KINDS:
        raise ValueError(f"Unknown pool kind: {kind}")
    if x.ndim != 4:
        raise ShapeError(f"pool expects a 4-D map, got {x.shape}")
    n, channels, height, width = x.shape
    if not (1 <= out_h <= height and 1 <= out_w <= width):
        raise ShapeError(f"pool: output {out_h}x{out_w} does not fit input {height}x{width}")

    rows, cols = bin_edges(height, out_h), bin_edges(width, out_w)
    data = x.data
    out = np.empty((n, channels, out_h, out_w))
    argmax: Dict[Tuple[int, int], np.ndarray] = {}
    for i in range(out_h):
        for j in range(out_w):
            region = data[:, :, rows[i]:rows[i + 1], cols[j]:cols[j + 1]].reshape(n, channels, -1)
            if kind == "roi_avg":
                out[:, :, i, j] = region.mean(axis=-1)
            else:
                idx = region.argmax(axis=-1)
                argmax[(i, j)] = idx
                out[:, :, i, j] = np.take_along_axis(region, idx[..., None], axis=-1)[..., 0]

    def vjp(g: np.ndarray):
        grad = np.zeros(data.shape)
        for i in range(out_h):
            for j in range(out_w):
                bh, bw = rows[i + 1] - rows[i], cols[j + 1] - cols[j]
                if kind == "roi_avg":
                    block = np.broadcast_to(g[:, :, i, j][..., None, None] / (bh * bw), (n, channels, bh, bw))
                else:
                    flat = np.zeros((n, channels, bh * bw))
                    np.put_along_axis(flat, argmax[(i, j)][..., None], g[:, :, i, j][..., None], axis=-1)
                    block = flat.reshape(n, channels, bh, bw)
                grad[:, :, rows[i]:rows[i + 1], cols[j]:cols[j + 1]] = block
        return (grad,)

    return _emit(out, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    return pool("roi_avg", x, 1, 1)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic align-corners-false interpolation weights, n_out x n_in."""
    dst = np.arange(n_out)
    src = np.maximum((dst + 0.5) * (n_in / n_out) - 0.5, 0.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    same = hi == lo
    w_lo = np.where(same, 1.0, 1.0 - frac)
    w_hi = np.where(same, 0.0, frac)
    matrix = np.zeros((n_out, n_in))
    np.add.at(matrix, (dst, lo), w_lo)
    np.add.at(matrix, (dst, hi), w_hi)
    return matrix


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear upsampling with align_corners=False; 1x1 maps broadcast exactly."""
    if x.ndim != 4:
        raise ShapeError(f"upsample_bilinear expects a 4-D map, got {x.shape}")
    height, width = x.shape[2], x.shape[3]
    if out_h < height or out_w < width:
        raise ShapeError(f"upsample_bilinear: {height}x{width} -> {out_h}x{out_w} is not an upsampling")
    rows, cols = _interp_matrix(height, out_h), _interp_matrix(width, out_w)
    out = np.matmul(np.matmul(rows, x.data), cols.T)
    return _emit(out, (x,), lambda g: (np.matmul(np.matmul(rows.T, g), cols),))


# ============================================================================
# Optimizer
# ============================================================================
@dataclass
class AdamState:
    """Adam hyperparameters and per-parameter moment accumulators."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray], state: AdamState) -> Sequence[Parameter]:
    """Bias-corrected Adam with decoupled weight decay.

    Raises:
        ShapeError: If grads or accumulators do not line up with params
    """
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if np.shape(g) != p.shape:
            raise ShapeError(f"adam_step: gradient shape {np.shape(g)} != parameter shape {p.shape}")
    if not state.first_moment:
        state.first_moment = [np.zeros(p.shape) for p in params]
        state.second_moment = [np.zeros(p.shape) for p in params]
    if [m.shape for m in state.first_moment] != [p.shape for p in params]:
        raise ShapeError("adam_step: accumulator shapes do not match parameters")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for idx, (p, g) in enumerate(zip(params, grads)):
        m = state.beta1 * state.first_moment[idx] + (1.0 - state.beta1) * g
        v = state.beta2 * state.second_moment[idx] + (1.0 - state.beta2) * g * g
        state.first_moment[idx], state.second_moment[idx] = m, v
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps) + state.weight_decay * p.data
        p.assign(p.data - state.lr * update)
    return params
