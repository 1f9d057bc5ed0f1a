"""ConvLSTM cell shared by every branch at a refined level."""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .errors import ShapeError
from .layers import ConvParams, ParamSet
from .tensor import Parameter, Tensor, add, conv2d, mul, sigmoid, tanh

GATES = ("i", "f", "o", "c")


@dataclass
class ConvLSTMParams(ParamSet):
    w_xi: Parameter
    w_hi: Parameter
    w_xf: Parameter
    w_hf: Parameter
    w_xo: Parameter
    w_ho: Parameter
    w_xc: Parameter
    w_hc: Parameter
    b_i: Parameter
    b_f: Parameter
    b_o: Parameter
    b_c: Parameter
    # 1x1 projection of the encoder feature into the initial state
    projection: ConvParams

    @classmethod
    def init(cls, rng: np.random.Generator, in_channels: int, width: int, size: int = 3) -> "ConvLSTMParams":
        std = 1.0 / np.sqrt(width * size * size)

        def kernel() -> Parameter:
            return Parameter(rng.normal(0.0, std, (width, width, size, size)))

        kernels = {name: kernel() for name in
                   ("w_xi", "w_hi", "w_xf", "w_hf", "w_xo", "w_ho", "w_xc", "w_hc")}
        biases = {f"b_{g}": Parameter(np.zeros(width)) for g in GATES}
        return cls(**kernels, **biases, projection=ConvParams.init(rng, width, in_channels))

    @property
    def width(self) -> int:
        return self.w_xi.shape[0]


@dataclass
class ConvLSTMState:
    hidden: Tensor
    cell: Tensor

    def __post_init__(self) -> None:
        if self.hidden.shape != self.cell.shape:
            raise ShapeError(f"Hidden {self.hidden.shape} and cell {self.cell.shape} shapes differ")


def gate_activations(x: Tensor, prev: ConvLSTMState, params: ConvLSTMParams) -> Dict[str, Tensor]:
    """Gates i, f, o in (0, 1) and the pre-gated candidate tanh(...) for one step."""
    if x.shape != prev.hidden.shape:
        raise ShapeError(f"Input {x.shape} does not match state {prev.hidden.shape}")
    if x.ndim != 4 or x.shape[1] != params.width:
        raise ShapeError(f"Input has {x.shape[1] if x.ndim == 4 else '?'} channels, cell width is {params.width}")
    h = prev.hidden

    def pre(w_x: Parameter, w_h: Parameter, b: Parameter) -> Tensor:
        return add(conv2d(x, w_x, b, padding=1), conv2d(h, w_h, None, padding=1))

    return {
        "i": sigmoid(pre(params.w_xi, params.w_hi, params.b_i)),
        "f": sigmoid(pre(params.w_xf, params.w_hf, params.b_f)),
        "o": sigmoid(pre(params.w_xo, params.w_ho, params.b_o)),
        "c": tanh(pre(params.w_xc, params.w_hc, params.b_c)),
    }


def cell_step(x: Tensor, prev: ConvLSTMState, params: ConvLSTMParams,
              standard_candidate: bool = False) -> ConvLSTMState:
    """Advance one ConvLSTM step.

    By default the input gate scales the candidate and then scales it again
    in the cell update (C = f*C + i*(i*tanh(.))). `standard_candidate=True`
    applies the input gate once, as in a conventional LSTM.
    """
    gates = gate_activations(x, prev, params)
    candidate = gates["c"] if standard_candidate else mul(gates["i"], gates["c"])
    cell = add(mul(gates["f"], prev.cell), mul(gates["i"], candidate))
    hidden = mul(gates["o"], tanh(cell))
    return ConvLSTMState(hidden, cell)


def init_state(feature: Tensor, params: ConvLSTMParams) -> ConvLSTMState:
    """H0 = C0 = 1x1 projection of the encoder feature."""
    if feature.ndim != 4 or feature.shape[1] != params.projection.kernel.shape[1]:
        raise ShapeError(f"Feature {feature.shape} does not match projection input "
                         f"{params.projection.kernel.shape[1]} channels")
    projected = params.projection(feature)
    return ConvLSTMState(projected, projected)
