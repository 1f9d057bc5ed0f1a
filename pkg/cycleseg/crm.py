"""
Cycle refinement: ConvLSTM branches exchange cell states through the region
correspondence module and advance together for N steps.
"""

from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

from .convlstm import ConvLSTMParams, ConvLSTMState, cell_step, init_state
from .errors import GroupTooSmall, InvalidConfig, ShapeError
from .layers import ParamSet, decode, encode
from .rcm import DEFAULT_ROI, RCMParams, exchange
from .tensor import Tensor

if TYPE_CHECKING:
    from .model import CycleSegNet

EXCHANGE_KINDS = ("rcm", "M_cat", "M_mul", "none")


@dataclass(frozen=True)
class CRMConfig:
    steps: int = 7
    branches: int = 2
    exchange: str = "rcm"
    roi: Optional[Tuple[int, int]] = DEFAULT_ROI
    standard_lstm_candidate: bool = False

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise InvalidConfig(f"steps must be >= 1, got {self.steps}")
        if self.branches < 2:
            raise GroupTooSmall(f"branches must be >= 2, got {self.branches}")
        if self.exchange not in EXCHANGE_KINDS:
            raise InvalidConfig(f"exchange must be one of {EXCHANGE_KINDS}, got {self.exchange!r}")
        if self.exchange != "rcm" and self.branches != 2:
            raise InvalidConfig(f"exchange {self.exchange!r} supports only 2 branches")
        if self.roi is not None and min(self.roi) < 1:
            raise InvalidConfig(f"roi must be positive, got {self.roi}")


@dataclass
class LevelParams(ParamSet):
    """Parameters of one refined level; every branch at the level shares them."""

    lstm: ConvLSTMParams
    exchange: RCMParams

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int) -> "LevelParams":
        return cls(ConvLSTMParams.init(rng, channels, channels), RCMParams.init(rng, channels))


@dataclass
class RefineResult:
    states: List[ConvLSTMState]
    # trace[t][b]: state of branch b after step t + 1
    trace: List[List[ConvLSTMState]]


def refine(init_states: Sequence[ConvLSTMState], cfg: CRMConfig, params: LevelParams) -> RefineResult:
    """Run N synchronous refinement steps.

    Every branch computes its exchanged input from the previous step's cell
    states of all branches, then all branches advance one cell step.

    Raises:
        GroupTooSmall: If fewer than two branches are given
        ShapeError: If branch states differ in shape
    """
    if len(init_states) < 2:
        raise GroupTooSmall(f"Refinement needs k >= 2 branches, got {len(init_states)}")
    shape = init_states[0].hidden.shape
    if any(s.hidden.shape != shape for s in init_states):
        raise ShapeError("All branch states must share one shape")

    states = list(init_states)
    trace: List[List[ConvLSTMState]] = []
    for _ in range(cfg.steps):
        cells = [s.cell for s in states]
        inputs = [exchange(cfg.exchange, b, cells, params.exchange, cfg.roi) for b in range(len(states))]
        states = [
            cell_step(x, s, params.lstm, standard_candidate=cfg.standard_lstm_candidate)
            for x, s in zip(inputs, states)
        ]
        trace.append(states)
    return RefineResult(states, trace)


@dataclass
class ForwardResult:
    logits: List[Tensor]
    # step_logits[t][b], present only when requested
    step_logits: Optional[List[List[Tensor]]] = None


def _decode_branch(model: "CycleSegNet", hidden: Sequence[Tensor], out_size) -> Tensor:
    return decode(hidden[0], hidden[1:], model.decoder, out_size=out_size)


def forward_full(images: Sequence[Tensor], model: "CycleSegNet", cfg: CRMConfig,
                 per_step: bool = False) -> ForwardResult:
    """Encode every image, refine the last `levels` stages independently, decode.

    Args:
        images: k images, each 1 x 3 x H x W
        model: Network parameters
        cfg: Refinement settings
        per_step: Also decode the hidden states after every step

    Returns:
        ForwardResult with 1 x 2 x H x W logits per image
    """
    if len(images) < 2:
        raise GroupTooSmall(f"forward_full needs k >= 2 images, got {len(images)}")
    out_size = tuple(images[0].shape[2:])
    if any(tuple(img.shape[2:]) != out_size for img in images):
        raise ShapeError("All images of a group must share one size")

    pyramids = [encode(img, model.encoder_config, model.encoder) for img in images]
    stages = model.encoder_config.stages
    results = []
    # levels[0] refines the deepest stage
    for offset, level in enumerate(model.levels):
        stage = stages - 1 - offset
        init = [init_state(p.maps[stage], level.lstm) for p in pyramids]
        results.append(refine(init, cfg, level))

    logits = [
        _decode_branch(model, [r.states[b].hidden for r in results], out_size)
        for b in range(len(images))
    ]
    step_logits = None
    if per_step:
        step_logits = [
            [_decode_branch(model, [r.trace[t][b].hidden for r in results], out_size) for b in range(len(images))]
            for t in range(cfg.steps)
        ]
    return ForwardResult(logits, step_logits)
