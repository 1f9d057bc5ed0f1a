"""
Region correspondence: every target pixel attends over pooled regional
representations of the other images, and the result is averaged with the
sources' global statistics.

The group path treats all non-target branches as one large virtual source.
The pairwise baselines (concatenation / multiplication with the source's
global vector, or no exchange at all) live here too.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyGroup, GroupTooSmall, InvalidConfig, ShapeError
from .layers import ConvParams, ParamSet
from .tensor import (
    Tensor,
    add,
    average,
    concat,
    flatten_map,
    global_avg_pool,
    matmul,
    mul,
    pool,
    relu,
    scale,
    softmax_rows,
    transpose,
    unflatten_map,
    upsample_bilinear,
)

DEFAULT_ROI = (2, 2)
BASELINE_KINDS = ("M_cat", "M_mul", "none")


@dataclass
class RCMParams(ParamSet):
    query: ConvParams   # target projection
    key: ConvParams     # region projection
    fuse: ConvParams    # roi_avg ++ roi_max -> C
    cat: ConvParams     # M_cat baseline: target ++ global -> C

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int) -> "RCMParams":
        return cls(
            query=ConvParams.init(rng, channels, channels),
            key=ConvParams.init(rng, channels, channels),
            fuse=ConvParams.init(rng, channels, 2 * channels),
            cat=ConvParams.init(rng, channels, 2 * channels),
        )

    @property
    def width(self) -> int:
        return self.query.kernel.shape[0]


@dataclass
class RegionBank:
    """Flattened regional representations of one or more sources.

    `values` are the pooled rows the attention mixes; `keys` are the same rows
    after the region projection. Rows of source i occupy spans[i].
    """

    values: Tensor
    keys: Tensor
    sources: int
    spans: List[Tuple[int, int]]

    @property
    def rows(self) -> int:
        return self.values.shape[0]


def _check_sources(sources: Sequence[Tensor], channels: int) -> None:
    if not sources:
        raise EmptyGroup("At least one source map is required")
    for src in sources:
        if src.ndim != 4 or src.shape[0] != 1 or src.shape[1] != channels:
            raise ShapeError(f"Source map {src.shape} does not have {channels} channels")


def regional_representation(source: Tensor, params: RCMParams,
                            roi: Optional[Tuple[int, int]] = DEFAULT_ROI) -> Tensor:
    """ROI average and max pooling fused by a 1x1 conv; the raw map when roi is None."""
    if roi is None:
        return source
    avg = pool("roi_avg", source, roi[0], roi[1])
    peak = pool("roi_max", source, roi[0], roi[1])
    return params.fuse(concat([avg, peak], axis=1))


def region_bank(sources: Sequence[Tensor], params: RCMParams,
                roi: Optional[Tuple[int, int]] = DEFAULT_ROI) -> RegionBank:
    """Stack the regional representations of all sources in input order.

    Raises:
        EmptyGroup: If sources is empty
        ShapeError: On channel mismatch
    """
    _check_sources(sources, params.width)
    values, keys, spans = [], [], []
    offset = 0
    for src in sources:
        regions = regional_representation(src, params, roi)
        rows = flatten_map(regions)
        values.append(rows)
        keys.append(flatten_map(relu(params.key(regions))))
        spans.append((offset, offset + rows.shape[0]))
        offset += rows.shape[0]
    if len(values) == 1:
        return RegionBank(values[0], keys[0], 1, spans)
    return RegionBank(concat(values, axis=0), concat(keys, axis=0), len(sources), spans)


def affinity(target: Tensor, bank: RegionBank, params: RCMParams) -> Tensor:
    """(H*W) x rows dot products of projected target pixels and bank keys."""
    queries = flatten_map(relu(params.query(target)))
    return matmul(queries, transpose(bank.keys, (1, 0)))


def attend(target: Tensor, bank: RegionBank, params: RCMParams) -> Tuple[Tensor, Tensor]:
    """Return (row-stochastic attention, attended rows) for the target pixels."""
    weights = softmax_rows(affinity(target, bank, params))
    return weights, matmul(weights, bank.values)


def global_term(global_sources: Sequence[Tensor], height: int, width: int) -> Tensor:
    """Average of the sources' global average pools, broadcast to height x width."""
    pooled = average([global_avg_pool(src) for src in global_sources])
    return upsample_bilinear(pooled, height, width)


def rcm_forward(target: Tensor, bank: RegionBank, global_sources: Sequence[Tensor],
                params: RCMParams) -> Tensor:
    """Query the bank from every target pixel and mix in the global term.

    Returns:
        (attended + global) / 2 in the target's 1 x C x H x W layout

    Raises:
        EmptyGroup: If global_sources is empty
        ShapeError: On channel mismatch
    """
    _check_sources([target], params.width)
    _check_sources(global_sources, params.width)
    if bank.values.shape[1] != params.width:
        raise ShapeError(f"Bank width {bank.values.shape[1]} does not match {params.width}")
    _, _, height, width = target.shape
    _, attended = attend(target, bank, params)
    queried = unflatten_map(attended, height, width)
    return scale(add(queried, global_term(global_sources, height, width)), 0.5)


def canonical_order(sources: Sequence[Tensor]) -> List[Tensor]:
    """Sort maps by their raw bytes so the group result ignores branch order."""
    return sorted(sources, key=lambda t: t.data.tobytes())


def rcm_group_forward(target_index: int, cell_states: Sequence[Tensor], params: RCMParams,
                      roi: Optional[Tuple[int, int]] = DEFAULT_ROI) -> Tensor:
    """Exchange for one branch of a k-branch group.

    Raises:
        GroupTooSmall: If fewer than two branches are given
        IndexError: If target_index is out of range
    """
    if len(cell_states) < 2:
        raise GroupTooSmall(f"Group exchange needs k >= 2 branches, got {len(cell_states)}")
    if not 0 <= target_index < len(cell_states):
        raise IndexError(f"target_index {target_index} out of range for {len(cell_states)} branches")
    companions = canonical_order([s for j, s in enumerate(cell_states) if j != target_index])
    bank = region_bank(companions, params, roi)
    return rcm_forward(cell_states[target_index], bank, companions, params)


def baseline_exchange(kind: str, target: Tensor, source: Tensor, params: RCMParams) -> Tensor:
    """Pairwise exchange without correspondence.

    M_cat concatenates the broadcast source global vector and projects back to
    the target width; M_mul multiplies by it; none returns the target.
    """
    if kind not in BASELINE_KINDS:
        raise InvalidConfig(f"Unknown baseline exchange {kind!r}")
    if target.shape != source.shape:
        raise ShapeError(f"baseline_exchange: target {target.shape} vs source {source.shape}")
    if kind == "none":
        return target
    g = upsample_bilinear(global_avg_pool(source), target.shape[2], target.shape[3])
    if kind == "M_mul":
        return mul(target, g)
    return params.cat(concat([target, g], axis=1))


def exchange(kind: str, target_index: int, cell_states: Sequence[Tensor], params: RCMParams,
             roi: Optional[Tuple[int, int]] = DEFAULT_ROI) -> Tensor:
    """Dispatch one branch's exchanged input by kind."""
    if kind == "rcm":
        return rcm_group_forward(target_index, cell_states, params, roi)
    if len(cell_states) != 2:
        raise InvalidConfig(f"Exchange {kind!r} is pairwise only, got {len(cell_states)} branches")
    return baseline_exchange(kind, cell_states[target_index], cell_states[1 - target_index], params)
