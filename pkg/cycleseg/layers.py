"""
Siamese building blocks: toy encoder, decoder with prediction head, and the
channel-attention fusion used to merge refined levels.

One parameter object is passed to every branch, so branch weights are shared
by construction rather than copied.
"""

from dataclasses import dataclass, fields
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidConfig, ShapeError
from .tensor import (
    Parameter,
    Tensor,
    add,
    concat,
    conv2d,
    global_avg_pool,
    mul,
    relu,
    sigmoid,
    upsample_bilinear,
)

N_CLASSES = 2
CAM_REDUCTION = 4


# ============================================================================
# Parameter containers
# ============================================================================
class ParamSet:
    """Mixin for dataclasses whose fields hold parameters.

    Fields may be a Parameter, another ParamSet, or a list of either. Any other
    field type is treated as static configuration and skipped.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for f in fields(self):
            yield from _walk(getattr(self, f.name), f"{prefix}{f.name}")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]


def _walk(value, name: str) -> Iterator[Tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, ParamSet):
        yield from value.named_parameters(prefix=f"{name}.")
    elif isinstance(value, (list, tuple)):
        for idx, item in enumerate(value):
            yield from _walk(item, f"{name}.{idx}")


@dataclass
class ConvParams(ParamSet):
    kernel: Parameter
    bias: Parameter

    @classmethod
    def init(cls, rng: np.random.Generator, out_channels: int, in_channels: int,
             size: int = 1, zero: bool = False) -> "ConvParams":
        """He-normal kernel, zero bias; `zero=True` gives an all-zero layer."""
        shape = (out_channels, in_channels, size, size)
        if zero:
            kernel = np.zeros(shape)
        else:
            kernel = rng.normal(0.0, np.sqrt(2.0 / (in_channels * size * size)), shape)
        return cls(Parameter(kernel), Parameter(np.zeros(out_channels)))

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    def __call__(self, x: Tensor, stride: int = 1, padding: Optional[int] = None) -> Tensor:
        if padding is None:
            padding = self.kernel.shape[2] // 2
        return conv2d(x, self.kernel, self.bias, stride=stride, padding=padding)


# ============================================================================
# Encoder
# ============================================================================
@dataclass(frozen=True)
class EncoderConfig:
    channels: Tuple[int, ...] = (8, 16, 32)
    in_channels: int = 3

    def __post_init__(self) -> None:
        if len(self.channels) < 2:
            raise InvalidConfig(f"Encoder needs at least 2 stages, got {len(self.channels)}")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise InvalidConfig(f"Stage channels must be strictly increasing, got {self.channels}")
        if self.in_channels < 1:
            raise InvalidConfig("in_channels must be positive")

    @property
    def stages(self) -> int:
        return len(self.channels)


@dataclass
class FeaturePyramid:
    """Per-stage feature maps, deepest last."""

    maps: List[Tensor]

    @property
    def deepest(self) -> Tensor:
        return self.maps[-1]


@dataclass
class EncoderStage(ParamSet):
    down: ConvParams
    refine: ConvParams


@dataclass
class EncoderParams(ParamSet):
    stages: List[EncoderStage]

    @classmethod
    def init(cls, cfg: EncoderConfig, rng: np.random.Generator) -> "EncoderParams":
        stages = []
        width = cfg.in_channels
        for channels in cfg.channels:
            stages.append(EncoderStage(
                down=ConvParams.init(rng, channels, width, size=3),
                refine=ConvParams.init(rng, channels, channels, size=3),
            ))
            width = channels
        return cls(stages)


def encode(image: Tensor, cfg: EncoderConfig, params: EncoderParams) -> FeaturePyramid:
    """Run one image through the shared encoder.

    Each stage is a stride-2 3x3 conv followed by a stride-1 3x3 conv, both
    with ReLU, so spatial size halves per stage.

    Raises:
        ShapeError: If the image is not 1 x in_channels x H x W with H, W
            divisible by 2^stages
    """
    if image.ndim != 4 or image.shape[0] != 1 or image.shape[1] != cfg.in_channels:
        raise ShapeError(f"encode expects 1x{cfg.in_channels}xHxW, got {image.shape}")
    factor = 2 ** cfg.stages
    if image.shape[2] % factor or image.shape[3] % factor:
        raise ShapeError(f"Image size {image.shape[2]}x{image.shape[3]} is not divisible by {factor}")
    if len(params.stages) != cfg.stages:
        raise ShapeError(f"Encoder has {len(params.stages)} stages, config declares {cfg.stages}")

    maps = []
    x = image
    for stage in params.stages:
        x = relu(stage.down(x, stride=2))
        x = relu(stage.refine(x))
        maps.append(x)
    return FeaturePyramid(maps)


# ============================================================================
# Channel attention fusion
# ============================================================================
@dataclass
class CAMParams(ParamSet):
    merge: ConvParams
    reduce: ConvParams
    expand: ConvParams

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int) -> "CAMParams":
        hidden = max(channels // CAM_REDUCTION, 1)
        return cls(
            merge=ConvParams.init(rng, channels, 2 * channels),
            reduce=ConvParams.init(rng, hidden, channels),
            expand=ConvParams.init(rng, channels, hidden),
        )


def channel_attention(f: Tensor, params: CAMParams) -> Tensor:
    """Per-channel weights in (0, 1), shape 1 x C x 1 x 1."""
    return sigmoid(params.expand(relu(params.reduce(global_avg_pool(f)))))


def cam_fuse(shallow: Tensor, deep: Tensor, params: CAMParams) -> Tensor:
    """Merge two equally shaped maps: f = conv1x1(shallow ++ deep); f * a + f."""
    if shallow.shape != deep.shape:
        raise ShapeError(f"cam_fuse: shapes differ {shallow.shape} vs {deep.shape}")
    if params.merge.kernel.shape[1] != 2 * shallow.shape[1]:
        raise ShapeError(f"cam_fuse: parameters expect {params.merge.kernel.shape[1] // 2} channels, "
                         f"maps have {shallow.shape[1]}")
    f = params.merge(concat([shallow, deep], axis=1))
    weights = upsample_bilinear(channel_attention(f, params), f.shape[2], f.shape[3])
    return add(mul(f, weights), f)


# ============================================================================
# Decoder
# ============================================================================
@dataclass
class DecoderParams(ParamSet):
    blocks: List[ConvParams]
    fusions: List[CAMParams]
    head: ConvParams

    @classmethod
    def init(cls, cfg: EncoderConfig, levels: int, rng: np.random.Generator,
             zero_head: bool = True) -> "DecoderParams":
        """One upsample+conv block per encoder stage; a fusion per extra refined level.

        Block b maps channels[S-1-b] to channels[S-2-b] (the last block keeps
        channels[0]), so block outputs line up with shallower refined levels.
        """
        channels = cfg.channels
        stages = len(channels)
        blocks = []
        for b in range(stages):
            in_ch = channels[stages - 1 - b]
            out_ch = channels[max(stages - 2 - b, 0)]
            blocks.append(ConvParams.init(rng, out_ch, in_ch, size=3))
        fusions = [CAMParams.init(rng, channels[stages - 2 - b]) for b in range(levels - 1)]
        head = ConvParams.init(rng, N_CLASSES, channels[0], size=1, zero=zero_head)
        return cls(blocks, fusions, head)


def decode(h: Tensor, skip_inputs: Sequence[Tensor], params: DecoderParams,
           out_size: Optional[Tuple[int, int]] = None) -> Tensor:
    """Decode a deepest-level hidden state into 2-class logits.

    Args:
        h: Hidden state at the deepest encoder resolution
        skip_inputs: Hidden states of shallower refined levels, deep to shallow
        params: Decoder parameters
        out_size: Expected output (H, W); checked when given

    Returns:
        Logits 1 x 2 x H x W

    Raises:
        ShapeError: If a skip input does not match any block resolution, or
            the output size differs from out_size
    """
    pending = list(skip_inputs)
    if len(pending) > len(params.fusions):
        raise ShapeError(f"{len(pending)} skip inputs but only {len(params.fusions)} fusion modules")

    x = h
    fusion_idx = 0
    for block in params.blocks:
        x = upsample_bilinear(x, 2 * x.shape[2], 2 * x.shape[3])
        x = relu(block(x))
        if pending and pending[0].shape[2:] == x.shape[2:]:
            x = cam_fuse(pending.pop(0), x, params.fusions[fusion_idx])
            fusion_idx += 1
    if pending:
        raise ShapeError(f"Skip input of shape {pending[0].shape} matches no decoder resolution")

    logits = params.head(x)
    if out_size is not None and tuple(logits.shape[2:]) != tuple(out_size):
        raise ShapeError(f"Decoder output {logits.shape[2:]} does not match image size {tuple(out_size)}")
    return logits
