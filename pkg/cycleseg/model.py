"""CycleSegNet parameter container: encoder, refined levels and decoder."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .crm import LevelParams
from .errors import FormatError, InvalidConfig
from .layers import DecoderParams, EncoderConfig, EncoderParams, ParamSet

logger = logging.getLogger(__name__)


@dataclass
class CycleSegNet(ParamSet):
    encoder: EncoderParams
    # deepest level first
    levels: List[LevelParams]
    decoder: DecoderParams
    encoder_config: EncoderConfig = field(default_factory=EncoderConfig)

    @classmethod
    def init(cls, encoder_config: EncoderConfig = EncoderConfig(), levels: int = 1,
             seed: int = 0, zero_head: bool = True) -> "CycleSegNet":
        """Deterministic initialization from a seed.

        Raises:
            InvalidConfig: If levels is not between 1 and the number of stages
        """
        if not 1 <= levels <= encoder_config.stages:
            raise InvalidConfig(f"levels must be in [1, {encoder_config.stages}], got {levels}")
        rng = np.random.default_rng(seed)
        encoder = EncoderParams.init(encoder_config, rng)
        channels = encoder_config.channels
        level_params = [LevelParams.init(rng, channels[-1 - i]) for i in range(levels)]
        decoder = DecoderParams.init(encoder_config, levels, rng, zero_head=zero_head)
        return cls(encoder, level_params, decoder, encoder_config)

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.numpy() for name, p in self.named_parameters()}

    def load_state_dict(self, tensors: Mapping[str, np.ndarray]) -> None:
        """Replace every parameter's values; names must match exactly.

        Raises:
            FormatError: On missing or unexpected names
            ShapeError: On a shape mismatch
        """
        named = dict(self.named_parameters())
        missing = sorted(set(named) - set(tensors))
        unexpected = sorted(set(tensors) - set(named))
        if missing or unexpected:
            raise FormatError(f"Checkpoint does not match model: missing={missing[:3]} unexpected={unexpected[:3]}")
        for name, param in named.items():
            param.assign(tensors[name])

    def save(self, path):
        return save_checkpoint(path, self.state_dict())

    @classmethod
    def load(cls, path, encoder_config: EncoderConfig, levels: int) -> "CycleSegNet":
        model = cls.init(encoder_config, levels)
        model.load_state_dict(load_checkpoint(path))
        logger.info(f"[Checkpoint] loaded {len(model.parameters())} parameters from {path}")
        return model
