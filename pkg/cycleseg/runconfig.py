"""
Run configuration: key=value text files, one pair per line, '#' comments.

The same keys are accepted as CLI flags (`--iterations 500`), which override the
file. Every run writes the resolved configuration next to its outputs so the
run can be reproduced from that file alone.
"""

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values

from .errors import ConfigError, IoError

EXCHANGE_KINDS = ("rcm", "M_cat", "M_mul", "none")
LOSS_KINDS = ("lovasz", "cross_entropy")

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


@dataclass(frozen=True)
class RunConfig:
    """Every knob a command reads. Defaults are the desk-scale settings."""

    seed: int = 0
    steps: int = 4
    roi: str = "2x2"
    exchange: str = "rcm"
    levels: int = 3
    k: int = 2
    lr: float = 1e-3
    weight_decay: float = 5e-4
    iterations: int = 2000
    loss: str = "lovasz"
    standard_lstm_candidate: bool = False
    # dataset
    image_size: int = 64
    stages: str = "8,16,32"
    train_groups: int = 500
    test_pairs: int = 100
    val_pairs: int = 20
    val_every: int = 100
    held_out: str = "ring"
    dataset: str = ""
    # group segmentation
    strategy: str = "d"
    strategies: str = "a,b,c,d"
    k_range: str = "2,3,4,5"
    group_images: int = 12
    # outputs
    checkpoint: str = ""
    # empty: CYCLESEG_OUTPUT_DIR/<command>
    output_dir: str = ""

    def __post_init__(self) -> None:
        self.validate()

    # ------------------------------------------------------------------
    # Derived views
    # ------------------------------------------------------------------
    @property
    def roi_size(self) -> Optional[Tuple[int, int]]:
        """(rows, cols) of the ROI grid, or None for the raw (no ROI) bank."""
        if self.roi == "raw":
            return None
        rows, cols = self.roi.lower().split("x")
        return int(rows), int(cols)

    @property
    def stage_channels(self) -> Tuple[int, ...]:
        return tuple(int(c) for c in self.stages.split(","))

    @property
    def held_out_classes(self) -> Tuple[str, ...]:
        return tuple(c.strip() for c in self.held_out.split(",") if c.strip())

    @property
    def strategy_list(self) -> Tuple[str, ...]:
        return tuple(s.strip() for s in self.strategies.split(",") if s.strip())

    @property
    def k_values(self) -> Tuple[int, ...]:
        return tuple(int(k) for k in self.k_range.split(","))

    def validate(self) -> None:
        if self.exchange not in EXCHANGE_KINDS:
            raise ConfigError(f"exchange must be one of {EXCHANGE_KINDS}, got {self.exchange!r}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.steps < 1 or self.k < 2 or self.levels < 1 or self.iterations < 0:
            raise ConfigError("steps >= 1, k >= 2, levels >= 1 and iterations >= 0 are required")
        try:
            roi = self.roi_size
            channels = self.stage_channels
            k_values = self.k_values
        except ValueError as e:
            raise ConfigError(f"Malformed roi/stages/k_range value: {e}") from e
        if roi is not None and min(roi) < 1:
            raise ConfigError(f"roi must be positive, got {self.roi!r}")
        if self.levels > len(channels):
            raise ConfigError(f"levels={self.levels} exceeds the {len(channels)} encoder stages")
        if any(k < 2 for k in k_values):
            raise ConfigError(f"k_range values must be >= 2, got {self.k_range!r}")
        if self.image_size % (2 ** len(channels)):
            raise ConfigError(f"image_size={self.image_size} is not divisible by 2^{len(channels)}")


def _coerce(name: str, raw: Any, target: type) -> Any:
    if not isinstance(raw, str):
        return raw
    value = raw.strip()
    try:
        if target is bool:
            lowered = value.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if target is int:
            return int(value)
        if target is float:
            return float(value)
    except ValueError as e:
        raise ConfigError(f"Invalid value for {name}: {e}") from e
    return value


def read_config_file(path) -> Dict[str, Optional[str]]:
    path = Path(path)
    if not path.exists():
        raise IoError(f"Config file not found: {path}")
    return dict(dotenv_values(path, interpolate=False))


def load_run_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Resolve a RunConfig from an optional file plus flag overrides.

    Args:
        path: key=value config file, or None for defaults
        overrides: Values taking precedence over the file; None entries are ignored

    Returns:
        The validated RunConfig

    Raises:
        ConfigError: On unknown keys or uncoercible values
    """
    known = {f.name: f.type for f in fields(RunConfig)}
    values: Dict[str, Any] = {}
    if path is not None:
        values.update(read_config_file(path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

    resolved = {}
    for name, raw in values.items():
        if raw is None:
            raise ConfigError(f"Config key {name} has no value")
        resolved[name] = _coerce(name, raw, _field_type(known[name]))
    return RunConfig(**resolved)


def _field_type(annotation) -> type:
    if isinstance(annotation, str):
        return {"int": int, "float": float, "bool": bool, "str": str}[annotation]
    return annotation


def write_resolved(cfg: RunConfig, path) -> Path:
    """Write the effective configuration as key=value lines."""
    path = Path(path)
    lines = ["# resolved run configuration"]
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoError(f"Could not write resolved config {path}: {e}") from e
    return path
