"""
Seeded synthetic co-segmentation scenes.

Every image of a group contains one instance of the group's common shape class
(own position, scale and jittered color) plus up to two distractor shapes of
other classes on a noisy tinted background. The mask marks exactly the common
instance, which is drawn last.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import settings
from .errors import InvalidConfig

logger = logging.getLogger(__name__)

SHAPE_CLASSES = ("disk", "square", "triangle", "cross", "ring")


@dataclass(frozen=True)
class SceneSpec:
    size: int = 64
    channels: int = 3
    classes: Tuple[str, ...] = SHAPE_CLASSES
    max_distractors: int = 2
    # radius as a fraction of the canvas side
    radius_range: Tuple[float, float] = (0.16, 0.28)
    noise: float = 0.05
    color_jitter: float = 0.08
    seed: int = 0

    def __post_init__(self) -> None:
        unknown = set(self.classes) - set(SHAPE_CLASSES)
        if unknown:
            raise InvalidConfig(f"Unknown shape classes: {sorted(unknown)}")
        if len(self.classes) < 1:
            raise InvalidConfig("At least one shape class is required")
        if self.size < 16 or self.channels != 3:
            raise InvalidConfig(f"Canvas must be at least 16x16 with 3 channels, got {self.size} / {self.channels}")
        low, high = self.radius_range
        if not 0 < low <= high < 0.5:
            raise InvalidConfig(f"radius_range must satisfy 0 < low <= high < 0.5, got {self.radius_range}")
        if self.max_distractors < 0:
            raise InvalidConfig("max_distractors must be non-negative")


@dataclass
class ImageGroup:
    images: List[np.ndarray]   # each 3 x H x W in [0, 1]
    masks: List[np.ndarray]    # each H x W, uint8 in {0, 1}
    common_class: str


def rasterize(shape: str, size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    """Boolean H x W coverage of a shape, sampled at pixel centers."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = yy - cy, xx - cx
    if shape == "disk":
        return dy * dy + dx * dx <= radius * radius
    if shape == "ring":
        dist2 = dy * dy + dx * dx
        return (dist2 <= radius * radius) & (dist2 >= (0.55 * radius) ** 2)
    if shape == "square":
        half = 0.8 * radius
        return (np.abs(dy) <= half) & (np.abs(dx) <= half)
    if shape == "triangle":
        # upward equilateral triangle inscribed in the circle of the radius
        return (dy >= -radius) & (dy <= radius / 2) & (np.abs(dx) <= (dy + radius) / np.sqrt(3.0))
    if shape == "cross":
        arm = radius / 3.0
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= radius)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= radius))
    raise InvalidConfig(f"Unknown shape {shape!r}")


def _place(rng: np.random.Generator, spec: SceneSpec) -> Tuple[float, float, float]:
    radius = rng.uniform(*spec.radius_range) * spec.size
    cy = rng.uniform(radius, spec.size - radius)
    cx = rng.uniform(radius, spec.size - radius)
    return cy, cx, radius


def _render(rng: np.random.Generator, spec: SceneSpec, common: str,
            base_color: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    size = spec.size
    tint = rng.uniform(0.0, 0.35, size=3)
    image = tint[:, None, None] + rng.normal(0.0, spec.noise, size=(3, size, size))

    others = [c for c in spec.classes if c != common]
    n_distractors = int(rng.integers(0, spec.max_distractors + 1)) if others else 0
    for _ in range(n_distractors):
        shape = others[int(rng.integers(len(others)))]
        coverage = rasterize(shape, size, *_place(rng, spec))
        image[:, coverage] = rng.uniform(0.2, 1.0, size=3)[:, None]

    coverage = rasterize(common, size, *_place(rng, spec))
    color = np.clip(base_color + rng.normal(0.0, spec.color_jitter, size=3), 0.0, 1.0)
    image[:, coverage] = color[:, None]
    return np.clip(image, 0.0, 1.0), coverage.astype(np.uint8)


def generate(spec: SceneSpec, group_size: int, seed: Optional[int] = None,
             common_class: Optional[str] = None) -> ImageGroup:
    """Render one group of images sharing a common shape class.

    Args:
        spec: Scene settings; spec.classes is the pool for the common class
        group_size: Number of images, at least 2
        seed: Overrides spec.seed
        common_class: Force the common class instead of sampling it

    Raises:
        InvalidConfig: On group_size < 2 or a common class outside spec.classes
    """
    if group_size < 2:
        raise InvalidConfig(f"group_size must be >= 2, got {group_size}")
    if common_class is not None and common_class not in spec.classes:
        raise InvalidConfig(f"Common class {common_class!r} is not in {spec.classes}")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    common = common_class or spec.classes[int(rng.integers(len(spec.classes)))]
    base_color = rng.uniform(0.3, 1.0, size=3)

    images, masks = [], []
    for _ in range(group_size):
        image, mask = _render(rng, spec, common, base_color)
        images.append(image)
        masks.append(mask)
    return ImageGroup(images, masks, common)


def split_classes(classes: Sequence[str], held_out: Sequence[str]) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    """Disjoint (train, test) class lists; test is the held-out set."""
    unknown = set(held_out) - set(classes)
    if unknown:
        raise InvalidConfig(f"Held-out classes not in vocabulary: {sorted(unknown)}")
    train = tuple(c for c in classes if c not in held_out)
    test = tuple(c for c in classes if c in held_out)
    if not train or not test:
        raise InvalidConfig("Class split leaves the train or the test side empty")
    return train, test


def generate_dataset(spec: SceneSpec, n_groups: int, group_size: int, common_classes: Sequence[str],
                     seed: int = 0, workers: Optional[int] = None) -> List[ImageGroup]:
    """Render n_groups groups whose common class is drawn from common_classes.

    Distractors may use any class of spec.classes. Group i is seeded from the
    i-th child of SeedSequence(seed), so output is independent of worker count.
    """
    if not common_classes:
        raise InvalidConfig("common_classes is empty")
    children = np.random.SeedSequence(seed).spawn(n_groups)
    picker = np.random.default_rng(seed)
    picks = [common_classes[int(i)] for i in picker.integers(len(common_classes), size=n_groups)]

    def render(i: int) -> ImageGroup:
        child_seed = int(children[i].generate_state(1)[0])
        return generate(spec, group_size, seed=child_seed, common_class=picks[i])

    with ThreadPoolExecutor(max_workers=workers or settings.THREADS) as pool:
        groups = list(pool.map(render, range(n_groups)))
    logger.info(f"[Data] generated {n_groups} groups of {group_size} over classes {list(common_classes)}")
    return groups


def generate_class_groups(spec: SceneSpec, classes: Sequence[str], group_size: int,
                          seed: int = 0) -> List[ImageGroup]:
    """One group per class, in the given order; group i is seeded with seed + i."""
    if not classes:
        raise InvalidConfig("classes is empty")
    return [generate(spec, group_size, seed=seed + idx, common_class=name) for idx, name in enumerate(classes)]
