"""
Group segmentation with a k-branch model: tuple sampling strategies and
fusion of the per-tuple foreground probabilities.

Strategies:
    a  every k-element combination of the N images
    b  a seeded random partition into floor(N/k) groups
    c  per target, 5 seeded random (k-1)-subsets of the other images
    d  per target, a seeded permutation of the other images cut into
       floor((N-1)/(k-1)) chunks of k-1

Strategies a and b fuse every member of a tuple; c and d fuse only the
target, so each image averages exactly 5 or floor((N-1)/(k-1)) maps.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import settings
from .errors import CombinatorialBlowup, InvalidConfig, MissingPrediction, ShapeError

logger = logging.getLogger(__name__)

STRATEGIES = ("a", "b", "c", "d")
REMAINDER_POLICIES: Dict[str, Tuple[str, ...]] = {
    "b": ("last-group-absorbs", "short-last-group"),
    "d": ("drop-remainder", "last-chunk-absorbs"),
}
SAMPLES_PER_TARGET = 5
THRESHOLD = 0.5
# Per-target strategies: a tuple only predicts its first (target) image.
TARGET_ONLY = ("c", "d")

# Takes the k images of a tuple, returns one foreground probability map per image.
Predictor = Callable[[Sequence[np.ndarray]], Sequence[np.ndarray]]


@dataclass(frozen=True)
class StrategyConfig:
    strategy: str
    n_images: int
    k: int
    seed: int = 0
    remainder: Optional[str] = None
    samples_per_target: int = SAMPLES_PER_TARGET
    cap: int = field(default_factory=lambda: settings.STRATEGY_CAP)

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise InvalidConfig(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.k < 2:
            raise InvalidConfig(f"k must be >= 2, got {self.k}")
        if self.k > self.n_images:
            raise InvalidConfig(f"k={self.k} exceeds group size N={self.n_images}")
        allowed = REMAINDER_POLICIES.get(self.strategy, ())
        if self.remainder is not None and self.remainder not in allowed:
            raise InvalidConfig(f"Remainder policy {self.remainder!r} not valid for strategy {self.strategy}")
        if self.samples_per_target < 1:
            raise InvalidConfig("samples_per_target must be positive")

    @property
    def remainder_policy(self) -> Optional[str]:
        if self.remainder is not None:
            return self.remainder
        allowed = REMAINDER_POLICIES.get(self.strategy)
        return allowed[0] if allowed else None


def plan(cfg: StrategyConfig) -> List[List[int]]:
    """List the index tuples a strategy feeds to the model.

    Raises:
        CombinatorialBlowup: If strategy a would enumerate more than cfg.cap tuples
    """
    n, k = cfg.n_images, cfg.k
    rng = np.random.default_rng(cfg.seed)

    if cfg.strategy == "a":
        count = math.comb(n, k)
        if count > cfg.cap:
            raise CombinatorialBlowup(f"C({n},{k}) = {count} tuples exceeds the cap of {cfg.cap}")
        return [list(t) for t in itertools.combinations(range(n), k)]

    if cfg.strategy == "b":
        order = [int(i) for i in rng.permutation(n)]
        groups = [order[g * k:(g + 1) * k] for g in range(n // k)]
        rest = order[(n // k) * k:]
        if rest:
            if cfg.remainder_policy == "short-last-group" and len(rest) >= 2:
                groups.append(rest)
            else:
                groups[-1].extend(rest)
        return groups

    tuples = []
    for target in range(n):
        others = np.array([j for j in range(n) if j != target])
        if cfg.strategy == "c":
            for _ in range(cfg.samples_per_target):
                picked = rng.choice(others, size=k - 1, replace=False)
                tuples.append([target] + [int(j) for j in picked])
        else:
            order = [int(j) for j in rng.permutation(others)]
            chunks = [order[t * (k - 1):(t + 1) * (k - 1)] for t in range((n - 1) // (k - 1))]
            rest = order[len(chunks) * (k - 1):]
            if rest and cfg.remainder_policy == "last-chunk-absorbs":
                chunks[-1].extend(rest)
            tuples.extend([target] + chunk for chunk in chunks)
    return tuples


class FusionAccumulator:
    """Running sum of foreground probabilities and prediction count per image."""

    def __init__(self, n_images: int, shape: Tuple[int, int]) -> None:
        self.sums = np.zeros((n_images,) + tuple(shape))
        self.counts = np.zeros(n_images, dtype=np.int64)

    def add(self, index: int, probability: np.ndarray) -> None:
        probability = np.asarray(probability, dtype=np.float64)
        if probability.shape != self.sums.shape[1:]:
            raise ShapeError(f"Prediction {probability.shape} does not match {self.sums.shape[1:]}")
        self.sums[index] += probability
        self.counts[index] += 1

    def merge(self, other: "FusionAccumulator") -> "FusionAccumulator":
        if other.sums.shape != self.sums.shape:
            raise ShapeError("Cannot merge accumulators of different shapes")
        self.sums += other.sums
        self.counts += other.counts
        return self

    def finalize(self) -> np.ndarray:
        """Mean probability map per image, N x H x W.

        Raises:
            MissingPrediction: If some image received no prediction
        """
        missing = np.flatnonzero(self.counts == 0)
        if missing.size:
            raise MissingPrediction(f"Images without predictions: {missing.tolist()}")
        return self.sums / self.counts[:, None, None]


def metrics(pred_mask, gt_mask) -> Tuple[float, float]:
    """Precision (pixel accuracy over both classes) and foreground Jaccard.

    J is 1 when both foregrounds are empty.
    """
    pred = np.asarray(pred_mask).astype(bool)
    gt = np.asarray(gt_mask).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} differ")
    precision = float(np.mean(pred == gt))
    union = np.count_nonzero(pred | gt)
    jaccard = 1.0 if union == 0 else np.count_nonzero(pred & gt) / union
    return precision, float(jaccard)


@dataclass
class GroupResult:
    probabilities: np.ndarray
    masks: np.ndarray
    precision: List[float]
    jaccard: List[float]
    tuples: int
    counts: np.ndarray

    @property
    def mean_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def mean_jaccard(self) -> float:
        return float(np.mean(self.jaccard))


def run_group_segmentation(images: Sequence[np.ndarray], gt_masks: Sequence[np.ndarray],
                           predictor: Predictor, cfg: StrategyConfig,
                           workers: Optional[int] = None) -> GroupResult:
    """Predict every planned tuple, fuse per image, threshold and score.

    Args:
        images: N images, each C x H x W
        gt_masks: N binary masks, each H x W
        predictor: Model wrapper returning per-image foreground probabilities
        cfg: Sampling strategy
        workers: Thread cap; defaults to settings.THREADS

    Returns:
        GroupResult with fused maps, thresholded masks and per-image metrics
    """
    if len(images) != cfg.n_images or len(gt_masks) != cfg.n_images:
        raise ShapeError(f"Expected {cfg.n_images} images and masks, got {len(images)} and {len(gt_masks)}")
    tuples = plan(cfg)
    shape = np.asarray(gt_masks[0]).shape
    fusion = FusionAccumulator(cfg.n_images, shape)
    logger.info(f"[Group] strategy={cfg.strategy} k={cfg.k} N={cfg.n_images}: {len(tuples)} tuples")

    def predict(indices: List[int]):
        return predictor([images[i] for i in indices])

    # map() yields in submission order, so sums are accumulated deterministically
    target_only = cfg.strategy in TARGET_ONLY
    with ThreadPoolExecutor(max_workers=workers or settings.THREADS) as pool:
        for indices, maps in zip(tuples, pool.map(predict, tuples)):
            if target_only:
                fusion.add(indices[0], maps[0])
                continue
            for index, probability in zip(indices, maps):
                fusion.add(index, probability)

    fused = fusion.finalize()
    masks = (fused >= THRESHOLD).astype(np.uint8)
    scores = [metrics(m, g) for m, g in zip(masks, gt_masks)]
    return GroupResult(
        probabilities=fused,
        masks=masks,
        precision=[p for p, _ in scores],
        jaccard=[j for _, j in scores],
        tuples=len(tuples),
        counts=fusion.counts.copy(),
    )
