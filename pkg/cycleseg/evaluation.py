"""
Model evaluation: pair metrics (optionally per refinement step), inference
timings, and group segmentation benchmarks over sampling strategies.

Metric tables are deterministic; wall-clock timings are reported in separate
tables so that re-running an evaluation reproduces its metrics file exactly.
"""

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from . import settings
from .crm import CRMConfig, forward_full
from .errors import CombinatorialBlowup
from .groupstrat import StrategyConfig, THRESHOLD, metrics, run_group_segmentation
from .imageio import write_pgm
from .model import CycleSegNet
from .synthdata import ImageGroup, SceneSpec, generate_class_groups
from .tensor import Tensor

logger = logging.getLogger(__name__)

NOT_TESTED = "-"


def image_tensor(image: np.ndarray) -> Tensor:
    """3 x H x W array -> 1 x 3 x H x W tensor."""
    return Tensor(np.asarray(image, dtype=np.float64)[None])


def foreground_probability(logits: Tensor) -> np.ndarray:
    """Softmax probability of class 1, H x W."""
    margin = logits.data[0, 0] - logits.data[0, 1]
    z = np.exp(-np.abs(margin))
    return np.where(margin >= 0, z / (1.0 + z), 1.0 / (1.0 + z))


class ModelPredictor:
    """Callable wrapper turning a k-tuple of images into foreground maps."""

    def __init__(self, model: CycleSegNet, cfg: CRMConfig) -> None:
        self.model = model
        self.cfg = cfg

    def __call__(self, images: Sequence[np.ndarray]) -> List[np.ndarray]:
        result = forward_full([image_tensor(im) for im in images], self.model, self.cfg)
        return [foreground_probability(lg) for lg in result.logits]

    def per_step(self, images: Sequence[np.ndarray]) -> List[List[np.ndarray]]:
        """Foreground maps after every refinement step, [step][image]."""
        result = forward_full([image_tensor(im) for im in images], self.model, self.cfg, per_step=True)
        return [[foreground_probability(lg) for lg in step] for step in result.step_logits]


@dataclass
class EvalResult:
    summary: pd.DataFrame     # step, precision, jaccard
    per_image: pd.DataFrame   # pair, image, step, precision, jaccard
    # masks[pair][step][image], thresholded predictions
    masks: List[List[List[np.ndarray]]]


def evaluate_pairs(model: CycleSegNet, cfg: CRMConfig, groups: Sequence[ImageGroup],
                   per_step: bool = False, workers: Optional[int] = None) -> EvalResult:
    """Mean Precision and Jaccard over image groups (usually pairs).

    With per_step, every refinement step is decoded with the final decoder and
    scored separately; otherwise only the final step is reported.
    """
    predictor = ModelPredictor(model, cfg)

    def predict(group: ImageGroup) -> List[List[np.ndarray]]:
        if per_step:
            return predictor.per_step(group.images)
        return [predictor(group.images)]

    with ThreadPoolExecutor(max_workers=workers or settings.THREADS) as pool:
        predictions = list(pool.map(predict, groups))

    rows, all_masks = [], []
    for pair_idx, (group, steps) in enumerate(zip(groups, predictions)):
        pair_masks = []
        for step_idx, maps in enumerate(steps):
            step = step_idx + 1 if per_step else cfg.steps
            masks = [(m >= THRESHOLD).astype(np.uint8) for m in maps]
            pair_masks.append(masks)
            for image_idx, (mask, gt) in enumerate(zip(masks, group.masks)):
                precision, jaccard = metrics(mask, gt)
                rows.append({
                    "pair": pair_idx,
                    "image": image_idx,
                    "step": step,
                    "precision": precision,
                    "jaccard": jaccard,
                })
        all_masks.append(pair_masks)

    per_image = pd.DataFrame(rows, columns=["pair", "image", "step", "precision", "jaccard"])
    summary = (
        per_image.groupby("step", as_index=False)[["precision", "jaccard"]]
        .mean()
        .sort_values("step")
        .reset_index(drop=True)
    )
    logger.info(f"[Eval] {len(groups)} groups, final J={summary['jaccard'].iloc[-1]:.4f}")
    return EvalResult(summary, per_image, all_masks)


def per_step_metrics(model: CycleSegNet, cfg: CRMConfig, groups: Sequence[ImageGroup],
                     workers: Optional[int] = None) -> EvalResult:
    return evaluate_pairs(model, cfg, groups, per_step=True, workers=workers)


def step_timings(model: CycleSegNet, cfg: CRMConfig, groups: Sequence[ImageGroup],
                 n_groups: int = 10) -> pd.DataFrame:
    """Mean single-threaded inference seconds for N = 1..cfg.steps."""
    sample = [[image_tensor(im) for im in g.images] for g in groups[:n_groups]]
    rows = []
    for step in range(1, cfg.steps + 1):
        step_cfg = dataclasses.replace(cfg, steps=step)
        started = time.perf_counter()
        for images in sample:
            forward_full(images, model, step_cfg)
        elapsed = (time.perf_counter() - started) / max(len(sample), 1)
        rows.append({"step": step, "wallclock_s": elapsed})
    return pd.DataFrame(rows)


def dump_step_masks(result: EvalResult, out_dir) -> Path:
    """Write masks[pair][step][image] as `pair_<p>/step_<s>_img_<i>.pgm`."""
    out_dir = Path(out_dir)
    steps = sorted(result.per_image["step"].unique())
    for pair_idx, pair_masks in enumerate(result.masks):
        for step, masks in zip(steps, pair_masks):
            for image_idx, mask in enumerate(masks):
                write_pgm(out_dir / f"pair_{pair_idx:04d}" / f"step_{step}_img_{image_idx}.pgm", mask)
    return out_dir


# ============================================================================
# Group segmentation
# ============================================================================
def group_eval(model: CycleSegNet, cfg: CRMConfig, groups: Sequence[ImageGroup], strategy: str,
               k: int, seed: int = 0, workers: Optional[int] = None) -> pd.DataFrame:
    """Score one (strategy, k) setting on each group; one row per group."""
    predictor = ModelPredictor(model, cfg)
    rows = []
    for idx, group in enumerate(groups):
        scfg = StrategyConfig(strategy, len(group.images), k, seed=seed)
        result = run_group_segmentation(group.images, group.masks, predictor, scfg, workers=workers)
        rows.append({
            "group": idx,
            "class": group.common_class,
            "tuples": result.tuples,
            "precision": result.mean_precision,
            "jaccard": result.mean_jaccard,
        })
    return pd.DataFrame(rows)


def strategy_bench(model: CycleSegNet, cfg: CRMConfig, scene: SceneSpec, classes: Sequence[str],
                   strategies: Sequence[str], k_values: Sequence[int], group_images: int,
                   seed: int = 0, workers: Optional[int] = None) -> pd.DataFrame:
    """One row per (strategy, k, class) with mean P/J and wall-clock seconds.

    Strategy a is only run for k <= 3; larger k (or a cap overflow) is
    reported as "-".
    """
    predictor = ModelPredictor(model, cfg)
    rows = []
    for group in generate_class_groups(scene, classes, group_images, seed=seed):
        name = group.common_class
        for strategy in strategies:
            for k in k_values:
                row = {"strategy": strategy, "k": k, "class": name}
                if strategy == "a" and k > 3:
                    rows.append({**row, "precision": NOT_TESTED, "jaccard": NOT_TESTED, "wallclock_s": NOT_TESTED})
                    continue
                scfg = StrategyConfig(strategy, group_images, k, seed=seed)
                started = time.perf_counter()
                try:
                    result = run_group_segmentation(group.images, group.masks, predictor, scfg, workers=workers)
                except CombinatorialBlowup as e:
                    logger.warning(f"[Bench] {strategy}/k={k}/{name}: {e}")
                    rows.append({**row, "precision": NOT_TESTED, "jaccard": NOT_TESTED, "wallclock_s": NOT_TESTED})
                    continue
                rows.append({
                    **row,
                    "precision": result.mean_precision,
                    "jaccard": result.mean_jaccard,
                    "wallclock_s": time.perf_counter() - started,
                })
                logger.info(f"[Bench] {strategy}/k={k}/{name}: J={result.mean_jaccard:.4f}")
    return pd.DataFrame(rows, columns=["strategy", "k", "class", "precision", "jaccard", "wallclock_s"])
