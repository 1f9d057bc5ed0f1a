"""
Orchestrator: runs training and evaluation end-to-end.
Executes: data → model → training/evaluation → outputs, one banner per stage.
"""

import dataclasses
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .crm import CRMConfig, forward_full
from .errors import ConfigError
from .evaluation import (
    dump_step_masks,
    evaluate_pairs,
    group_eval,
    image_tensor,
    step_timings,
    strategy_bench,
)
from .gradcheck import CheckResult, report_frame, run_suite
from .imageio import MANIFEST_NAME, load_dataset
from .layers import EncoderConfig
from .loss import loss_by_name
from .model import CycleSegNet
from .runconfig import RunConfig, write_resolved
from .synthdata import (
    SHAPE_CLASSES,
    ImageGroup,
    SceneSpec,
    generate_class_groups,
    generate_dataset,
    split_classes,
)
from .tensor import AdamState, Tape, adam_step, average
from .visualize import render_step_masks, render_training_curve

logger = logging.getLogger(__name__)

RESOLVED_CONFIG = "resolved_config.env"
CHECKPOINT_NAME = "model.ckpt"
ABLATION_STUDIES = ("exchange", "roi", "levels")


def run_stage(number: int, description: str, fn, *args, **kwargs):
    """Run a pipeline stage and handle failures."""
    print(f"\n{'='*60}")
    print(f"▶️  Stage {number}: {description}")
    print(f"{'='*60}\n")
    try:
        result = fn(*args, **kwargs)
        print(f"\n✅ Stage {number}: {description} completed\n")
        return result
    except Exception as e:
        print(f"\n❌ Stage {number}: {description} failed: {str(e)}")
        raise RuntimeError(f"Pipeline execution failed at Stage {number}: {description}") from e


# ============================================================================
# Config views
# ============================================================================
def encoder_config(cfg: RunConfig) -> EncoderConfig:
    return EncoderConfig(channels=cfg.stage_channels)


def crm_config(cfg: RunConfig) -> CRMConfig:
    return CRMConfig(
        steps=cfg.steps,
        branches=cfg.k,
        exchange=cfg.exchange,
        roi=cfg.roi_size,
        standard_lstm_candidate=cfg.standard_lstm_candidate,
    )


def scene_spec(cfg: RunConfig) -> SceneSpec:
    return SceneSpec(size=cfg.image_size, seed=cfg.seed)


def load_model(cfg: RunConfig) -> CycleSegNet:
    if not cfg.checkpoint:
        raise ConfigError("checkpoint is required (set checkpoint=<path> or --checkpoint)")
    return CycleSegNet.load(cfg.checkpoint, encoder_config(cfg), cfg.levels)


# ============================================================================
# Data
# ============================================================================
def build_datasets(cfg: RunConfig) -> Dict[str, List[ImageGroup]]:
    """Train groups of size k over train classes; val and test pairs.

    Val pairs use the train classes, test pairs the held-out classes. With
    `dataset` set, train/ and test/ manifests are read from that directory,
    and val/ when present; otherwise val pairs are the first two images of
    the leading train groups.
    """
    if cfg.dataset:
        root = Path(cfg.dataset)
        train_groups = load_dataset(root / "train")
        if (root / "val" / MANIFEST_NAME).exists():
            val = load_dataset(root / "val")[:cfg.val_pairs]
        else:
            logger.warning(f"[Data] no val/ split under {root}; validating on train-class pairs")
            val = [ImageGroup(g.images[:2], g.masks[:2], g.common_class) for g in train_groups[:cfg.val_pairs]]
        return {"train": train_groups, "val": val, "test": load_dataset(root / "test")}

    spec = scene_spec(cfg)
    train_classes, test_classes = split_classes(SHAPE_CLASSES, cfg.held_out_classes)
    return {
        "train": generate_dataset(spec, cfg.train_groups, cfg.k, train_classes, seed=cfg.seed),
        "val": generate_dataset(spec, cfg.val_pairs, 2, train_classes, seed=cfg.seed + 1),
        "test": generate_dataset(spec, cfg.test_pairs, 2, test_classes, seed=cfg.seed + 2),
    }


# ============================================================================
# Training
# ============================================================================
def train_step(model: CycleSegNet, group: ImageGroup, crm_cfg: CRMConfig, loss_fn, state: AdamState) -> float:
    """One forward/backward pass over a group and one Adam update; returns the loss."""
    params = model.parameters()
    images = [image_tensor(im) for im in group.images]
    with Tape() as tape:
        tape.watch(*params)
        result = forward_full(images, model, crm_cfg)
        loss = average([loss_fn(lg, m) for lg, m in zip(result.logits, group.masks)])
    grads = tape.backward(loss).for_params(params)
    adam_step(params, grads, state)
    return loss.item()


def train(model: CycleSegNet, cfg: RunConfig, train_groups: Sequence[ImageGroup],
          val_groups: Sequence[ImageGroup]) -> pd.DataFrame:
    """Run cfg.iterations updates, cycling through the training groups in order.

    Returns:
        Log with iteration, loss (before the update) and val_jaccard (every
        val_every iterations, NaN otherwise)
    """
    crm_cfg = crm_config(cfg)
    loss_fn = loss_by_name(cfg.loss)
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rows = []
    for it in range(cfg.iterations):
        loss = train_step(model, train_groups[it % len(train_groups)], crm_cfg, loss_fn, state)
        val_jaccard = np.nan
        if val_groups and cfg.val_every and (it + 1) % cfg.val_every == 0:
            val_jaccard = float(evaluate_pairs(model, crm_cfg, val_groups).summary["jaccard"].iloc[-1])
            logger.info(f"[Train] iteration {it + 1}: loss={loss:.5f} val_jaccard={val_jaccard:.4f}")
        rows.append({"iteration": it, "loss": loss, "val_jaccard": val_jaccard})
    return pd.DataFrame(rows, columns=["iteration", "loss", "val_jaccard"])


def write_training_outputs(model: CycleSegNet, log_df: pd.DataFrame, cfg: RunConfig, out_dir: Path) -> Dict[str, str]:
    checkpoint = model.save(out_dir / CHECKPOINT_NAME)
    log_path = out_dir / "training_log.csv"
    log_df.to_csv(log_path, index=False)
    curve = render_training_curve(log_df, out_dir / "training_curve.png")
    write_resolved(dataclasses.replace(cfg, checkpoint=str(checkpoint)), out_dir / RESOLVED_CONFIG)
    return {"checkpoint": str(checkpoint), "log": str(log_path), "curve": str(curve)}


def train_model(cfg: RunConfig, out_dir, datasets: Optional[Dict[str, List[ImageGroup]]] = None) -> Dict[str, Any]:
    """Entry point for `train`: data, init, training loop, outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    print(f"🧪 Training run (seed {cfg.seed}, {cfg.iterations} iterations)")
    print(f"📁 Output Directory: {out_dir}")

    if datasets is None:
        datasets = run_stage(1, "Data Generation", build_datasets, cfg)
    model = run_stage(2, "Model Initialization", CycleSegNet.init, encoder_config(cfg), cfg.levels, cfg.seed)
    log_df = run_stage(3, "Training", train, model, cfg, datasets["train"], datasets["val"])
    outputs = run_stage(4, "Outputs", write_training_outputs, model, log_df, cfg, out_dir)

    print("\n" + "="*60)
    print("✅ Training completed successfully!")
    return {
        **outputs,
        "iterations": cfg.iterations,
        "final_loss": float(log_df["loss"].iloc[-1]) if len(log_df) else None,
        "model": model,
        "datasets": datasets,
    }


# ============================================================================
# Evaluation
# ============================================================================
def write_eval_outputs(model: CycleSegNet, cfg: RunConfig, test_groups: Sequence[ImageGroup],
                       per_step: bool, out_dir: Path) -> Dict[str, Any]:
    crm_cfg = crm_config(cfg)
    result = evaluate_pairs(model, crm_cfg, test_groups, per_step=per_step)
    result.summary.to_csv(out_dir / "metrics.csv", index=False)
    result.per_image.to_csv(out_dir / "per_image.csv", index=False)
    summary: Dict[str, Any] = {
        "metrics": str(out_dir / "metrics.csv"),
        "jaccard": float(result.summary["jaccard"].iloc[-1]),
        "precision": float(result.summary["precision"].iloc[-1]),
    }
    if per_step:
        dump_step_masks(result, out_dir / "masks")
        step_timings(model, crm_cfg, test_groups).to_csv(out_dir / "timing.csv", index=False)
        first = test_groups[0]
        render_step_masks(first.images, first.masks, result.masks[0], out_dir / "step_masks.png")
        summary["masks"] = str(out_dir / "masks")
    write_resolved(cfg, out_dir / RESOLVED_CONFIG)
    return summary


def evaluate_model(cfg: RunConfig, out_dir, per_step: bool = False) -> Dict[str, Any]:
    """Entry point for `eval`: checkpoint, test pairs, metrics (per step if asked)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    print(f"🔎 Evaluation of {cfg.checkpoint or '(no checkpoint)'}")

    model = run_stage(1, "Load Checkpoint", load_model, cfg)
    datasets = run_stage(2, "Test Data", build_datasets, dataclasses.replace(cfg, train_groups=1))
    summary = run_stage(3, "Evaluation", write_eval_outputs, model, cfg, datasets["test"], per_step, out_dir)

    print("\n" + "="*60)
    print(f"✅ Evaluation completed: J={summary['jaccard']:.4f} P={summary['precision']:.4f}")
    return summary


def group_test_set(cfg: RunConfig) -> List[ImageGroup]:
    """One group of cfg.group_images images per held-out class."""
    _, test_classes = split_classes(SHAPE_CLASSES, cfg.held_out_classes)
    return generate_class_groups(scene_spec(cfg), test_classes, cfg.group_images, seed=cfg.seed)


def run_group_eval(cfg: RunConfig, out_dir) -> pd.DataFrame:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = run_stage(1, "Load Checkpoint", load_model, cfg)
    groups = run_stage(2, "Group Data", group_test_set, cfg)
    table = run_stage(3, "Group Segmentation", group_eval, model, crm_config(cfg), groups,
                      cfg.strategy, cfg.k, seed=cfg.seed)
    table.to_csv(out_dir / "group_eval.csv", index=False)
    write_resolved(cfg, out_dir / RESOLVED_CONFIG)
    return table


def run_strategy_bench(cfg: RunConfig, out_dir) -> pd.DataFrame:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = run_stage(1, "Load Checkpoint", load_model, cfg)
    _, test_classes = split_classes(SHAPE_CLASSES, cfg.held_out_classes)
    table = run_stage(2, "Strategy Benchmark", strategy_bench, model, crm_config(cfg), scene_spec(cfg),
                      test_classes, cfg.strategy_list, cfg.k_values, cfg.group_images, seed=cfg.seed)
    table.to_csv(out_dir / "strategy_bench.csv", index=False)
    write_resolved(cfg, out_dir / RESOLVED_CONFIG)
    return table


def run_gradcheck(scope: str, seed: int, out_dir) -> Tuple[List[CheckResult], bool]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scopes = ("ops", "modules", "full") if scope == "all" else (scope,)
    results: List[CheckResult] = []
    for s in scopes:
        results.extend(run_suite(s, seed=seed))
    report_frame(results).to_csv(out_dir / "gradcheck.csv", index=False)
    return results, all(r.passed for r in results)


# ============================================================================
# Ablations
# ============================================================================
def ablation_variants(cfg: RunConfig, study: str) -> List[Tuple[str, RunConfig]]:
    """Named config variants of one study.

    exchange: no exchange, M_cat, M_mul and RCM with one step, then RCM with
    cfg.steps refinement steps. roi: region grids 1x1, 2x2, 4x4 and raw.
    levels: 1 .. number of encoder stages.
    """
    replace = dataclasses.replace
    if study == "exchange":
        return [
            ("none", replace(cfg, exchange="none", steps=1, k=2)),
            ("M_cat", replace(cfg, exchange="M_cat", steps=1, k=2)),
            ("M_mul", replace(cfg, exchange="M_mul", steps=1, k=2)),
            ("RCM", replace(cfg, exchange="rcm", steps=1)),
            ("RCM+CRM", replace(cfg, exchange="rcm")),
        ]
    if study == "roi":
        return [(roi, replace(cfg, exchange="rcm", roi=roi)) for roi in ("1x1", "2x2", "4x4", "raw")]
    if study == "levels":
        return [(f"levels={n}", replace(cfg, levels=n)) for n in range(1, len(cfg.stage_channels) + 1)]
    raise ConfigError(f"Unknown ablation study {study!r}; expected one of {ABLATION_STUDIES}")


def run_ablation(cfg: RunConfig, study: str, seeds: Sequence[int], out_dir) -> pd.DataFrame:
    """Train and test every variant of a study for each seed; one row per run."""
    out_dir = Path(out_dir)
    variants = ablation_variants(cfg, study)
    rows = []
    for seed in seeds:
        by_k: Dict[int, Dict[str, List[ImageGroup]]] = {}
        for name, variant in variants:
            variant = dataclasses.replace(variant, seed=seed)
            if variant.k not in by_k:
                by_k[variant.k] = build_datasets(variant)
            datasets = by_k[variant.k]
            run_dir = out_dir / name.replace("+", "_").replace("=", "_") / f"seed_{seed}"
            trained = train_model(variant, run_dir, datasets=datasets)
            result = evaluate_pairs(trained["model"], crm_config(variant), datasets["test"])
            final = result.summary.iloc[-1]
            rows.append({
                "study": study,
                "variant": name,
                "seed": seed,
                "precision": float(final["precision"]),
                "jaccard": float(final["jaccard"]),
            })
            logger.info(f"[Ablation] {study}/{name} seed={seed}: J={final['jaccard']:.4f}")
    table = pd.DataFrame(rows, columns=["study", "variant", "seed", "precision", "jaccard"])
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / f"ablation_{study}.csv", index=False)
    write_resolved(cfg, out_dir / RESOLVED_CONFIG)
    return table
