"""Figures for refinement steps and training progress."""
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

LOSS_COLOR = "#1f4cff"
JACCARD_COLOR = "#ff6f00"
PANEL_SIZE = 1.8


def render_step_masks(images: Sequence[np.ndarray], gt_masks: Sequence[np.ndarray],
                      step_masks: Sequence[Sequence[np.ndarray]], output_file) -> Path:
    """Grid with one row per image: input, ground truth, then every refinement step.

    Args:
        images: Group images, each 3 x H x W in [0, 1]
        gt_masks: Ground-truth masks, each H x W
        step_masks: Predicted masks indexed [step][image]
        output_file: PNG path

    Returns:
        Path of the written figure
    """
    n_images, n_steps = len(images), len(step_masks)
    fig, axes = plt.subplots(
        n_images, n_steps + 2,
        figsize=(PANEL_SIZE * (n_steps + 2), PANEL_SIZE * n_images),
        squeeze=False,
    )
    for row in range(n_images):
        axes[row][0].imshow(np.transpose(images[row], (1, 2, 0)))
        axes[row][1].imshow(gt_masks[row], cmap="gray", vmin=0, vmax=1)
        for step in range(n_steps):
            axes[row][step + 2].imshow(step_masks[step][row], cmap="gray", vmin=0, vmax=1)
    axes[0][0].set_title("image", fontsize=9)
    axes[0][1].set_title("ground truth", fontsize=9)
    for step in range(n_steps):
        axes[0][step + 2].set_title(f"step {step + 1}", fontsize=9)
    for ax in axes.flat:
        ax.axis("off")

    plt.tight_layout()
    output_file = Path(output_file)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    plt.savefig(output_file, dpi=120, bbox_inches="tight")
    print(f"✓ Generated: {output_file}")
    plt.close(fig)
    return output_file


def render_training_curve(log_df: pd.DataFrame, output_file) -> Path:
    """Loss per iteration, with validation Jaccard on a second axis when logged."""
    fig, ax_loss = plt.subplots(figsize=(8, 4.5))
    ax_loss.plot(log_df["iteration"], log_df["loss"], color=LOSS_COLOR, lw=1.0)
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("loss", color=LOSS_COLOR)

    val = log_df.dropna(subset=["val_jaccard"]) if "val_jaccard" in log_df else log_df.iloc[0:0]
    if not val.empty:
        ax_val = ax_loss.twinx()
        ax_val.plot(val["iteration"], val["val_jaccard"], color=JACCARD_COLOR, marker="o", lw=1.5)
        ax_val.set_ylabel("val Jaccard", color=JACCARD_COLOR)
        ax_val.set_ylim(0, 1)

    plt.tight_layout()
    output_file = Path(output_file)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    plt.savefig(output_file, dpi=120, bbox_inches="tight")
    print(f"✓ Generated: {output_file}")
    plt.close(fig)
    return output_file
