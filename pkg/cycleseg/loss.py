"""
Segmentation losses: Lovász-Softmax over the Jaccard loss, and pixel-wise
cross-entropy.

The Lovász term of class c sorts the pixel errors m(c) in decreasing order and
dots them with the discrete gradient of the Jaccard loss along that order. The
sort permutation is treated as a constant in backpropagation.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import LabelError, ShapeError
from .tensor import (
    Tensor,
    add,
    average,
    flatten_map,
    log_softmax_rows,
    matmul,
    mul,
    scale,
    softmax_rows,
    total,
)

N_CLASSES = 2


def _labels(logits: Tensor, gt) -> np.ndarray:
    """Validate gt against logits and return flattened integer labels."""
    if logits.ndim != 4 or logits.shape[0] != 1 or logits.shape[1] != N_CLASSES:
        raise ShapeError(f"Expected 1x{N_CLASSES}xHxW logits, got {logits.shape}")
    mask = np.asarray(gt)
    if mask.size == 0:
        raise ShapeError("Ground-truth mask is empty")
    if mask.shape != logits.shape[2:]:
        raise ShapeError(f"Mask shape {mask.shape} does not match logits {logits.shape[2:]}")
    if not np.isin(mask, (0, 1)).all():
        raise LabelError("Ground-truth values must be 0 or 1")
    return mask.astype(np.int64).reshape(-1)


# ============================================================================
# Jaccard set function and its Lovász extension (numpy)
# ============================================================================
def jaccard_set_loss(error_set, fg) -> float:
    """|M| / |F u M| for a boolean error set M and foreground F; 0 for M empty."""
    error_set = np.asarray(error_set, dtype=bool)
    fg = np.asarray(fg, dtype=bool)
    union = np.count_nonzero(fg | error_set)
    if union == 0:
        return 0.0
    return np.count_nonzero(error_set) / union


def lovasz_grad(fg_sorted) -> np.ndarray:
    """Discrete gradient of the Jaccard loss along an error ordering.

    Args:
        fg_sorted: Foreground indicator, permuted by decreasing error

    Returns:
        g with g[j] = Delta(top j+1) - Delta(top j)
    """
    fg_sorted = np.asarray(fg_sorted, dtype=np.float64)
    gts = fg_sorted.sum()
    intersection = gts - np.cumsum(fg_sorted)
    union = gts + np.cumsum(1.0 - fg_sorted)
    jaccard = 1.0 - intersection / union
    if len(fg_sorted) > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_weights(errors, fg) -> np.ndarray:
    """Per-pixel weights w so that the extension equals sum(errors * w)."""
    errors = np.asarray(errors, dtype=np.float64)
    order = np.argsort(-errors, kind="stable")
    weights = np.empty_like(errors)
    weights[order] = lovasz_grad(np.asarray(fg, dtype=np.float64)[order])
    return weights


def lovasz_extension(errors, fg) -> float:
    return float(np.dot(np.asarray(errors, dtype=np.float64), lovasz_weights(errors, fg)))


def lovasz_extension_oracle(errors, fg) -> float:
    """Extension evaluated from its definition by walking the sorted prefixes."""
    errors = np.asarray(errors, dtype=np.float64)
    fg = np.asarray(fg, dtype=bool)
    order = np.argsort(-errors, kind="stable")
    value = 0.0
    chosen = np.zeros(len(errors), dtype=bool)
    previous = 0.0
    for idx in order:
        chosen[idx] = True
        current = jaccard_set_loss(chosen, fg)
        value += errors[idx] * (current - previous)
        previous = current
    return value


# ============================================================================
# Error vectors
# ============================================================================
@dataclass
class ErrorVector:
    """Pixel errors of one class with signed labels (foreground 1, background -1)."""

    errors: np.ndarray
    signed_labels: np.ndarray
    probabilities: np.ndarray

    @property
    def foreground(self) -> np.ndarray:
        return self.signed_labels > 0


def error_vector(probabilities, labels, cls: int) -> ErrorVector:
    """m_i = 1 - p_i where pixel i belongs to cls, p_i otherwise."""
    p = np.asarray(probabilities, dtype=np.float64)[:, cls]
    fg = np.asarray(labels) == cls
    errors = np.where(fg, 1.0 - p, p)
    return ErrorVector(errors, np.where(fg, 1, -1), p)


def class_probabilities(logits: Tensor) -> Tensor:
    """(H*W) x C softmax over classes."""
    return softmax_rows(flatten_map(logits))


# ============================================================================
# Losses
# ============================================================================
def lovasz_softmax(logits: Tensor, gt) -> Tensor:
    """Mean Lovász-Softmax over the classes present in gt.

    Raises:
        LabelError: If gt holds values other than 0 and 1
        ShapeError: If gt is empty or does not match logits
    """
    labels = _labels(logits, gt)
    probs = class_probabilities(logits)
    pixels = labels.size
    terms: List[Tensor] = []
    for c in range(N_CLASSES):
        fg = (labels == c).astype(np.float64)
        if not fg.any():
            continue
        selector = np.zeros((N_CLASSES, 1))
        selector[c, 0] = 1.0
        p_c = matmul(probs, Tensor(selector))
        m = add(mul(p_c, Tensor((1.0 - 2.0 * fg).reshape(pixels, 1))), Tensor(fg.reshape(pixels, 1)))
        weights = lovasz_weights(m.data[:, 0], fg)
        terms.append(total(mul(m, Tensor(weights.reshape(pixels, 1)))))
    return average(terms)


def cross_entropy(logits: Tensor, gt) -> Tensor:
    """Mean negative log-probability of the true class."""
    labels = _labels(logits, gt)
    one_hot = np.zeros((labels.size, N_CLASSES))
    one_hot[np.arange(labels.size), labels] = 1.0
    log_probs = log_softmax_rows(flatten_map(logits))
    return scale(total(mul(log_probs, Tensor(one_hot))), -1.0 / labels.size)


LOSSES = {
    "lovasz": lovasz_softmax,
    "cross_entropy": cross_entropy,
}


def loss_by_name(name: str):
    try:
        return LOSSES[name]
    except KeyError as e:
        raise ValueError(f"Unknown loss {name!r}; expected one of {sorted(LOSSES)}") from e
