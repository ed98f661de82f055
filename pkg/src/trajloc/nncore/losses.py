"""Euclidean-distance objectives for location regression."""

from __future__ import annotations

import numpy as np

from .cells import ShapeError


def loss_single(pred_T, target_T) -> float:
    """Distance between the final predicted and true locations."""
    return float(np.linalg.norm(np.asarray(pred_T, float) - np.asarray(target_T, float)))


def loss_sequence(preds, targets) -> float:
    """Mean over steps of the per-step Euclidean distance."""
    preds = np.asarray(preds, float).reshape(-1, 2)
    targets = np.asarray(targets, float).reshape(-1, 2)
    if preds.shape != targets.shape:
        raise ShapeError(f"sequence lengths differ: {len(preds)} vs {len(targets)}")
    return float(np.linalg.norm(preds - targets, axis=1).mean())


def mean_distance(pred, target):
    """Mean Euclidean distance over all leading axes, with its gradient.

    ``pred`` and ``target`` are ``(..., 2)``.  Averaging over the step axis is
    the multi-output objective; over a batch it is the batch objective.  The
    gradient at a zero residual is taken as zero.
    """
    pred = np.asarray(pred, float)
    if pred.shape != np.shape(target):
        raise ShapeError(f"prediction {pred.shape} vs target {np.shape(target)}")
    diff = pred - target
    dist = np.sqrt((diff * diff).sum(axis=-1))
    count = dist.size
    safe = np.where(dist > 0.0, dist, 1.0)
    grad = np.where(dist[..., None] > 0.0, diff / safe[..., None], 0.0) / count
    return float(dist.mean()), grad
