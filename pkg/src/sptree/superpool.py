"""Superpoint-level pooling of point predictions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, MissingGroundTruth
from .oversegment import SuperpointAssignment
from .scene_io import NONE, PointPredictions, Scene


@dataclass(eq=False)
class Superpoint:
    id: int
    point_indices: np.ndarray
    f: np.ndarray
    a: np.ndarray
    o: np.ndarray
    center: np.ndarray | None = None
    soft_label: np.ndarray | None = None

    @property
    def size(self) -> int:
        return int(self.point_indices.shape[0])


def _renormalize(a: np.ndarray) -> np.ndarray:
    a = np.clip(a, 0.0, None)
    return a / a.sum(axis=-1, keepdims=True)


def pool_superpoints(assignment: SuperpointAssignment, predictions: PointPredictions) -> list[Superpoint]:
    """Average-pool features, semantic scores and offsets per superpoint."""
    if assignment.n_points != predictions.n_points:
        raise DimensionMismatch(
            f"assignment covers {assignment.n_points} points, predictions {predictions.n_points}")
    labels = assignment.labels
    m = assignment.n_superpoints
    counts = np.bincount(labels, minlength=m).astype(np.float64)
    assert np.all(counts > 0), "empty superpoint"

    def mean(x: np.ndarray) -> np.ndarray:
        x = x.astype(np.float64)
        out = np.zeros((m, x.shape[1]))
        np.add.at(out, labels, x)
        return out / counts[:, None]

    f = mean(predictions.features)
    a = _renormalize(mean(predictions.semantic_scores))
    o = mean(predictions.offsets)
    return [Superpoint(i, idx, f[i], a[i], o[i]) for i, idx in enumerate(assignment.members())]


def compute_center(sp: Superpoint, scene: Scene) -> np.ndarray:
    """Predicted instance center: pooled offset plus mean member position."""
    pos = scene.positions[sp.point_indices].astype(np.float64)
    sp.center = sp.o + pos.mean(axis=0)
    return sp.center


def compute_centers(sps: Iterable[Superpoint], scene: Scene) -> None:
    for sp in sps:
        compute_center(sp, scene)


def filter_foreground(sps: Sequence[Superpoint], background_ids: Iterable[int]) -> tuple[list[Superpoint], list[Superpoint]]:
    """Split superpoints by whether their top category is a background class."""
    bg = set(int(b) for b in background_ids)
    fg_out, bg_out = [], []
    for sp in sps:
        # np.argmax returns the lowest index on ties
        (bg_out if int(np.argmax(sp.a)) in bg else fg_out).append(sp)
    return fg_out, bg_out


def compute_soft_labels(sps: Iterable[Superpoint], scene: Scene, n_instances: int | None = None) -> None:
    """Fill each superpoint's soft instance label with member-point proportions."""
    if scene.gt_instance is None:
        raise MissingGroundTruth("soft labels need gt_instance")
    j = scene.n_instances if n_instances is None else n_instances
    for sp in sps:
        inst = scene.gt_instance[sp.point_indices]
        inst = inst[inst != NONE]
        sp.soft_label = np.bincount(inst, minlength=j)[:j].astype(np.float64) / sp.size


def pool_scene(scene: Scene, assignment: SuperpointAssignment, predictions: PointPredictions,
               background_ids: Iterable[int] = ()) -> tuple[list[Superpoint], list[Superpoint]]:
    """Pool, compute centers and soft labels (when GT exists), then split fg/bg."""
    sps = pool_superpoints(assignment, predictions)
    compute_centers(sps, scene)
    if scene.gt_instance is not None:
        compute_soft_labels(sps, scene)
    return filter_foreground(sps, background_ids)
