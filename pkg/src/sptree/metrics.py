"""Training losses as pure functions, proposal scoring, IoU and AP evaluation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyProposalSet, LengthMismatch, MissingGroundTruth, NoForegroundPoints
from .scene_io import IGNORE, NONE, ClassifierWeights, PointPredictions, Proposal, Scene

EPS = 1e-7


def bce(p, y) -> np.ndarray:
    """Binary cross-entropy with ``p`` clamped to ``[EPS, 1 - EPS]``."""
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def semantic_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean cross-entropy plus a dice term over all points and categories."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise LengthMismatch(f"prediction shape {pred.shape} vs target {target.shape}")
    ce = -(target * np.log(np.clip(pred, EPS, 1.0))).sum(axis=1).mean()
    denom = (pred * pred).sum() + (target * target).sum()
    dice = 1.0 - 2.0 * (pred * target).sum() / denom if denom > 0 else 0.0
    return float(ce + dice)


def offset_loss(offsets, positions, gt_centers, mask) -> float:
    """L1-style distance term minus mean cosine, over masked points.

    Cosine contributions of zero-length vectors count as 0.
    """
    o = np.asarray(offsets, dtype=np.float64)
    target = np.asarray(gt_centers, dtype=np.float64) - np.asarray(positions, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    n_fg = int(mask.sum())
    if n_fg == 0:
        raise NoForegroundPoints("offset loss needs at least one instance point")
    o, target = o[mask], target[mask]
    dist = np.linalg.norm(o - target, axis=1).sum() / n_fg
    no = np.linalg.norm(o, axis=1)
    nt = np.linalg.norm(target, axis=1)
    ok = (no > 0) & (nt > 0)
    cos = np.zeros(n_fg)
    cos[ok] = np.einsum("ij,ij->i", o[ok], target[ok]) / (no[ok] * nt[ok])
    return float(dist - cos.sum() / n_fg)


def evaluation_loss(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyProposalSet("evaluation loss over zero proposals")
    return float(bce(scores, labels).mean())


def instance_centers(scene: Scene) -> np.ndarray:
    """Per-point ground-truth instance center (NaN for non-instance points)."""
    if scene.gt_instance is None:
        raise MissingGroundTruth("instance centers need gt_instance")
    pos = scene.positions.astype(np.float64)
    out = np.full_like(pos, np.nan)
    inst = scene.gt_instance
    for j in np.unique(inst[inst != NONE]):
        sel = inst == j
        out[sel] = pos[sel].mean(axis=0)
    return out


# --------------------------------------------------------------------------
# ground-truth instances and IoU


@dataclass(frozen=True, eq=False)
class GtInstance:
    id: int
    category: int
    point_indices: np.ndarray


def gt_instances(scene: Scene) -> list[GtInstance]:
    if scene.gt_instance is None or scene.gt_semantic is None:
        raise MissingGroundTruth("evaluation needs gt_instance and gt_semantic")
    out = []
    for j in np.unique(scene.gt_instance[scene.gt_instance != NONE]):
        idx = np.flatnonzero(scene.gt_instance == j)
        cats = scene.gt_semantic[idx]
        cats = cats[cats != IGNORE]
        out.append(GtInstance(int(j), int(np.bincount(cats).argmax()), idx))
    return out


def set_iou(a, b) -> float:
    a = np.unique(np.asarray(a, dtype=np.int64))
    b = np.unique(np.asarray(b, dtype=np.int64))
    if a.size == 0 and b.size == 0:
        return 1.0
    inter = np.intersect1d(a, b, assume_unique=True).size
    return inter / (a.size + b.size - inter)


def iou_matrix(proposals: Sequence[Proposal], gts: Sequence[GtInstance], n_points: int) -> np.ndarray:
    """IoU of every proposal against every ground-truth instance."""
    owner = np.full(n_points, -1, dtype=np.int64)
    for g, inst in enumerate(gts):
        owner[inst.point_indices] = g
    gt_sizes = np.array([len(g.point_indices) for g in gts], dtype=np.float64)
    out = np.zeros((len(proposals), len(gts)))
    for p, prop in enumerate(proposals):
        pts = np.unique(prop.point_indices)
        hits = owner[pts]
        inter = np.bincount(hits[hits >= 0], minlength=len(gts)).astype(np.float64)
        out[p] = inter / (pts.size + gt_sizes - inter)
    return out


def proposal_label(proposal: Proposal, gts: Sequence[GtInstance] | Scene, low: float = 0.25,
                   high: float = 0.75) -> float:
    """Soft proposal label from its best IoU, linear between ``low`` and ``high``."""
    if isinstance(gts, Scene):
        gts = gt_instances(gts)
    best = max((set_iou(proposal.point_indices, g.point_indices) for g in gts), default=0.0)
    return float(np.clip((best - low) / (high - low), 0.0, 1.0))


# --------------------------------------------------------------------------
# scoring


def proposal_semantics(proposal: Proposal, tree) -> np.ndarray:
    """Size-weighted semantic scores over the proposal's leaf superpoints."""
    leaves = np.array([tree.leaf_of_superpoint[int(s)] for s in proposal.superpoint_ids], dtype=np.int64)
    w = tree.size[leaves].astype(np.float64)
    return (w[:, None] * tree.a[leaves]).sum(axis=0) / w.sum()


def heuristic_score(proposal: Proposal, tree) -> float:
    """Confidence as the largest semantic score of the proposal's node."""
    return float(np.max(proposal_semantics(proposal, tree)))


class MlpScorer:
    """Scores a proposal from its mean point feature with a loaded MLP."""

    def __init__(self, weights: ClassifierWeights):
        if weights.out_dim != 1:
            raise ValueError("scoring MLP must output a single value")
        self.weights = weights

    def __call__(self, proposal: Proposal, predictions: PointPredictions) -> float:
        feats = predictions.features[proposal.point_indices].astype(np.float64).mean(axis=0)
        return float(np.clip(self.weights.forward(feats[None, :])[0, 0], EPS, 1.0 - EPS))


# --------------------------------------------------------------------------
# average precision

MAP_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2).tolist())


@dataclass
class EvalConfig:
    iou_thresholds: tuple[float, ...] = MAP_THRESHOLDS
    categories: tuple[int, ...] | None = None

    def __post_init__(self):
        th = np.asarray(self.iou_thresholds, dtype=np.float64)
        if th.size == 0 or np.any(th <= 0) or np.any(th >= 1) or np.any(np.diff(th) <= 0):
            raise ValueError("IoU thresholds must be strictly increasing inside (0, 1)")


@dataclass(frozen=True)
class ScoredMatch:
    proposal: int
    gt: int  # NONE when unmatched
    iou: float
    confidence: float


def average_precision(is_tp: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP of a confidence-ordered TP/FP sequence."""
    if n_gt == 0:
        return float("nan")
    tp = np.asarray(is_tp, dtype=np.float64)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float((steps * envelope).sum())


def _confidence_order(proposals: Sequence[Proposal]) -> list[int]:
    def key(i):
        p = proposals[i]
        first = int(p.point_indices[0]) if p.point_indices.size else -1
        return (-float(p.confidence), int(p.node_id), first, p.n_points)
    return sorted(range(len(proposals)), key=key)


def match_category(ious: np.ndarray, order: Sequence[int], threshold: float,
                   confidences: Sequence[float]) -> list[ScoredMatch]:
    """Greedy matching in confidence order to the best unmatched gt."""
    taken = np.zeros(ious.shape[1], dtype=bool)
    out = []
    for p in order:
        row = np.where(taken, -1.0, ious[p]) if ious.shape[1] else np.zeros(0)
        g = int(np.argmax(row)) if row.size else -1
        if g >= 0 and row[g] >= threshold:
            taken[g] = True
            out.append(ScoredMatch(p, g, float(ious[p, g]), float(confidences[p])))
        else:
            best = float(ious[p].max()) if ious.shape[1] else 0.0
            out.append(ScoredMatch(p, NONE, best, float(confidences[p])))
    return out


def evaluate_map(proposals: Sequence[Proposal], scene: Scene, config: EvalConfig | None = None) -> dict:
    """Per-category AP over IoU thresholds plus mAP, AP@50 and AP@25."""
    config = config or EvalConfig()
    gts = gt_instances(scene)
    if config.categories is None:
        categories = sorted({g.category for g in gts})
    else:
        categories = sorted(int(c) for c in config.categories)
    ious = iou_matrix(proposals, gts, scene.n_points)
    conf = [p.confidence for p in proposals]
    order = _confidence_order(proposals)

    def ap_table(thresholds):
        table = {}
        for c in categories:
            g_idx = [i for i, g in enumerate(gts) if g.category == c]
            p_order = [i for i in order if proposals[i].category == c]
            sub = ious[:, g_idx]
            table[c] = [
                average_precision([m.gt != NONE for m in match_category(sub, p_order, th, conf)], len(g_idx))
                for th in thresholds
            ]
        return table

    main = ap_table(config.iou_thresholds)
    at50 = ap_table((0.5,))
    at25 = ap_table((0.25,))

    def nanmean(values):
        vals = [v for v in values if not np.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    per_category = {}
    for c in categories:
        per_category[c] = {
            "AP": nanmean(main[c]) if not all(np.isnan(main[c])) else float("nan"),
            "AP@50": at50[c][0],
            "AP@25": at25[c][0],
            "n_gt": sum(1 for g in gts if g.category == c),
            "n_proposals": sum(1 for p in proposals if p.category == c),
        }
    return {
        "mAP": nanmean(v["AP"] for v in per_category.values()),
        "AP@50": nanmean(v["AP@50"] for v in per_category.values()),
        "AP@25": nanmean(v["AP@25"] for v in per_category.values()),
        "per_category": per_category,
        "iou_thresholds": list(config.iou_thresholds),
    }
