"""End-to-end orchestration and synthetic test scenes."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import PipelineError, SptreeError
from .metrics import EvalConfig, MAP_THRESHOLDS, MlpScorer, evaluate_map, proposal_semantics
from .oversegment import load_assignment, oversegment, save_assignment
from .proposer import filter_min_size, parse_classifier, traverse_and_split
from .refine import refine_proposals
from .scene_io import (
    NONE,
    PointPredictions,
    Scene,
    load_predictions,
    load_scene,
    load_weights,
    save_proposals,
)
from .ssttree import build_nn_chain, save_tree
from .superpool import pool_scene

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    scene: str = ""
    predictions: str = ""
    output_dir: str = "out"
    superpoints: str | None = None
    k: int = 16
    tau: float = 0.01
    min_size: int = 30
    lambda_normal: float = 1.0
    lambda_color: float = 0.2
    background_ids: list[int] = field(default_factory=lambda: [0, 1])
    linkage: str = "ward"
    classifier: str = "threshold:0.5"
    symmetric: bool = True
    refine: str | None = None
    scorer: str = "heuristic"
    min_proposal_points: int = 50
    iou_thresholds: list[float] = field(default_factory=lambda: list(MAP_THRESHOLDS))
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.min_size < 1:
            raise ValueError("min_size must be >= 1")
        if self.lambda_normal < 0 or self.lambda_color < 0:
            raise ValueError("edge weight coefficients must be >= 0")
        if self.linkage not in ("ward", "centroid"):
            raise ValueError(f"unknown linkage {self.linkage!r}")
        if self.min_proposal_points < 0:
            raise ValueError("min_proposal_points must be >= 0")
        EvalConfig(tuple(self.iou_thresholds))

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@contextmanager
def stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except (SptreeError, ValueError, OSError) as exc:
        raise PipelineError(name, exc) from exc


def _jsonable(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")


def score_proposals(proposals, tree, scorer: str = "heuristic", predictions: PointPredictions | None = None):
    """Set category and confidence of each proposal in place."""
    mlp = None
    if scorer.startswith("mlp:"):
        if predictions is None:
            raise ValueError("MLP scoring needs point predictions")
        mlp = MlpScorer(load_weights(scorer[4:]))
    elif scorer != "heuristic":
        raise ValueError(f"unknown scorer {scorer!r}")
    for p in proposals:
        sem = proposal_semantics(p, tree)
        p.category = int(np.argmax(sem))
        p.confidence = mlp(p, predictions) if mlp else float(sem.max())
    return proposals


def propose(tree, classifier: str = "threshold:0.5", symmetric: bool = True, refine: str | None = None,
            min_points: int = 50, scorer: str = "heuristic", predictions: PointPredictions | None = None):
    """Traverse, optionally refine, drop small proposals, then score."""
    with stage("propose"):
        clf = parse_classifier(classifier, tree, symmetric)
        proposals = traverse_and_split(tree, None, clf)
    if refine:
        with stage("refine"):
            proposals = refine_proposals(tree, proposals, load_weights(refine))
    with stage("score"):
        proposals = filter_min_size(proposals, min_points)
        score_proposals(proposals, tree, scorer, predictions)
    return proposals


def run_pipeline(config: PipelineConfig) -> dict:
    """Run every stage on one scene, write artifacts, and return the report."""
    t0 = time.perf_counter()
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    notes = []
    timings = {}

    with stage("load"):
        scene = load_scene(config.scene)
        predictions = load_predictions(config.predictions, scene)

    t = time.perf_counter()
    with stage("oversegment"):
        if config.superpoints:
            assignment = load_assignment(config.superpoints, scene.n_points)
        else:
            assignment = oversegment(scene, config.k, config.tau, config.min_size,
                                     config.lambda_normal, config.lambda_color)
        save_assignment(out / "superpoints.json", assignment)
    timings["oversegment"] = time.perf_counter() - t

    with stage("pool"):
        fg, bg = pool_scene(scene, assignment, predictions, config.background_ids)

    t = time.perf_counter()
    with stage("build-tree"):
        tree = build_nn_chain(fg, config.linkage, scene.n_points)
        save_tree(out / "tree.bin", tree)
    timings["build_tree"] = time.perf_counter() - t

    if not fg:
        notes.append("no foreground")
        proposals = []
    else:
        proposals = propose(tree, config.classifier, config.symmetric, config.refine,
                            config.min_proposal_points, config.scorer, predictions)

    with stage("save"):
        save_proposals(out / "proposals.sstr", proposals, scene)

    evaluation = None
    if scene.gt_instance is not None and scene.gt_semantic is not None:
        with stage("evaluate"):
            evaluation = evaluate_map(proposals, scene, EvalConfig(tuple(config.iou_thresholds)))
    else:
        notes.append("no ground truth; evaluation skipped")

    report = {
        "config": config.to_dict(),
        "backend": _kernels.BACKEND,
        "n_points": scene.n_points,
        "n_superpoints": assignment.n_superpoints,
        "n_foreground_superpoints": len(fg),
        "n_background_superpoints": len(bg),
        "tree_depth": tree.depth(),
        "n_proposals": len(proposals),
        "notes": notes,
        "evaluation": evaluation,
        "timings_s": timings,
    }
    write_json(out / "report.json", {k: v for k, v in report.items() if k != "timings_s"})
    report["timings_s"]["total"] = time.perf_counter() - t0
    log.info("pipeline done: %d proposals", len(proposals))
    return report


# --------------------------------------------------------------------------
# synthetic scenes


def synth_scene(n_instances: int = 5, points_per_instance: int = 200, sigma: float = 0.0, seed: int = 0,
                n_categories: int = 5, floor_points: int | None = None, feature_dim: int = 8,
                spacing: float = 3.0, spread: float = 0.2) -> tuple[Scene, PointPredictions]:
    """Gaussian blob instances above a floor, with oracle predictions.

    Category 0 is the floor; instance ``i`` gets category ``2 + i % (K - 2)``.
    Predicted scores are the one-hot truth mixed with ``sigma`` of random
    simplex mass, and offsets point at the true instance center plus
    ``sigma``-scaled Gaussian noise.
    """
    if n_instances < 1 or points_per_instance < 1:
        raise ValueError("need at least one instance with at least one point")
    if n_categories < 3:
        raise ValueError("need at least 3 categories (floor, spare, instances)")
    rng = np.random.default_rng(seed)
    cols = math.ceil(math.sqrt(n_instances))
    grid = np.array([(i % cols, i // cols) for i in range(n_instances)], dtype=np.float64) * spacing
    centers = np.column_stack([grid, np.full(n_instances, 1.5)])
    palette = rng.uniform(0.2, 1.0, size=(n_instances, 3))

    pos, col, nrm, sem, inst = [], [], [], [], []
    for i, c in enumerate(centers):
        p = c + rng.normal(0.0, spread, size=(points_per_instance, 3))
        d = p - c
        n = d / np.linalg.norm(d, axis=1, keepdims=True)
        pos.append(p)
        nrm.append(n)
        col.append(np.clip(palette[i] + rng.normal(0.0, 0.01, size=(points_per_instance, 3)), 0, 1))
        sem.append(np.full(points_per_instance, 2 + i % (n_categories - 2)))
        inst.append(np.full(points_per_instance, i))

    n_floor = points_per_instance * 2 if floor_points is None else floor_points
    if n_floor:
        lo, hi = grid.min(axis=0) - spacing / 2, grid.max(axis=0) + spacing / 2
        fp = np.column_stack([rng.uniform(lo[0], hi[0], n_floor), rng.uniform(lo[1], hi[1], n_floor),
                              np.zeros(n_floor)])
        pos.append(fp)
        nrm.append(np.tile([0.0, 0.0, 1.0], (n_floor, 1)))
        col.append(np.clip(0.1 + rng.normal(0.0, 0.01, size=(n_floor, 3)), 0, 1))
        sem.append(np.zeros(n_floor, dtype=np.int64))
        inst.append(np.full(n_floor, NONE))

    positions = np.concatenate(pos).astype(np.float32)
    scene = Scene(positions, np.concatenate(col), np.concatenate(nrm), np.concatenate(sem), np.concatenate(inst))

    n = scene.n_points
    p64 = scene.positions.astype(np.float64)
    onehot = np.eye(n_categories)[scene.gt_semantic]
    scores = (1.0 - sigma) * onehot + sigma * rng.dirichlet(np.ones(n_categories), size=n)
    gt_center = p64.copy()
    for j in range(n_instances):
        sel = scene.gt_instance == j
        gt_center[sel] = p64[sel].mean(axis=0)
    offsets = gt_center - p64 + sigma * rng.normal(size=(n, 3))
    codes = rng.normal(size=(n_instances + 1, feature_dim))
    feats = codes[np.where(scene.gt_instance == NONE, n_instances, scene.gt_instance)]
    feats = feats + sigma * rng.normal(size=feats.shape)
    scores = scores.astype(np.float32)
    scores = scores / scores.sum(axis=1, keepdims=True, dtype=np.float64)
    return scene, PointPredictions(feats, scores, offsets)


def corrupt_offsets(predictions: PointPredictions, fraction: float, scale: float, seed: int = 0) -> PointPredictions:
    """Replace the offsets of a random ``fraction`` of points with large noise."""
    rng = np.random.default_rng(seed)
    n = predictions.n_points
    hit = rng.choice(n, size=int(round(fraction * n)), replace=False)
    offsets = predictions.offsets.astype(np.float64)
    offsets[hit] += rng.normal(0.0, scale, size=(hit.size, 3))
    return PointPredictions(predictions.features, predictions.semantic_scores, offsets)
