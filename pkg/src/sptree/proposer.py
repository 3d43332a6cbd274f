"""Instance proposals by breadth-first traversal of the superpoint tree."""
from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np

from .errors import MissingFeature, MissingSoftLabels
from .metrics import EPS, bce
from .scene_io import ClassifierWeights, Proposal
from .ssttree import SSTree

DEFAULT_MIN_PROPOSAL_POINTS = 50


class SplitClassifier:
    """Probability that two sibling nodes belong to one instance.

    Subclasses implement :meth:`prob` for one argument order; :meth:`decide`
    optionally averages both orders.
    """

    symmetric = True

    def prob(self, fa: np.ndarray, fb: np.ndarray) -> float:
        raise NotImplementedError

    def decide(self, fa: np.ndarray, fb: np.ndarray) -> float:
        if self.symmetric:
            return 0.5 * (self.prob(fa, fb) + self.prob(fb, fa))
        return self.prob(fa, fb)


class ConstantClassifier(SplitClassifier):
    def __init__(self, value: float):
        self.value = float(np.clip(value, EPS, 1.0 - EPS))

    def prob(self, fa, fb) -> float:
        return self.value


class ThresholdClassifier(SplitClassifier):
    """Keep siblings together when their augmented scores are within ``theta``.

    Node features are ``[f; a; center]``; the first ``skip`` entries (the
    feature part) are ignored so only the augmented score is compared.
    """

    def __init__(self, theta: float, skip: int = 0):
        self.theta = float(theta)
        self.skip = int(skip)

    def prob(self, fa, fb) -> float:
        d = float(np.linalg.norm(np.asarray(fa)[self.skip:] - np.asarray(fb)[self.skip:]))
        return 1.0 - EPS if d <= self.theta else EPS


class MlpClassifier(SplitClassifier):
    """MLP on the ordered concatenation of both node features."""

    def __init__(self, weights: ClassifierWeights, symmetric: bool = True):
        if weights.out_dim != 1:
            raise ValueError("split classifier must output a single value")
        self.weights = weights
        self.symmetric = symmetric

    def prob(self, fa, fb) -> float:
        x = np.concatenate([fa, fb])[None, :]
        if x.shape[1] != self.weights.in_dim:
            raise MissingFeature(f"classifier expects {self.weights.in_dim} inputs, got {x.shape[1]}")
        return float(np.clip(self.weights.forward(x)[0, 0], EPS, 1.0 - EPS))


def _proposal_for(tree: SSTree, t: int) -> Proposal:
    return Proposal(node_id=t, superpoint_ids=tree.branch_leaves(t), point_indices=tree.branch_points(t),
                    category=int(np.argmax(tree.a[t])), confidence=0.0)


def _check_features(tree: SSTree, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < tree.n_nodes:
        raise MissingFeature(f"need features for {tree.n_nodes} nodes, got shape {features.shape}")
    if not np.all(np.isfinite(features[:tree.n_nodes])):
        raise MissingFeature("node features contain non-finite values")
    return features


def traverse_and_split(tree: SSTree, features: np.ndarray | None, classifier: SplitClassifier) -> list[Proposal]:
    """Breadth-first split of the tree into disjoint branch proposals.

    A node whose children the classifier keeps together (``>= 0.5``) becomes
    a proposal and its subtree is not visited; leaves that reach the queue
    become singleton proposals.
    """
    if tree.n_nodes == 0:
        return []
    features = _check_features(tree, tree.node_features() if features is None else features)
    out = []
    queue = deque([tree.root])
    while queue:
        t = queue.popleft()
        if tree.is_leaf(t):
            out.append(_proposal_for(tree, t))
            continue
        s1, s2 = tree.children(t)
        if classifier.decide(features[s1], features[s2]) >= 0.5:
            out.append(_proposal_for(tree, t))
        else:
            queue.extend((s1, s2))
    return out


def filter_min_size(proposals: Sequence[Proposal], min_points: int = DEFAULT_MIN_PROPOSAL_POINTS) -> list[Proposal]:
    return [p for p in proposals if p.n_points >= min_points]


def make_ground_truth_targets(tree: SSTree, soft_labels: np.ndarray | None = None) -> dict[int, float]:
    """Same-instance target of each internal node: dot product of child soft labels."""
    q = tree.q if soft_labels is None else np.asarray(soft_labels, dtype=np.float64)
    if q is None:
        raise MissingSoftLabels("tree has no soft instance labels")
    return {t: float(q[tree.left[t]] @ q[tree.right[t]]) for t in range(tree.n_leaves, tree.n_nodes)}


def splitting_loss(tree: SSTree, classifier: SplitClassifier, soft_labels: np.ndarray | None = None,
                   features: np.ndarray | None = None) -> float:
    """Mean over internal nodes of the BCE of both argument orders."""
    targets = make_ground_truth_targets(tree, soft_labels)
    if not targets:
        return 0.0
    features = _check_features(tree, tree.node_features() if features is None else features)
    total = 0.0
    for t, y in targets.items():
        f1, f2 = features[tree.left[t]], features[tree.right[t]]
        total += 0.5 * (bce(classifier.prob(f1, f2), y) + bce(classifier.prob(f2, f1), y))
    return float(total / len(targets))


def parse_classifier(spec: str, tree: SSTree | None = None, symmetric: bool = True) -> SplitClassifier:
    """``threshold:<theta>``, ``mlp:<weights.sstw>`` or ``const:<p>``."""
    from .scene_io import load_weights

    kind, _, arg = spec.partition(":")
    if kind == "threshold":
        return ThresholdClassifier(float(arg), skip=tree.n_features if tree is not None else 0)
    if kind == "mlp":
        return MlpClassifier(load_weights(arg), symmetric=symmetric)
    if kind == "const":
        return ConstantClassifier(float(arg))
    raise ValueError(f"unknown classifier spec {spec!r}")
