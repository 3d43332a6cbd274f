"""Clique refinement of proposals with a small graph convolution stack."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyProposal, MissingSoftLabels, ShapeMismatch
from .metrics import bce
from .scene_io import ClassifierWeights, Proposal, activate
from .ssttree import SSTree

PRUNE_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class Clique:
    """Star graph: row 0 is the branch node, rows 1.. its leaf superpoints."""

    node_features: np.ndarray
    adjacency: np.ndarray
    node_id: int = -1
    leaf_nodes: np.ndarray | None = None

    @property
    def n_leaves(self) -> int:
        return int(self.adjacency.shape[0]) - 1


def star_adjacency(n_leaves: int) -> np.ndarray:
    adj = np.zeros((n_leaves + 1, n_leaves + 1))
    adj[0, 1:] = 1.0
    adj[1:, 0] = 1.0
    return adj


def build_clique(tree: SSTree, proposal: Proposal, features: np.ndarray | None = None) -> Clique:
    if len(proposal.superpoint_ids) == 0:
        raise EmptyProposal(f"proposal at node {proposal.node_id} has no superpoints")
    features = tree.node_features() if features is None else np.asarray(features, dtype=np.float64)
    leaves = np.array([tree.leaf_of_superpoint[int(s)] for s in proposal.superpoint_ids], dtype=np.int64)
    rows = np.concatenate([[proposal.node_id], leaves])
    return Clique(features[rows], star_adjacency(len(leaves)), proposal.node_id, leaves)


def normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    a_bar = np.asarray(adjacency, dtype=np.float64) + np.eye(adjacency.shape[0])
    d = 1.0 / np.sqrt(a_bar.sum(axis=1))
    return d[:, None] * a_bar * d[None, :]


def gcn_layer(features: np.ndarray, adjacency: np.ndarray, weight: np.ndarray, activation: str = "none",
              bias: np.ndarray | None = None) -> np.ndarray:
    """``act(D^-1/2 (A + I) D^-1/2 F W + b)`` with nodes as rows of ``F``."""
    F = np.asarray(features, dtype=np.float64)
    W = np.asarray(weight, dtype=np.float64)
    A = np.asarray(adjacency, dtype=np.float64)
    if F.ndim != 2 or W.ndim != 2 or F.shape[1] != W.shape[0]:
        raise ShapeMismatch(f"features {F.shape} do not chain with weight {W.shape}")
    if A.shape != (F.shape[0], F.shape[0]):
        raise ShapeMismatch(f"adjacency {A.shape} does not match {F.shape[0]} nodes")
    out = normalized_adjacency(A) @ F @ W
    if bias is not None:
        out = out + np.asarray(bias, dtype=np.float64)
    return activate(out, activation)


def cliquenet_forward(clique: Clique, weights: ClassifierWeights) -> np.ndarray:
    """Per-node scores in (0, 1); layer activations come from the weights file."""
    if weights.in_dim != clique.node_features.shape[1] or weights.out_dim != 1:
        raise ShapeMismatch(
            f"weights map {weights.in_dim} -> {weights.out_dim}, clique has width {clique.node_features.shape[1]}")
    h = clique.node_features
    for layer in weights.layers:
        h = gcn_layer(h, clique.adjacency, layer.weight, layer.activation, layer.bias)
    return h[:, 0]


def prune(tree: SSTree, proposal: Proposal, scores: np.ndarray, threshold: float = PRUNE_THRESHOLD) -> Proposal:
    """Drop leaves scoring below ``threshold``; never drop the last one.

    ``scores[0]`` belongs to the branch node and is not used.
    """
    scores = np.asarray(scores, dtype=np.float64)
    sp_ids = np.asarray(proposal.superpoint_ids)
    if scores.shape[0] != sp_ids.shape[0] + 1:
        if sp_ids.shape[0] == 0 and scores.shape[0] == 1:
            return proposal
        raise ShapeMismatch(f"{scores.shape[0]} scores for {sp_ids.shape[0]} superpoints")
    leaf_scores = scores[1:]
    keep = leaf_scores >= threshold
    if not keep.any():
        keep[int(np.argmax(leaf_scores))] = True
    if keep.all():
        return proposal
    kept = sp_ids[keep]
    leaves = [tree.leaf_of_superpoint[int(s)] for s in kept]
    points = np.sort(np.concatenate([tree.leaf_points[i] for i in leaves]))
    return Proposal(proposal.node_id, kept, points, proposal.category, proposal.confidence)


def refining_loss(clique: Clique, scores: np.ndarray, q_node: np.ndarray, q_leaves: np.ndarray) -> float:
    """Mean BCE of leaf scores against soft same-instance targets."""
    if q_node is None or q_leaves is None:
        raise MissingSoftLabels("refining loss needs soft instance labels")
    q_leaves = np.asarray(q_leaves, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if q_leaves.shape[0] != clique.n_leaves or scores.shape[0] != clique.n_leaves + 1:
        raise ShapeMismatch("scores and soft labels must cover every clique leaf")
    targets = q_leaves @ np.asarray(q_node, dtype=np.float64)
    return float(bce(scores[1:], targets).mean())


def refine_proposals(tree: SSTree, proposals, weights: ClassifierWeights, threshold: float = PRUNE_THRESHOLD):
    features = tree.node_features()
    out = []
    for p in proposals:
        clique = build_clique(tree, p, features)
        out.append(prune(tree, p, cliquenet_forward(clique, weights), threshold))
    return out
