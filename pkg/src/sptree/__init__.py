"""Superpoint-tree instance proposals for 3D point clouds."""

from ._kernels import BACKEND
from .scene_io import (
    ClassifierWeights,
    DenseLayer,
    PointPredictions,
    Proposal,
    Scene,
    load_predictions,
    load_proposals,
    load_scene,
    load_weights,
    save_predictions,
    save_proposals,
    save_scene,
    save_weights,
)
from .oversegment import SuperpointAssignment, build_knn_graph, oversegment, segment_graph
from .superpool import Superpoint, compute_center, compute_soft_labels, filter_foreground, pool_superpoints
from .ssttree import SSTree, augment_score, build_naive, build_nn_chain, merge_nodes
from .proposer import MlpClassifier, ThresholdClassifier, splitting_loss, traverse_and_split
from .refine import build_clique, cliquenet_forward, gcn_layer, prune, refining_loss
from .metrics import EvalConfig, evaluate_map, evaluation_loss, offset_loss, semantic_loss

__version__ = "0.1.0"
