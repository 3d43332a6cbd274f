"""Superpoint over-segmentation: kNN graph plus graph-based segmentation."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import _kernels
from .errors import DegenerateScene, FormatError, MissingFile
from .scene_io import Scene

DEFAULT_K = 16
DEFAULT_LAMBDA_NORMAL = 1.0
DEFAULT_LAMBDA_COLOR = 0.2
DEFAULT_TAU = 0.01
DEFAULT_MIN_SIZE = 30


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected edge list; each edge appears once with ``u < v``."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    n_vertices: int

    @property
    def n_edges(self) -> int:
        return int(self.u.shape[0])

    def degrees(self) -> np.ndarray:
        return np.bincount(np.concatenate([self.u, self.v]), minlength=self.n_vertices)

    def n_components(self) -> int:
        adj = coo_matrix((np.ones(self.n_edges), (self.u, self.v)),
                         shape=(self.n_vertices, self.n_vertices))
        return int(connected_components(adj, directed=False)[0])

    def is_connected(self) -> bool:
        return self.n_components() == 1


@dataclass(frozen=True, eq=False)
class SuperpointAssignment:
    labels: np.ndarray
    n_superpoints: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        counts = np.bincount(labels, minlength=self.n_superpoints) if labels.size else np.zeros(0)
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_superpoints):
            raise ValueError("superpoint ids must lie in 0..M-1")
        if counts.shape[0] != self.n_superpoints or np.any(counts == 0):
            raise ValueError("every superpoint id must be used at least once")

    @property
    def n_points(self) -> int:
        return int(self.labels.shape[0])

    def members(self) -> list[np.ndarray]:
        """Sorted point indices of every superpoint."""
        order = np.argsort(self.labels, kind="stable")
        bounds = np.cumsum(np.bincount(self.labels, minlength=self.n_superpoints))
        return np.split(order, bounds[:-1])


def build_knn_graph(scene: Scene, k: int = DEFAULT_K,
                    lambda_normal: float = DEFAULT_LAMBDA_NORMAL,
                    lambda_color: float = DEFAULT_LAMBDA_COLOR) -> WeightedGraph:
    """Symmetric kNN graph weighted by normal and color dissimilarity.

    ``w = lambda_normal * (1 - n_u . n_v) + lambda_color * |c_u - c_v|``;
    the normal term is dropped when the scene has no normals.
    """
    n = scene.n_points
    if n < 2:
        raise DegenerateScene(f"need at least 2 points to build a graph, got {n}")
    if k < 1:
        raise ValueError("k must be at least 1")
    k_eff = min(k, n - 1)
    pos = scene.positions.astype(np.float64)
    _, idx = cKDTree(pos).query(pos, k=k_eff + 1)
    idx = idx.reshape(n, k_eff + 1)
    src = np.repeat(np.arange(n), k_eff + 1)
    dst = idx.ravel()
    keep = src != dst
    src, dst = src[keep], dst[keep]
    # duplicated coordinates can push a point out of its own query result
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    pairs = np.unique(lo * n + hi)
    u = pairs // n
    v = pairs % n

    colors = scene.colors.astype(np.float64)
    w = lambda_color * np.linalg.norm(colors[u] - colors[v], axis=1)
    if scene.normals is not None:
        normals = scene.normals.astype(np.float64)
        w = w + lambda_normal * (1.0 - np.einsum("ij,ij->i", normals[u], normals[v]))
    w = np.maximum(w, 0.0)
    return WeightedGraph(u.astype(np.int64), v.astype(np.int64), w, n)


def segment_graph(graph: WeightedGraph, tau: float = DEFAULT_TAU,
                  min_size: int = DEFAULT_MIN_SIZE, n_points: int | None = None) -> SuperpointAssignment:
    """Partition graph vertices with the Felzenszwalb-Huttenlocher criterion.

    Edges are visited in ascending ``(w, u, v)`` order so ties resolve the
    same way on every platform.
    """
    if tau < 0:
        raise ValueError("tau must be non-negative")
    n = graph.n_vertices if n_points is None else n_points
    order = np.lexsort((graph.v, graph.u, graph.w))
    labels = _kernels.segment_sorted_edges(graph.u[order], graph.v[order], graph.w[order],
                                           n, float(tau), int(min_size))
    labels = np.asarray(labels, dtype=np.int64)
    return SuperpointAssignment(labels, int(labels.max()) + 1 if n else 0)


def oversegment(scene: Scene, k: int = DEFAULT_K, tau: float = DEFAULT_TAU,
                min_size: int = DEFAULT_MIN_SIZE,
                lambda_normal: float = DEFAULT_LAMBDA_NORMAL,
                lambda_color: float = DEFAULT_LAMBDA_COLOR) -> SuperpointAssignment:
    if scene.n_points == 1:
        return SuperpointAssignment(np.zeros(1, dtype=np.int64), 1)
    graph = build_knn_graph(scene, k, lambda_normal, lambda_color)
    return segment_graph(graph, tau, min_size, scene.n_points)


def save_assignment(path, assignment: SuperpointAssignment) -> None:
    doc = {"M": assignment.n_superpoints, "N": assignment.n_points,
           "labels": assignment.labels.tolist()}
    Path(path).write_text(json.dumps(doc))


def load_assignment(path, n_points: int | None = None) -> SuperpointAssignment:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise MissingFile(f"no such file: {path}") from exc
    labels = np.asarray(doc["labels"], dtype=np.int64)
    if n_points is not None and labels.shape[0] != n_points:
        raise FormatError(f"{path}: {labels.shape[0]} labels for a {n_points}-point scene")
    try:
        return SuperpointAssignment(labels, int(doc["M"]))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
