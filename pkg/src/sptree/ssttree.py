"""Semantic superpoint tree: agglomerative merge tree over foreground superpoints.

Leaves are numbered ``0..M-1`` in input order; internal node ``M + s`` is
created by merge step ``s``.  Every node carries size-weighted averages of
its leaves' features, semantic scores, offsets, centers and soft labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import FormatError, InvalidNode
from .scene_io import _Reader, _Writer, _read_bytes, _write_bytes

LINKAGES = {"ward": _kernels.LINKAGE_WARD, "centroid": _kernels.LINKAGE_CENTROID}


@dataclass(frozen=True)
class TreeNode:
    size: float
    f: np.ndarray
    a: np.ndarray
    o: np.ndarray
    center: np.ndarray
    q: np.ndarray | None = None

    @property
    def a_dag(self) -> np.ndarray:
        return np.concatenate([self.a, self.center])


def augment_score(obj) -> np.ndarray:
    """Augmented score: semantic scores followed by the predicted center."""
    if obj.center is None:
        raise ValueError("center has not been computed")
    return np.concatenate([np.asarray(obj.a, dtype=np.float64), np.asarray(obj.center, dtype=np.float64)])


def merge_nodes(ni: TreeNode, nj: TreeNode) -> TreeNode:
    """Size-weighted inheritance of every node attribute."""
    total = ni.size + nj.size
    wi, wj = ni.size / total, nj.size / total
    q = None
    if ni.q is not None and nj.q is not None:
        q = wi * ni.q + wj * nj.q
    return TreeNode(total, wi * ni.f + wj * nj.f, wi * ni.a + wj * nj.a,
                    wi * ni.o + wj * nj.o, wi * ni.center + wj * nj.center, q)


def leaf_node(sp) -> TreeNode:
    q = None if sp.soft_label is None else np.asarray(sp.soft_label, dtype=np.float64)
    return TreeNode(float(sp.size), np.asarray(sp.f, dtype=np.float64), np.asarray(sp.a, dtype=np.float64),
                    np.asarray(sp.o, dtype=np.float64), np.asarray(sp.center, dtype=np.float64), q)


@dataclass(eq=False)
class SSTree:
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    f: np.ndarray
    a: np.ndarray
    o: np.ndarray
    center: np.ndarray
    q: np.ndarray | None
    leaf_superpoint: np.ndarray
    leaf_points: list[np.ndarray]
    merge_order: np.ndarray  # (M-1, 3): left, right, distance
    linkage: str = "ward"
    n_points: int = 0

    @property
    def n_leaves(self) -> int:
        return int(self.leaf_superpoint.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(self.left.shape[0])

    @property
    def root(self) -> int:
        return self.n_nodes - 1

    @property
    def n_features(self) -> int:
        return int(self.f.shape[1])

    @property
    def n_categories(self) -> int:
        return int(self.a.shape[1])

    def is_leaf(self, t: int) -> bool:
        self._check(t)
        return t < self.n_leaves

    def children(self, t: int) -> tuple[int, int]:
        self._check(t)
        return int(self.left[t]), int(self.right[t])

    @property
    def a_dag(self) -> np.ndarray:
        return np.hstack([self.a, self.center])

    def node_features(self) -> np.ndarray:
        """Per-node ``[f; a; center]`` rows, width ``n + K + 3``."""
        return np.hstack([self.f, self.a, self.center])

    def _check(self, t) -> None:
        if not (0 <= int(t) < self.n_nodes):
            raise InvalidNode(f"node {t} outside 0..{self.n_nodes - 1}")

    @cached_property
    def parent(self) -> np.ndarray:
        par = np.full(self.n_nodes, -1, dtype=np.int64)
        internal = np.arange(self.n_leaves, self.n_nodes)
        par[self.left[internal]] = internal
        par[self.right[internal]] = internal
        return par

    @cached_property
    def _euler(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # children always have smaller ids than parents
        m, n = self.n_leaves, self.n_nodes
        count = np.zeros(n, dtype=np.int64)
        count[:m] = 1
        for t in range(m, n):
            count[t] = count[self.left[t]] + count[self.right[t]]
        start = np.zeros(n, dtype=np.int64)
        for t in range(n - 1, m - 1, -1):
            start[self.left[t]] = start[t]
            start[self.right[t]] = start[t] + count[self.left[t]]
        order = np.empty(m, dtype=np.int64)
        order[start[:m]] = np.arange(m)
        return order, start, count

    def branch_leaf_nodes(self, t: int) -> np.ndarray:
        """Leaf node ids under ``t`` in left-to-right order."""
        self._check(t)
        order, start, count = self._euler
        return order[start[t]:start[t] + count[t]]

    def branch_leaves(self, t: int) -> np.ndarray:
        """Superpoint ids of every leaf under node ``t``."""
        return self.leaf_superpoint[self.branch_leaf_nodes(t)]

    def branch_points(self, t: int) -> np.ndarray:
        leaves = self.branch_leaf_nodes(t)
        if leaves.size == 0:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate([self.leaf_points[i] for i in leaves]))

    @cached_property
    def leaf_of_superpoint(self) -> dict[int, int]:
        return {int(sp): i for i, sp in enumerate(self.leaf_superpoint)}

    def node_depths(self) -> np.ndarray:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for t in range(self.n_nodes - 1, self.n_leaves - 1, -1):
            depth[self.left[t]] = depth[self.right[t]] = depth[t] + 1
        return depth

    def depth(self) -> int:
        return int(self.node_depths().max()) if self.n_nodes else 0

    def merge_sets(self) -> set[frozenset[int]]:
        """Every internal node as the frozen set of its leaf superpoint ids."""
        return {frozenset(self.branch_leaves(t).tolist()) for t in range(self.n_leaves, self.n_nodes)}


def depth_bounds(m: int) -> tuple[int, int]:
    """Smallest and largest possible depth of a binary tree with ``m`` leaves."""
    if m <= 1:
        return 0, 0
    return math.ceil(math.log2(m)), m - 1


def _empty_tree(linkage: str, n: int = 0, k: int = 0) -> SSTree:
    z = np.zeros(0, dtype=np.int64)
    return SSTree(z, z.copy(), z.copy(), np.zeros((0, n)), np.zeros((0, k)), np.zeros((0, 3)),
                  np.zeros((0, 3)), None, z.copy(), [], np.zeros((0, 3)), linkage)


def _leaf_arrays(sps) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([augment_score(sp) for sp in sps])
    sizes = np.array([sp.size for sp in sps], dtype=np.float64)
    return X, sizes


def assemble_tree(sps: Sequence, merges: np.ndarray, linkage: str = "ward", n_points: int = 0) -> SSTree:
    """Build the node table from leaves and a merge list.

    ``merges[s] = (i, j, dist)`` joins nodes ``i`` and ``j`` into node
    ``M + s``; all attributes are inherited through :func:`merge_nodes`.
    """
    m = len(sps)
    n = 2 * m - 1
    nodes = [leaf_node(sp) for sp in sps]
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    merges = np.asarray(merges, dtype=np.float64).reshape(-1, 3).copy()
    for s, (i, j, _) in enumerate(merges):
        i, j = int(i), int(j)
        if i > j:
            i, j = j, i
            merges[s, 0], merges[s, 1] = i, j
        left[m + s], right[m + s] = i, j
        nodes.append(merge_nodes(nodes[i], nodes[j]))
    has_q = all(nd.q is not None for nd in nodes)
    return SSTree(
        left=left,
        right=right,
        size=np.array([nd.size for nd in nodes], dtype=np.int64),
        f=np.stack([nd.f for nd in nodes]),
        a=np.stack([nd.a for nd in nodes]),
        o=np.stack([nd.o for nd in nodes]),
        center=np.stack([nd.center for nd in nodes]),
        q=np.stack([nd.q for nd in nodes]) if has_q else None,
        leaf_superpoint=np.array([sp.id for sp in sps], dtype=np.int64),
        leaf_points=[np.asarray(sp.point_indices, dtype=np.int64) for sp in sps],
        merge_order=merges,
        linkage=linkage,
        n_points=n_points,
    )


def _relabel_sorted(merges: np.ndarray, m: int) -> np.ndarray:
    """Reorder chain-order merges by distance and renumber internal nodes."""
    order = np.argsort(merges[:, 2], kind="stable")
    new_id = np.arange(2 * m - 1, dtype=np.int64)
    new_id[m + order] = m + np.arange(m - 1)
    out = merges[order].copy()
    out[:, 0] = new_id[out[:, 0].astype(np.int64)]
    out[:, 1] = new_id[out[:, 1].astype(np.int64)]
    return out


def build_nn_chain(sps: Sequence, linkage: str = "ward", n_points: int = 0) -> SSTree:
    """Agglomerate superpoints with the nearest-neighbor-chain algorithm.

    O(M^2) time and O(M) extra memory beyond the node table.  For the
    reducible ``ward`` linkage the merges are reordered by distance so node
    numbering matches greedy agglomeration; ``centroid`` keeps chain order
    because it can produce inversions.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    m = len(sps)
    if m == 0:
        return _empty_tree(linkage)
    X, sizes = _leaf_arrays(sps)
    merges = np.asarray(_kernels.nn_chain(X, sizes, LINKAGES[linkage]))
    if m > 1 and linkage == "ward":
        merges = _relabel_sorted(merges, m)
    return assemble_tree(sps, merges, linkage, n_points)


def build_naive(sps: Sequence, linkage: str = "ward", n_points: int = 0) -> SSTree:
    """Greedy O(M^3) agglomeration; reference for :func:`build_nn_chain`.

    Distances live in a dense matrix updated by the Lance-Williams
    recurrence rather than recomputed from centroids.  Ties go to the pair
    with the smallest ``(min id, max id)``.
    """
    if linkage not in LINKAGES:
        raise ValueError(f"unknown linkage {linkage!r}")
    m = len(sps)
    if m == 0:
        return _empty_tree(linkage)
    X, sizes = _leaf_arrays(sps)
    n = 2 * m - 1
    mass = np.zeros(n)
    mass[:m] = sizes
    diff = X[:, None, :] - X[None, :, :]
    d2 = np.full((n, n), np.inf)
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    if linkage == "ward":
        sq = sq * (2.0 * sizes[:, None] * sizes[None, :] / (sizes[:, None] + sizes[None, :]))
    d2[:m, :m] = sq
    # only the upper triangle is searched so argmin order is (min id, max id)
    d2[np.tril_indices(n)] = np.inf
    active = np.zeros(n, dtype=bool)
    active[:m] = True
    merges = np.zeros((m - 1, 3))
    for s in range(m - 1):
        flat = int(np.argmin(d2))
        i, j = divmod(flat, n)
        dij = d2[i, j]
        new = m + s
        si, sj = mass[i], mass[j]
        ks = np.flatnonzero(active)
        ks = ks[(ks != i) & (ks != j)]
        dki = np.where(ks < i, d2[ks, i], d2[i, ks])
        dkj = np.where(ks < j, d2[ks, j], d2[j, ks])
        sk = mass[ks]
        if linkage == "ward":
            dnew = ((si + sk) * dki + (sj + sk) * dkj - sk * dij) / (si + sj + sk)
        else:
            dnew = (si * dki + sj * dkj) / (si + sj) - si * sj * dij / (si + sj) ** 2
        d2[ks, new] = np.maximum(dnew, 0.0)
        d2[i, :] = d2[:, i] = np.inf
        d2[j, :] = d2[:, j] = np.inf
        active[i] = active[j] = False
        active[new] = True
        mass[new] = si + sj
        merges[s] = (i, j, math.sqrt(max(dij, 0.0)))
    return assemble_tree(sps, merges, linkage, n_points)


def weighted_leaf_mean(tree: SSTree, t: int, attr: str) -> np.ndarray:
    """Direct size-weighted mean of ``attr`` over the leaves under ``t``."""
    leaves = tree.branch_leaf_nodes(t)
    values = getattr(tree, attr)[leaves]
    w = tree.size[leaves].astype(np.float64)
    return (w[:, None] * values).sum(axis=0) / w.sum()


# --------------------------------------------------------------------------
# serialization

_FLAG_Q = 1


def tree_to_bytes(tree: SSTree) -> bytes:
    w = _Writer(b"SSTT")
    k = tree.n_categories
    j = tree.q.shape[1] if tree.q is not None else 0
    flags = _FLAG_Q if tree.q is not None else 0
    w.u32(tree.n_leaves, k, tree.n_features, j, tree.n_points, LINKAGES[tree.linkage], flags)
    w.block(tree.left, np.int32)
    w.block(tree.right, np.int32)
    w.block(tree.size, np.int32)
    w.block(tree.leaf_superpoint, np.int32)
    for arr in (tree.f, tree.a, tree.o, tree.center):
        w.block(arr, np.float64)
    if tree.q is not None:
        w.block(tree.q, np.float64)
    w.block(tree.merge_order, np.float64)
    lengths = np.array([len(p) for p in tree.leaf_points], dtype=np.int64)
    w.block(np.concatenate([[0], np.cumsum(lengths)]), np.int32)
    pts = np.concatenate(tree.leaf_points) if tree.leaf_points else np.zeros(0, dtype=np.int64)
    w.block(pts, np.int32)
    return w.getvalue()


def tree_from_bytes(data: bytes, path="<bytes>") -> SSTree:
    r = _Reader(data, b"SSTT", path)
    m, k, nf, j, n_points, link, flags = (r.u32() for _ in range(7))
    names = {v: key for key, v in LINKAGES.items()}
    if link not in names:
        raise FormatError(f"{path}: unknown linkage code {link}")
    n = max(2 * m - 1, 0)
    left = r.block("left", np.int32, n, 1)[:, 0].astype(np.int64)
    right = r.block("right", np.int32, n, 1)[:, 0].astype(np.int64)
    size = r.block("size", np.int32, n, 1)[:, 0].astype(np.int64)
    leaf_sp = r.block("leaf_superpoint", np.int32, m, 1)[:, 0].astype(np.int64)
    f = r.block("f", np.float64, n, nf).copy()
    a = r.block("a", np.float64, n, k).copy()
    o = r.block("o", np.float64, n, 3).copy()
    center = r.block("center", np.float64, n, 3).copy()
    q = r.block("q", np.float64, n, j).copy() if flags & _FLAG_Q else None
    merges = r.block("merge_order", np.float64, max(m - 1, 0), 3).copy()
    offsets = r.block("leaf_offsets", np.int32, m + 1, 1)[:, 0].astype(np.int64)
    pts = r.block("leaf_points", np.int32, cols=1)[:, 0].astype(np.int64)
    r.finish()
    if offsets[-1] != pts.shape[0]:
        raise FormatError(f"{path}: leaf offsets do not match the point list")
    leaf_points = [pts[offsets[i]:offsets[i + 1]] for i in range(m)]
    return SSTree(left, right, size, f, a, o, center, q, leaf_sp, leaf_points, merges, names[link], n_points)


def save_tree(path, tree: SSTree) -> None:
    _write_bytes(path, tree_to_bytes(tree))


def load_tree(path) -> SSTree:
    return tree_from_bytes(_read_bytes(path), path)
