"""Pure Python/numpy versions of the hot kernels.

These mirror ``_ckernels.pyx`` operation for operation and are used when the
compiled extension is unavailable or ``SPTREE_BACKEND=python`` is set.
"""
from __future__ import annotations

import numpy as np

LINKAGE_WARD = 0
LINKAGE_CENTROID = 1


def nn_chain(X, sizes, linkage: int = LINKAGE_WARD) -> np.ndarray:
    """Nearest-neighbor-chain agglomeration on size-weighted centroids.

    ``X`` holds one row per leaf, ``sizes`` the leaf masses.  Returns an
    (M-1, 3) array of ``(a, b, distance)`` in the order merges were found;
    the merge of step ``s`` creates node ``M + s``.

    With ``LINKAGE_WARD`` the merge distance is
    ``sqrt(2 s_a s_b / (s_a + s_b)) * |x_a - x_b|``, which is reducible.
    ``LINKAGE_CENTROID`` uses the plain centroid distance, which is not, so
    the result can differ from greedy agglomeration.
    """
    X = np.asarray(X, dtype=np.float64)
    m, d = X.shape
    out = np.zeros((max(m - 1, 0), 3), dtype=np.float64)
    if m < 2:
        return out
    total = 2 * m - 1
    cent = np.zeros((total, d), dtype=np.float64)
    cent[:m] = X
    mass = np.zeros(total, dtype=np.float64)
    mass[:m] = sizes
    active = np.zeros(total, dtype=bool)
    active[:m] = True
    ward = linkage == LINKAGE_WARD

    def sq_dist_from(a: int) -> np.ndarray:
        diff = cent[:n_nodes] - cent[a]
        sq = np.einsum("ij,ij->i", diff, diff)
        if ward:
            sq = sq * (2.0 * mass[:n_nodes] * mass[a] / (mass[:n_nodes] + mass[a]))
        sq[~active[:n_nodes]] = np.inf
        sq[a] = np.inf
        return sq

    chain: list[int] = []
    n_nodes = m
    for step in range(m - 1):
        if not chain:
            chain.append(int(np.flatnonzero(active)[0]))
        while True:
            a = chain[-1]
            sq = sq_dist_from(a)
            c = int(np.argmin(sq))
            if len(chain) >= 2:
                prev = chain[-2]
                if sq[prev] <= sq[c]:
                    c = prev
            if len(chain) >= 2 and c == chain[-2]:
                dist = np.sqrt(sq[c])
                break
            chain.append(c)
        b = chain.pop()
        a = chain.pop()
        new = m + step
        sa, sb = mass[a], mass[b]
        cent[new] = (sa * cent[a] + sb * cent[b]) / (sa + sb)
        mass[new] = sa + sb
        active[a] = active[b] = False
        active[new] = True
        n_nodes = new + 1
        out[step] = (a, b, dist)
    return out


def _find(parent: list[int], x: int) -> int:
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        parent[x], x = root, parent[x]
    return root


def segment_sorted_edges(u, v, w, n: int, tau: float, min_size: int) -> np.ndarray:
    """Graph-based segmentation over edges pre-sorted by ascending weight.

    Components ``a`` and ``b`` merge across edge weight ``w`` when
    ``w <= min(int_a + tau/|a|, int_b + tau/|b|)``; ``int`` is the largest
    edge weight merged so far inside the component.  A second pass over the
    same edge order folds components smaller than ``min_size`` into their
    lowest-weight neighbor.  Labels are contiguous, in order of first
    appearance.
    """
    u = np.asarray(u, dtype=np.int64).tolist()
    v = np.asarray(v, dtype=np.int64).tolist()
    w = np.asarray(w, dtype=np.float64).tolist()
    parent = list(range(n))
    size = [1] * n
    internal = [0.0] * n

    def union(ra: int, rb: int) -> int:
        if size[ra] < size[rb] or (size[ra] == size[rb] and rb < ra):
            ra, rb = rb, ra
        parent[rb] = ra
        size[ra] += size[rb]
        return ra

    for a, b, wt in zip(u, v, w):
        ra = _find(parent, a)
        rb = _find(parent, b)
        if ra == rb:
            continue
        if wt <= min(internal[ra] + tau / size[ra], internal[rb] + tau / size[rb]):
            r = union(ra, rb)
            internal[r] = wt

    if min_size > 1:
        for a, b in zip(u, v):
            ra = _find(parent, a)
            rb = _find(parent, b)
            if ra != rb and (size[ra] < min_size or size[rb] < min_size):
                r = union(ra, rb)
                internal[r] = max(internal[ra], internal[rb])

    labels = np.empty(n, dtype=np.int64)
    remap: dict[int, int] = {}
    for i in range(n):
        r = _find(parent, i)
        lab = remap.get(r)
        if lab is None:
            lab = remap[r] = len(remap)
        labels[i] = lab
    return labels
