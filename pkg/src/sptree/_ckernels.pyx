# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; semantics match _kernels_py."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

LINKAGE_WARD = 0
LINKAGE_CENTROID = 1


cdef inline double _sq_dist(double[:, ::1] cent, double[::1] mass, Py_ssize_t a,
                            Py_ssize_t b, Py_ssize_t d, bint ward) nogil:
    cdef double acc = 0.0, diff
    cdef Py_ssize_t k
    for k in range(d):
        diff = cent[b, k] - cent[a, k]
        acc += diff * diff
    if ward:
        acc = acc * (2.0 * mass[b] * mass[a] / (mass[b] + mass[a]))
    return acc


def nn_chain(X, sizes, int linkage=0):
    X = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t m = X.shape[0], d = X.shape[1]
    out_arr = np.zeros((max(m - 1, 0), 3), dtype=np.float64)
    if m < 2:
        return out_arr
    cdef Py_ssize_t total = 2 * m - 1
    cent_arr = np.zeros((total, d), dtype=np.float64)
    cent_arr[:m] = X
    mass_arr = np.zeros(total, dtype=np.float64)
    mass_arr[:m] = sizes
    active_arr = np.zeros(total, dtype=np.uint8)
    active_arr[:m] = 1
    chain_arr = np.zeros(total + 1, dtype=np.intp)

    cdef double[:, ::1] cent = cent_arr
    cdef double[::1] mass = mass_arr
    cdef unsigned char[::1] active = active_arr
    cdef Py_ssize_t[::1] chain = chain_arr
    cdef double[:, ::1] out = out_arr
    cdef bint ward = linkage == 0
    cdef Py_ssize_t n_nodes = m, clen = 0, step, a, b, c, x, prev, new, k
    cdef double best, sq, sa, sb, d_ab = 0.0

    with nogil:
        for step in range(m - 1):
            if clen == 0:
                for x in range(n_nodes):
                    if active[x]:
                        chain[0] = x
                        clen = 1
                        break
            while True:
                a = chain[clen - 1]
                best = INFINITY
                c = -1
                for x in range(n_nodes):
                    if x == a or not active[x]:
                        continue
                    sq = _sq_dist(cent, mass, a, x, d, ward)
                    if sq < best:
                        best = sq
                        c = x
                if clen >= 2:
                    prev = chain[clen - 2]
                    sq = _sq_dist(cent, mass, a, prev, d, ward)
                    if sq <= best:
                        best = sq
                        c = prev
                    if c == prev:
                        d_ab = best
                        break
                chain[clen] = c
                clen += 1
            b = chain[clen - 1]
            a = chain[clen - 2]
            clen -= 2
            new = m + step
            sa = mass[a]
            sb = mass[b]
            for k in range(d):
                cent[new, k] = (sa * cent[a, k] + sb * cent[b, k]) / (sa + sb)
            mass[new] = sa + sb
            active[a] = 0
            active[b] = 0
            active[new] = 1
            n_nodes = new + 1
            out[step, 0] = a
            out[step, 1] = b
            out[step, 2] = sqrt(d_ab)
    return out_arr


cdef inline Py_ssize_t _find(Py_ssize_t[::1] parent, Py_ssize_t x) nogil:
    cdef Py_ssize_t root = x, nxt
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


cdef inline Py_ssize_t _union(Py_ssize_t[::1] parent, Py_ssize_t[::1] size,
                              Py_ssize_t ra, Py_ssize_t rb) nogil:
    cdef Py_ssize_t tmp
    if size[ra] < size[rb] or (size[ra] == size[rb] and rb < ra):
        tmp = ra
        ra = rb
        rb = tmp
    parent[rb] = ra
    size[ra] += size[rb]
    return ra


def segment_sorted_edges(u, v, w, Py_ssize_t n, double tau, Py_ssize_t min_size):
    cdef Py_ssize_t[::1] uu = np.ascontiguousarray(u, dtype=np.intp)
    cdef Py_ssize_t[::1] vv = np.ascontiguousarray(v, dtype=np.intp)
    cdef double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    parent_arr = np.arange(n, dtype=np.intp)
    size_arr = np.ones(n, dtype=np.intp)
    internal_arr = np.zeros(n, dtype=np.float64)
    labels_arr = np.full(n, -1, dtype=np.int64)
    remap_arr = np.full(n, -1, dtype=np.int64)
    cdef Py_ssize_t[::1] parent = parent_arr
    cdef Py_ssize_t[::1] size = size_arr
    cdef double[::1] internal = internal_arr
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef cnp.int64_t[::1] remap = remap_arr
    cdef Py_ssize_t e, ne = uu.shape[0], ra, rb, r, i, next_label = 0
    cdef double wt, ta, tb

    with nogil:
        for e in range(ne):
            ra = _find(parent, uu[e])
            rb = _find(parent, vv[e])
            if ra == rb:
                continue
            wt = ww[e]
            ta = internal[ra] + tau / size[ra]
            tb = internal[rb] + tau / size[rb]
            if wt <= (ta if ta < tb else tb):
                r = _union(parent, size, ra, rb)
                internal[r] = wt
        if min_size > 1:
            for e in range(ne):
                ra = _find(parent, uu[e])
                rb = _find(parent, vv[e])
                if ra != rb and (size[ra] < min_size or size[rb] < min_size):
                    ta = internal[ra] if internal[ra] > internal[rb] else internal[rb]
                    r = _union(parent, size, ra, rb)
                    internal[r] = ta
        for i in range(n):
            r = _find(parent, i)
            if remap[r] < 0:
                remap[r] = next_label
                next_label += 1
            labels[i] = remap[r]
    return labels_arr
