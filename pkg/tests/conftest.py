import numpy as np
import pytest

from sptree import _kernels
from sptree.scene_io import PointPredictions, Scene
from sptree.superpool import Superpoint


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(_kernels.backends()))
def backend(request):
    return _kernels.backends()[request.param]


def random_scene(rng, n=100, normals=True, gt=True, k=4, j=3):
    pos = rng.normal(size=(n, 3))
    col = rng.uniform(size=(n, 3))
    nrm = None
    if normals:
        nrm = rng.normal(size=(n, 3))
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    sem = inst = None
    if gt:
        sem = rng.integers(-1, k, size=n)
        inst = rng.integers(-1, j, size=n)
        inst[sem == -1] = -1
    return Scene(pos, col, nrm, sem, inst)


def random_predictions(rng, n=100, k=4, nf=6):
    scores = rng.dirichlet(np.ones(k), size=n).astype(np.float32)
    scores = scores / scores.sum(axis=1, keepdims=True, dtype=np.float64)
    return PointPredictions(rng.normal(size=(n, nf)), scores, rng.normal(size=(n, 3)))


def random_superpoints(rng, m, k=3, nf=4, j=None, max_size=50):
    """Tie-free random superpoints with centers (and soft labels if ``j``)."""
    sps = []
    start = 0
    for i in range(m):
        size = int(rng.integers(1, max_size))
        q = None
        if j:
            q = rng.dirichlet(np.ones(j + 1))[:j]
        sps.append(Superpoint(i, np.arange(start, start + size), rng.normal(size=nf),
                              rng.dirichlet(np.ones(k)), rng.normal(size=3),
                              center=rng.normal(size=3), soft_label=q))
        start += size
    return sps


def cluster_superpoints(rng, sizes=(6, 6), gap=20.0, spread=0.05, k=3, nf=4):
    """Superpoints in well-separated groups along x; returns (sps, group of each sp)."""
    sps, groups = [], []
    start = 0
    for g, count in enumerate(sizes):
        for _ in range(count):
            size = int(rng.integers(1, 20))
            center = np.array([g * gap, 0.0, 0.0]) + rng.normal(0, spread, 3)
            a = np.eye(k)[g % k] * 0.9 + 0.1 / k
            sps.append(Superpoint(len(sps), np.arange(start, start + size), rng.normal(size=nf), a,
                                  rng.normal(size=3), center=center))
            groups.append(g)
            start += size
    return sps, np.array(groups)
