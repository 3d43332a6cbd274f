"""Scene, prediction, weight and proposal containers and their binary formats.

Every container is little-endian: a 4-byte magic, a fixed set of u32
header fields, then a sequence of array blocks.  Each block carries its own
dtype code, row count and column count so a loader can tell a short array
apart from a short file, and never has to guess.
"""
from __future__ import annotations

import colorsys
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    FormatError,
    IndexOutOfRange,
    InvalidScene,
    LengthMismatch,
    MissingFile,
    NonSimplexRow,
    TruncatedFile,
)

IGNORE = -1
NONE = -1

SIMPLEX_TOL = 1e-5
NORMAL_TOL = 1e-4

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4"), 2: np.dtype("<f8")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}

ACTIVATIONS = ("none", "relu", "sigmoid")

_SCENE_NORMALS = 1
_SCENE_SEMANTIC = 2
_SCENE_INSTANCE = 4


def _frozen(arr: np.ndarray | None, dtype) -> np.ndarray | None:
    if arr is None:
        return None
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


# --------------------------------------------------------------------------
# low level container helpers


class _Writer:
    def __init__(self, magic: bytes):
        assert len(magic) == 4
        self._parts = [magic]

    def u32(self, *values: int) -> None:
        for v in values:
            self._parts.append(struct.pack("<I", int(v)))

    def i32(self, value: int) -> None:
        self._parts.append(struct.pack("<i", int(value)))

    def f32(self, value: float) -> None:
        self._parts.append(struct.pack("<f", float(value)))

    def block(self, arr: np.ndarray, dtype) -> None:
        dtype = np.dtype(dtype).newbyteorder("<")
        arr = np.ascontiguousarray(arr, dtype=dtype)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        rows, cols = arr.shape
        self._parts.append(struct.pack("<III", _DTYPE_CODES[dtype], rows, cols))
        self._parts.append(arr.tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class _Reader:
    def __init__(self, data: bytes, magic: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path
        head = self._take(4)
        if head != magic:
            raise BadMagic(f"{path}: expected magic {magic!r}, found {head!r}")

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"{self.path}: unexpected end of file at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self._take(4))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self._take(4))[0]

    def block(self, name: str, dtype, rows: int | None = None, cols: int | None = None) -> np.ndarray:
        code, r, c = struct.unpack("<III", self._take(12))
        want = _DTYPE_CODES[np.dtype(dtype).newbyteorder("<")]
        if code != want:
            raise FormatError(f"{self.path}: block {name!r} has dtype code {code}, expected {want}")
        if rows is not None and r != rows:
            raise LengthMismatch(f"{self.path}: block {name!r} has {r} rows, expected {rows}")
        if cols is not None and c != cols:
            raise DimensionMismatch(f"{self.path}: block {name!r} has {c} columns, expected {cols}")
        nbytes = r * c * _DTYPES[code].itemsize
        arr = np.frombuffer(self._take(nbytes), dtype=_DTYPES[code]).reshape(r, c)
        return arr

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise MissingFile(f"no such file: {path}") from exc


def _write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# Scene


@dataclass(frozen=True, eq=False)
class Scene:
    """Raw points with colors, optional normals and optional ground truth.

    Arrays are stored as float32/int32 so that a save/load round trip is
    bit-exact.  They are made read-only on construction.
    """

    positions: np.ndarray
    colors: np.ndarray
    normals: np.ndarray | None = None
    gt_semantic: np.ndarray | None = None
    gt_instance: np.ndarray | None = None

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "positions", _frozen(self.positions, np.float32))
        set_(self, "colors", _frozen(self.colors, np.float32))
        set_(self, "normals", _frozen(self.normals, np.float32))
        set_(self, "gt_semantic", _frozen(self.gt_semantic, np.int32))
        set_(self, "gt_instance", _frozen(self.gt_instance, np.int32))
        self._validate()

    def _validate(self) -> None:
        n = self.positions.shape[0] if self.positions.ndim == 2 else -1
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InvalidScene(f"positions must be N x 3, got {self.positions.shape}")
        if n < 1:
            raise InvalidScene("a scene needs at least one point")
        for name in ("colors", "normals"):
            arr = getattr(self, name)
            if arr is None:
                continue
            if arr.ndim != 2 or arr.shape[1] != 3:
                raise InvalidScene(f"{name} must be N x 3, got {arr.shape}")
            if arr.shape[0] != n:
                raise LengthMismatch(f"{name} has {arr.shape[0]} rows, positions has {n}")
        for name in ("gt_semantic", "gt_instance"):
            arr = getattr(self, name)
            if arr is None:
                continue
            if arr.ndim != 1:
                raise InvalidScene(f"{name} must be one-dimensional")
            if arr.shape[0] != n:
                raise LengthMismatch(f"{name} has {arr.shape[0]} entries, positions has {n}")
            if arr.size and arr.min() < -1:
                raise InvalidScene(f"{name} contains ids below -1")
        if self.normals is not None:
            norms = np.linalg.norm(self.normals.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > NORMAL_TOL):
                raise InvalidScene("normals must have unit length")
        if self.gt_instance is not None:
            on_instance = self.gt_instance != NONE
            if on_instance.any():
                if self.gt_semantic is None:
                    raise InvalidScene("gt_instance given without gt_semantic")
                if np.any(self.gt_semantic[on_instance] == IGNORE):
                    raise InvalidScene("instance points must carry a semantic label")

    @property
    def n_points(self) -> int:
        return int(self.positions.shape[0])

    @property
    def n_categories(self) -> int:
        if self.gt_semantic is None or self.gt_semantic.size == 0:
            return 0
        return int(max(self.gt_semantic.max() + 1, 0))

    @property
    def n_instances(self) -> int:
        if self.gt_instance is None or self.gt_instance.size == 0:
            return 0
        return int(max(self.gt_instance.max() + 1, 0))


def scene_to_bytes(scene: Scene) -> bytes:
    flags = 0
    if scene.normals is not None:
        flags |= _SCENE_NORMALS
    if scene.gt_semantic is not None:
        flags |= _SCENE_SEMANTIC
    if scene.gt_instance is not None:
        flags |= _SCENE_INSTANCE
    w = _Writer(b"SSTS")
    w.u32(scene.n_points, scene.n_categories, scene.n_instances, flags)
    w.block(scene.positions, np.float32)
    w.block(scene.colors, np.float32)
    if scene.normals is not None:
        w.block(scene.normals, np.float32)
    if scene.gt_semantic is not None:
        w.block(scene.gt_semantic, np.int32)
    if scene.gt_instance is not None:
        w.block(scene.gt_instance, np.int32)
    return w.getvalue()


def scene_from_bytes(data: bytes, path="<bytes>") -> Scene:
    r = _Reader(data, b"SSTS", path)
    n, k, j, flags = r.u32(), r.u32(), r.u32(), r.u32()
    positions = r.block("positions", np.float32, n, 3)
    colors = r.block("colors", np.float32, n, 3)
    normals = r.block("normals", np.float32, n, 3) if flags & _SCENE_NORMALS else None
    sem = r.block("gt_semantic", np.int32, n, 1)[:, 0] if flags & _SCENE_SEMANTIC else None
    inst = r.block("gt_instance", np.int32, n, 1)[:, 0] if flags & _SCENE_INSTANCE else None
    r.finish()
    if sem is not None and sem.size and sem.max() >= k:
        raise DimensionMismatch(f"{path}: semantic id {sem.max()} outside declared K={k}")
    if inst is not None and inst.size and inst.max() >= j:
        raise DimensionMismatch(f"{path}: instance id {inst.max()} outside declared J={j}")
    try:
        return Scene(positions, colors, normals, sem, inst)
    except InvalidScene as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_scene(path, scene: Scene) -> None:
    _write_bytes(path, scene_to_bytes(scene))


def load_scene(path) -> Scene:
    return scene_from_bytes(_read_bytes(path), path)


# --------------------------------------------------------------------------
# PointPredictions


@dataclass(frozen=True, eq=False)
class PointPredictions:
    """Per-point backbone outputs: features, semantic scores, offsets."""

    features: np.ndarray
    semantic_scores: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "features", _frozen(self.features, np.float32))
        set_(self, "semantic_scores", _frozen(self.semantic_scores, np.float32))
        set_(self, "offsets", _frozen(self.offsets, np.float32))
        f, a, o = self.features, self.semantic_scores, self.offsets
        if f.ndim != 2 or a.ndim != 2 or o.ndim != 2 or o.shape[1] != 3:
            raise DimensionMismatch("features N x n, semantic_scores N x K, offsets N x 3 expected")
        if not (f.shape[0] == a.shape[0] == o.shape[0]):
            raise LengthMismatch("prediction arrays disagree on N")
        check_simplex_rows(a)

    @property
    def n_points(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def n_categories(self) -> int:
        return int(self.semantic_scores.shape[1])


def check_simplex_rows(scores: np.ndarray, tol: float = SIMPLEX_TOL) -> None:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        return
    bad_neg = np.flatnonzero((s < 0).any(axis=1))
    if bad_neg.size:
        raise NonSimplexRow(f"row {bad_neg[0]} has a negative entry")
    dev = np.abs(s.sum(axis=1) - 1.0)
    bad = np.flatnonzero(dev > tol)
    if bad.size:
        i = bad[0]
        raise NonSimplexRow(f"row {i} sums to {s[i].sum():.7g}")


def predictions_to_bytes(pred: PointPredictions) -> bytes:
    w = _Writer(b"SSTP")
    w.u32(pred.n_points, pred.n_categories, pred.n_features)
    w.block(pred.features, np.float32)
    w.block(pred.semantic_scores, np.float32)
    w.block(pred.offsets, np.float32)
    return w.getvalue()


def predictions_from_bytes(data: bytes, scene: Scene | None = None, path="<bytes>") -> PointPredictions:
    r = _Reader(data, b"SSTP", path)
    n, k, nf = r.u32(), r.u32(), r.u32()
    if scene is not None and n != scene.n_points:
        raise DimensionMismatch(f"{path}: header N={n} but scene has {scene.n_points} points")
    features = r.block("features", np.float32, n, nf)
    scores = r.block("semantic_scores", np.float32, n, k)
    offsets = r.block("offsets", np.float32, n, 3)
    r.finish()
    return PointPredictions(features, scores, offsets)


def save_predictions(path, pred: PointPredictions) -> None:
    _write_bytes(path, predictions_to_bytes(pred))


def load_predictions(path, scene: Scene | None = None) -> PointPredictions:
    return predictions_from_bytes(_read_bytes(path), scene, path)


# --------------------------------------------------------------------------
# ClassifierWeights


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weight: np.ndarray  # in x out
    bias: np.ndarray
    activation: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "weight", _frozen(np.atleast_2d(self.weight), np.float32))
        object.__setattr__(self, "bias", _frozen(np.ravel(self.bias), np.float32))
        if self.activation not in ACTIVATIONS:
            raise FormatError(f"unknown activation {self.activation!r}")
        if self.bias.shape[0] != self.weight.shape[1]:
            raise DimensionMismatch("bias length must equal the layer output width")

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[0])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[1])


def activate(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(x, 0.0)
    if activation == "sigmoid":
        # split by sign to avoid overflow in exp
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    return x


@dataclass(frozen=True, eq=False)
class ClassifierWeights:
    layers: tuple[DenseLayer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise FormatError("a weight stack needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionMismatch(f"layer widths do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            h = activate(h @ layer.weight.astype(np.float64) + layer.bias.astype(np.float64), layer.activation)
        return h

    @classmethod
    def random(cls, dims: Sequence[int], rng: np.random.Generator, scale: float = 1.0,
               final: str = "sigmoid") -> "ClassifierWeights":
        layers = []
        for i, (a, b) in enumerate(zip(dims, dims[1:])):
            act = final if i == len(dims) - 2 else "relu"
            w = rng.normal(0.0, scale / np.sqrt(a), size=(a, b))
            layers.append(DenseLayer(w, rng.normal(0.0, 0.1, size=b), act))
        return cls(tuple(layers))


def weights_to_bytes(weights: ClassifierWeights) -> bytes:
    w = _Writer(b"SSTW")
    w.u32(len(weights.layers))
    for layer in weights.layers:
        w.u32(layer.in_dim, layer.out_dim, ACTIVATIONS.index(layer.activation))
        w.block(layer.weight, np.float32)
        w.block(layer.bias, np.float32)
    return w.getvalue()


def weights_from_bytes(data: bytes, path="<bytes>") -> ClassifierWeights:
    r = _Reader(data, b"SSTW", path)
    n_layers = r.u32()
    layers = []
    for i in range(n_layers):
        d_in, d_out, act = r.u32(), r.u32(), r.u32()
        if act >= len(ACTIVATIONS):
            raise FormatError(f"{path}: layer {i} has unknown activation code {act}")
        weight = r.block(f"layer{i}.weight", np.float32, d_in, d_out)
        bias = r.block(f"layer{i}.bias", np.float32, d_out, 1)[:, 0]
        layers.append(DenseLayer(weight, bias, ACTIVATIONS[act]))
    r.finish()
    return ClassifierWeights(tuple(layers))


def save_weights(path, weights: ClassifierWeights) -> None:
    _write_bytes(path, weights_to_bytes(weights))


def load_weights(path) -> ClassifierWeights:
    return weights_from_bytes(_read_bytes(path), path)


# --------------------------------------------------------------------------
# Proposals


@dataclass(eq=False)
class Proposal:
    node_id: int
    superpoint_ids: np.ndarray
    point_indices: np.ndarray
    category: int
    confidence: float = 0.0

    def __post_init__(self):
        self.superpoint_ids = np.asarray(self.superpoint_ids, dtype=np.int64)
        self.point_indices = np.sort(np.asarray(self.point_indices, dtype=np.int64))

    @property
    def n_points(self) -> int:
        return int(self.point_indices.shape[0])


def proposals_to_bytes(proposals: Sequence[Proposal], n_points: int) -> bytes:
    w = _Writer(b"SSTR")
    w.u32(n_points, len(proposals))
    for p in proposals:
        if p.point_indices.size and (p.point_indices.min() < 0 or p.point_indices.max() >= n_points):
            raise IndexOutOfRange(f"proposal at node {p.node_id} indexes outside 0..{n_points - 1}")
        w.i32(p.category)
        w.f32(p.confidence)
        w.i32(p.node_id)
        w.block(p.superpoint_ids, np.int32)
        w.block(p.point_indices, np.int32)
    return w.getvalue()


def proposals_from_bytes(data: bytes, scene: Scene | None = None, path="<bytes>") -> list[Proposal]:
    r = _Reader(data, b"SSTR", path)
    n, count = r.u32(), r.u32()
    if scene is not None and n != scene.n_points:
        raise DimensionMismatch(f"{path}: proposals index {n} points, scene has {scene.n_points}")
    out = []
    for i in range(count):
        cat, conf, node = r.i32(), r.f32(), r.i32()
        sps = r.block(f"record{i}.superpoints", np.int32, cols=1)[:, 0]
        pts = r.block(f"record{i}.points", np.int32, cols=1)[:, 0]
        if pts.size and (pts.min() < 0 or pts.max() >= n):
            raise IndexOutOfRange(f"{path}: record {i} indexes outside 0..{n - 1}")
        out.append(Proposal(node, sps, pts, cat, conf))
    r.finish()
    return out


def proposal_colors(count: int) -> np.ndarray:
    """Distinct uchar RGB colors, one per proposal (golden-ratio hue walk)."""
    hues = (np.arange(count) * 0.618033988749895) % 1.0
    rgb = [colorsys.hsv_to_rgb(h, 0.75, 0.95) for h in hues]
    return np.round(np.array(rgb, dtype=np.float64).reshape(-1, 3) * 255).astype(np.uint8)


UNASSIGNED_RGB = (128, 128, 128)


def ply_bytes(scene: Scene, proposals: Sequence[Proposal]) -> bytes:
    """ASCII PLY with every vertex colored by the proposal it belongs to."""
    n = scene.n_points
    rgb = np.tile(np.array(UNASSIGNED_RGB, dtype=np.uint8), (n, 1))
    palette = proposal_colors(len(proposals))
    for color, p in zip(palette, proposals):
        rgb[p.point_indices] = color
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    pos = scene.positions
    lines.extend(
        f"{x:.6g} {y:.6g} {z:.6g} {r} {g} {b}"
        for (x, y, z), (r, g, b) in zip(pos.tolist(), rgb.tolist())
    )
    return ("\n".join(lines) + "\n").encode("ascii")


def read_ply_colors(path) -> np.ndarray:
    """Read back the per-vertex RGB of an ASCII PLY written by :func:`ply_bytes`."""
    text = _read_bytes(path).decode("ascii").splitlines()
    end = text.index("end_header")
    body = [line.split() for line in text[end + 1:] if line.strip()]
    return np.array([[int(t) for t in row[3:6]] for row in body], dtype=np.uint8).reshape(-1, 3)


def save_proposals(path, proposals: Sequence[Proposal], scene: Scene, ply: bool = True) -> None:
    """Write proposals as an ``SSTR`` file plus a colored PLY sidecar."""
    _write_bytes(path, proposals_to_bytes(proposals, scene.n_points))
    if ply:
        _write_bytes(ply_sidecar_path(path), ply_bytes(scene, proposals))


def ply_sidecar_path(path) -> Path:
    return Path(path).with_suffix(".ply")


def load_proposals(path, scene: Scene | None = None) -> list[Proposal]:
    return proposals_from_bytes(_read_bytes(path), scene, path)


def export_ply(path, scene: Scene, proposals: Iterable[Proposal]) -> None:
    _write_bytes(path, ply_bytes(scene, list(proposals)))
