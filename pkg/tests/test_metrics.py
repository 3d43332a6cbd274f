import math

import numpy as np
import pytest

from conftest import random_superpoints
from sptree.errors import EmptyProposalSet, LengthMismatch, MissingGroundTruth, NoForegroundPoints
from sptree.metrics import (
    EvalConfig,
    GtInstance,
    average_precision,
    evaluate_map,
    evaluation_loss,
    heuristic_score,
    iou_matrix,
    offset_loss,
    proposal_label,
    semantic_loss,
    set_iou,
)
from sptree.proposer import ConstantClassifier, traverse_and_split
from sptree.scene_io import Proposal, Scene
from sptree.ssttree import build_nn_chain


def scene_with_instances(groups, categories, n):
    """Scene of ``n`` points; ``groups`` lists each instance's point ids."""
    sem = np.zeros(n, dtype=int)
    inst = np.full(n, -1)
    for j, (pts, c) in enumerate(zip(groups, categories)):
        inst[pts] = j
        sem[pts] = c
    return Scene(np.zeros((n, 3)), np.zeros((n, 3)), gt_semantic=sem, gt_instance=inst)


def prop(points, category=1, confidence=1.0, node_id=0):
    return Proposal(node_id, [node_id], np.asarray(points), category, confidence)


# ---------------------------------------------------------------- losses


def test_semantic_loss_closed_forms(rng):
    onehot = np.eye(3)[rng.integers(0, 3, 20)]
    assert semantic_loss(onehot, onehot) == pytest.approx(0.0, abs=1e-12)
    n = 17
    target = np.eye(2)[rng.integers(0, 2, n)]
    assert semantic_loss(np.full((n, 2), 0.5), target) == pytest.approx(math.log(2) + 1 / 3, abs=1e-6)
    with pytest.raises(LengthMismatch):
        semantic_loss(np.zeros((2, 2)), np.zeros((3, 2)))


def test_semantic_loss_scalar_oracle(rng):
    n, k = 12, 4
    pred = rng.dirichlet(np.ones(k), size=n)
    target = np.eye(k)[rng.integers(0, k, n)]
    ce = sum(-math.log(pred[i, j]) for i in range(n) for j in range(k) if target[i, j]) / n
    num = sum(pred[i, j] * target[i, j] for i in range(n) for j in range(k))
    den = sum(pred[i, j] ** 2 + target[i, j] ** 2 for i in range(n) for j in range(k))
    dice = 1 - 2 * num / den
    assert 0 <= dice <= 1
    assert semantic_loss(pred, target) == pytest.approx(ce + dice, abs=1e-6)


def test_offset_loss_closed_forms(rng):
    pos = rng.normal(size=(30, 3))
    centers = rng.normal(size=(30, 3))
    mask = np.ones(30, bool)
    assert offset_loss(centers - pos, pos, centers, mask) == pytest.approx(-1.0, abs=1e-6)
    expect = 2 * np.linalg.norm(centers - pos, axis=1).mean() + 1
    assert offset_loss(pos - centers, pos, centers, mask) == pytest.approx(expect, abs=1e-6)
    with pytest.raises(NoForegroundPoints):
        offset_loss(pos, pos, centers, np.zeros(30, bool))


def test_offset_loss_scalar_oracle(rng):
    n = 25
    o, p, c = rng.normal(size=(n, 3)), rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    mask = rng.uniform(size=n) < 0.6
    o[0] = 0.0
    mask[0] = True
    dist = cos = 0.0
    for i in np.flatnonzero(mask):
        t = c[i] - p[i]
        dist += math.dist(o[i], t)
        no, nt = math.hypot(*o[i]), math.hypot(*t)
        if no > 0 and nt > 0:
            cos += float(np.dot(o[i], t)) / (no * nt)
    m = mask.sum()
    value = offset_loss(o, p, c, mask)
    assert value == pytest.approx(dist / m - cos / m, abs=1e-6)
    assert value >= -1


def test_evaluation_loss():
    assert evaluation_loss([1.0, 0.0, 1.0], [1, 0, 1]) < 1e-6
    assert evaluation_loss([0.5], [1.0]) == pytest.approx(-math.log(0.5), abs=1e-6)
    assert evaluation_loss([0.2, 0.7], [0.3, 1.0]) == pytest.approx(
        -(0.3 * math.log(0.2) + 0.7 * math.log(0.8) + math.log(0.7)) / 2, abs=1e-6)
    with pytest.raises(EmptyProposalSet):
        evaluation_loss([], [])


# ---------------------------------------------------------------- iou, labels, scores


def test_iou_properties(rng):
    for _ in range(50):
        a = rng.choice(40, rng.integers(1, 30), replace=False)
        b = rng.choice(40, rng.integers(1, 30), replace=False)
        sa, sb = set(a.tolist()), set(b.tolist())
        u = set_iou(a, b)
        assert u == pytest.approx(len(sa & sb) / len(sa | sb))
        assert u == set_iou(b, a) and 0 <= u <= 1
    assert set_iou([1, 2], [2, 1]) == 1.0


def test_iou_matrix_matches_set_iou(rng):
    # ground-truth instances are disjoint in a scene
    owner = rng.permutation(60)
    gts = [GtInstance(j, 1, np.sort(owner[j * 15:(j + 1) * 15])) for j in range(3)]
    props = [prop(rng.choice(60, rng.integers(1, 40), replace=False)) for _ in range(8)]
    m = iou_matrix(props, gts, 60)
    for i, p in enumerate(props):
        for j, g in enumerate(gts):
            assert m[i, j] == pytest.approx(set_iou(p.point_indices, g.point_indices))


def test_proposal_label_map():
    gt = [GtInstance(0, 1, np.arange(100))]
    assert proposal_label(prop(np.arange(25)), gt) == pytest.approx(0.0)
    assert proposal_label(prop(np.arange(75)), gt) == pytest.approx(1.0)
    assert proposal_label(prop(np.arange(50)), gt) == pytest.approx(0.5)
    assert proposal_label(prop(np.arange(100)), gt) == 1.0
    assert proposal_label(prop([]), gt) == 0.0
    with pytest.raises(MissingGroundTruth):
        proposal_label(prop([0]), Scene(np.zeros((1, 3)), np.zeros((1, 3))))


def test_heuristic_score(rng):
    sps = random_superpoints(rng, 2, k=4)
    sps[0].a = np.eye(4)[2]
    sps[1].a = np.eye(4)[2]
    t = build_nn_chain(sps)
    (p,) = traverse_and_split(t, None, ConstantClassifier(1.0))
    assert heuristic_score(p, t) == 1.0
    sps[0].a = sps[1].a = np.full(4, 0.25)
    t = build_nn_chain(sps)
    (p,) = traverse_and_split(t, None, ConstantClassifier(1.0))
    assert heuristic_score(p, t) == pytest.approx(0.25)


def test_heuristic_monotone_under_sharpening(rng):
    sps = random_superpoints(rng, 1, k=5)
    base = rng.dirichlet(np.ones(5))
    prev = -1.0
    for temp in (1.0, 0.7, 0.5, 0.3, 0.1):
        sharp = base ** (1 / temp)
        sps[0].a = sharp / sharp.sum()
        t = build_nn_chain(sps)
        (p,) = traverse_and_split(t, None, ConstantClassifier(1.0))
        score = heuristic_score(p, t)
        assert score >= prev - 1e-12
        prev = score


# ---------------------------------------------------------------- AP


def test_average_precision_hand_cases():
    assert average_precision([True], 1) == 1.0
    assert average_precision([], 3) == 0.0
    assert math.isnan(average_precision([True], 0))
    assert average_precision([True, False], 2) == pytest.approx(0.5)
    # TP FP TP over 2 gt: P=(1, .5, .667), R=(.5, .5, 1) -> .5*1 + .5*(2/3)
    assert average_precision([True, False, True], 2) == pytest.approx(0.5 + 1 / 3)
    # FP TP: P=(0, .5), R=(0, 1) -> envelope 0.5 over the whole recall
    assert average_precision([False, True], 1) == pytest.approx(0.5)


def test_single_proposal_equal_to_gt():
    scene = scene_with_instances([np.arange(10)], [1], 20)
    rep = evaluate_map([prop(np.arange(10))], scene)
    assert rep["mAP"] == 1.0 and rep["AP@50"] == 1.0 and rep["AP@25"] == 1.0


def test_no_proposals():
    scene = scene_with_instances([np.arange(10)], [1], 20)
    assert evaluate_map([], scene)["mAP"] == 0.0


def test_two_props_two_gt_derived_case():
    scene = scene_with_instances([np.arange(0, 10), np.arange(10, 20)], [1, 1], 20)
    # second proposal covers 4 of gt 1's 10 points and nothing else: IoU 0.4
    props = [prop(np.arange(10), confidence=0.9, node_id=0), prop(np.arange(10, 14), confidence=0.8, node_id=1)]
    assert iou_matrix(props, [GtInstance(0, 1, np.arange(10)), GtInstance(1, 1, np.arange(10, 20))], 20)[1, 1] \
        == pytest.approx(0.4)
    rep = evaluate_map(props, scene, EvalConfig(iou_thresholds=(0.5,)))
    assert rep["mAP"] == pytest.approx(0.5)
    assert rep["AP@50"] == pytest.approx(0.5)
    assert rep["AP@25"] == pytest.approx(1.0)


def test_category_must_match():
    scene = scene_with_instances([np.arange(10)], [1], 20)
    rep = evaluate_map([prop(np.arange(10), category=2)], scene, EvalConfig(categories=(1, 2)))
    assert rep["per_category"][1]["AP"] == 0.0
    assert math.isnan(rep["per_category"][2]["AP"])
    assert rep["mAP"] == 0.0


def random_eval_case(rng):
    n = 200
    owner = rng.permutation(n)
    groups = [owner[i * 30:(i + 1) * 30] for i in range(5)]
    scene = scene_with_instances(groups, rng.integers(1, 3, 5).tolist(), n)
    props = []
    for i in range(12):
        base = groups[int(rng.integers(0, 5))]
        keep = base[rng.uniform(size=30) < rng.uniform(0.3, 1.0)]
        extra = rng.choice(n, int(rng.integers(0, 15)), replace=False)
        pts = np.unique(np.concatenate([keep, extra]))
        props.append(prop(pts, int(rng.integers(1, 3)), float(rng.uniform()), node_id=i))
    return scene, props


def test_ap_invariant_to_rescaling_and_shuffling(rng):
    for _ in range(20):
        scene, props = random_eval_case(rng)
        base = evaluate_map(props, scene)
        scaled = [Proposal(p.node_id, p.superpoint_ids, p.point_indices, p.category, p.confidence * 0.37)
                  for p in props]
        assert evaluate_map(scaled, scene) == base
        shuffled = [props[i] for i in rng.permutation(len(props))]
        assert evaluate_map(shuffled, scene) == base


def test_ties_resolved_by_node_id():
    scene = scene_with_instances([np.arange(10)], [1], 20)
    good, bad = prop(np.arange(10), confidence=0.5, node_id=7), prop(np.arange(10, 20), confidence=0.5, node_id=3)
    # node 3 (FP) ranks first on the tie: P=(0, .5), R=(0, 1)
    rep = evaluate_map([good, bad], scene, EvalConfig(iou_thresholds=(0.5,)))
    assert rep["mAP"] == pytest.approx(0.5)


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(iou_thresholds=(0.5, 0.5))
    with pytest.raises(ValueError):
        EvalConfig(iou_thresholds=(0.0, 0.5))


def test_missing_gt():
    with pytest.raises(MissingGroundTruth):
        evaluate_map([], Scene(np.zeros((1, 3)), np.zeros((1, 3))))
