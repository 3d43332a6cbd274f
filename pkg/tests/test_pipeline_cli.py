import json

import numpy as np
import pytest

from sptree.cli import main
from sptree.errors import PipelineError
from sptree.metrics import instance_centers, offset_loss
from sptree.oversegment import SuperpointAssignment
from sptree.pipeline import PipelineConfig, run_pipeline, synth_scene
from sptree.scene_io import load_proposals, load_scene, save_predictions, save_scene, scene_to_bytes
from sptree.ssttree import build_nn_chain
from sptree.superpool import pool_scene


def write_synth(tmp_path, **kw):
    scene, pred = synth_scene(**kw)
    save_scene(tmp_path / "s.ssts", scene)
    save_predictions(tmp_path / "p.sstp", pred)
    return scene, pred


def config(tmp_path, **kw):
    return PipelineConfig(scene=str(tmp_path / "s.ssts"), predictions=str(tmp_path / "p.sstp"),
                          output_dir=str(tmp_path / "out"), **kw)


def test_synthetic_two_instances_full_map(tmp_path):
    write_synth(tmp_path, n_instances=2)
    report = run_pipeline(config(tmp_path))
    assert report["evaluation"]["mAP"] == 1.0
    assert report["n_proposals"] == 2
    on_disk = json.loads((tmp_path / "out" / "report.json").read_text())
    assert on_disk["evaluation"]["mAP"] == 1.0
    assert on_disk["config"]["k"] == 16


def test_empty_foreground(tmp_path):
    write_synth(tmp_path, n_instances=2)
    report = run_pipeline(config(tmp_path, background_ids=[0, 1, 2, 3, 4]))
    assert report["n_proposals"] == 0
    assert "no foreground" in report["notes"]
    assert load_proposals(tmp_path / "out" / "proposals.sstr") == []


def test_rerun_is_byte_identical(tmp_path):
    write_synth(tmp_path, n_instances=3, sigma=0.1, seed=4)
    run_pipeline(config(tmp_path))
    first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    run_pipeline(config(tmp_path))
    second = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    assert first == second
    assert {"proposals.sstr", "proposals.ply", "tree.bin", "superpoints.json", "report.json"} <= set(first)


def test_synth_determinism():
    a, pa = synth_scene(3, 50, 0.2, seed=9)
    b, pb = synth_scene(3, 50, 0.2, seed=9)
    assert scene_to_bytes(a) == scene_to_bytes(b)
    np.testing.assert_array_equal(pa.offsets, pb.offsets)
    c, _ = synth_scene(3, 50, 0.2, seed=10)
    assert scene_to_bytes(a) != scene_to_bytes(c)


def test_single_instance_exact_offsets():
    scene, pred = synth_scene(1, 100, 0.0)
    mask = scene.gt_instance >= 0
    centers = np.nan_to_num(instance_centers(scene))
    loss = offset_loss(pred.offsets, scene.positions, centers, mask)
    assert loss == pytest.approx(-1.0, abs=1e-6)


def test_two_instances_last_merge_joins_instances():
    scene, pred = synth_scene(2, 80, 0.0, spacing=10.0)
    # one superpoint per 20 instance points, floor points alone
    labels = np.empty(scene.n_points, dtype=np.int64)
    inst = scene.gt_instance
    nxt = 0
    for j in (0, 1):
        idx = np.flatnonzero(inst == j)
        for chunk in np.array_split(idx, 4):
            labels[chunk] = nxt
            nxt += 1
    labels[inst < 0] = nxt
    fg, _ = pool_scene(scene, SuperpointAssignment(labels, nxt + 1), pred, [0, 1])
    tree = build_nn_chain(fg)
    left, right = tree.children(tree.root)
    owner = {sp.id: int(np.bincount(inst[sp.point_indices]).argmax()) for sp in fg}
    assert {owner[s] for s in tree.branch_leaves(left)} != {owner[s] for s in tree.branch_leaves(right)}
    assert len({owner[s] for s in tree.branch_leaves(left)}) == 1
    assert len({owner[s] for s in tree.branch_leaves(right)}) == 1


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"scene": "a", "predictions": "b", "colour": 1})
    with pytest.raises(ValueError):
        PipelineConfig(scene="a", predictions="b", k=0)
    cfg = config(tmp_path, tau=0.05)
    assert PipelineConfig.from_dict(cfg.to_dict()) == cfg


def test_missing_input_is_stage_tagged(tmp_path):
    with pytest.raises(PipelineError, match=r"\[load\]"):
        run_pipeline(config(tmp_path))


def test_cli_end_to_end(tmp_path, capsys):
    s, p = str(tmp_path / "s.ssts"), str(tmp_path / "p.sstp")
    sp, tree = str(tmp_path / "sp.json"), str(tmp_path / "tree.bin")
    props, rep = str(tmp_path / "props.sstr"), str(tmp_path / "rep.json")
    assert main(["synth", "--instances", "3", "--points", "120", "--out-scene", s, "--out-pred", p]) == 0
    assert main(["oversegment", "--in", s, "--out", sp]) == 0
    assert main(["pool", "--scene", s, "--pred", p, "--sp", sp, "--out", str(tmp_path / "pool.json")]) == 0
    assert main(["build-tree", "--scene", s, "--pred", p, "--sp", sp, "--out", tree]) == 0
    assert main(["propose", "--tree", tree, "--scene", s, "--out", props]) == 0
    assert main(["evaluate", "--props", props, "--scene", s, "--report", rep]) == 0
    assert json.loads(open(rep).read())["mAP"] == 1.0
    assert main(["export-ply", "--props", props, "--scene", s, "--out", str(tmp_path / "c.ply")]) == 0
    assert len(load_proposals(props, load_scene(s))) == 3

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scene": s, "predictions": p}))
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "run")]) == 0
    assert "mAP 1.0000" in capsys.readouterr().out


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert main(["oversegment", "--in", str(tmp_path / "missing.ssts"), "--out", str(tmp_path / "x.json")]) == 1
    err = capsys.readouterr().err
    assert "[oversegment]" in err and "MissingFile" in err
