"""Command-line entry point: ``sptree <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import PipelineError
from .pipeline import PipelineConfig, propose, run_pipeline, stage, synth_scene, write_json

log = logging.getLogger("sptree")


def _cmd_synth(args) -> None:
    from .scene_io import save_predictions, save_scene

    with stage("synth"):
        scene, pred = synth_scene(args.instances, args.points, args.sigma, args.seed,
                                  n_categories=args.categories, feature_dim=args.feature_dim)
        save_scene(args.out_scene, scene)
        save_predictions(args.out_pred, pred)
    print(f"wrote {scene.n_points} points to {args.out_scene} and {args.out_pred}")


def _cmd_oversegment(args) -> None:
    from .oversegment import oversegment, save_assignment
    from .scene_io import load_scene

    with stage("oversegment"):
        scene = load_scene(args.input)
        assignment = oversegment(scene, args.k, args.tau, args.min_size, args.lambda_normal, args.lambda_color)
        save_assignment(args.out, assignment)
    print(f"{assignment.n_superpoints} superpoints -> {args.out}")


def _load_stage_inputs(args):
    from .oversegment import load_assignment
    from .scene_io import load_predictions, load_scene
    from .superpool import pool_scene

    with stage("load"):
        scene = load_scene(args.scene)
        pred = load_predictions(args.pred, scene)
        assignment = load_assignment(args.sp, scene.n_points)
    with stage("pool"):
        fg, bg = pool_scene(scene, assignment, pred, args.background)
    return scene, fg, bg


def _cmd_pool(args) -> None:
    scene, fg, bg = _load_stage_inputs(args)
    rows = []
    for sp, is_fg in [(s, True) for s in fg] + [(s, False) for s in bg]:
        rows.append({"id": sp.id, "size": sp.size, "foreground": is_fg, "a": sp.a.tolist(),
                     "o": sp.o.tolist(), "center": sp.center.tolist()})
    rows.sort(key=lambda r: r["id"])
    with stage("pool"):
        write_json(args.out, {"M": len(rows), "superpoints": rows})
    print(f"{len(fg)} foreground / {len(bg)} background superpoints -> {args.out}")


def _cmd_build_tree(args) -> None:
    from .ssttree import build_nn_chain, save_tree

    scene, fg, _ = _load_stage_inputs(args)
    with stage("build-tree"):
        tree = build_nn_chain(fg, args.linkage, scene.n_points)
        save_tree(args.out, tree)
    print(f"tree over {tree.n_leaves} superpoints, depth {tree.depth()} -> {args.out}")


def _cmd_propose(args) -> None:
    from .scene_io import load_predictions, load_scene, save_proposals
    from .ssttree import load_tree

    with stage("load"):
        tree = load_tree(args.tree)
        scene = load_scene(args.scene) if args.scene else None
        pred = load_predictions(args.pred, scene) if args.pred else None
    proposals = propose(tree, args.classifier, not args.asymmetric, args.refine, args.min_size,
                        args.scorer, pred) if tree.n_nodes else []
    with stage("save"):
        if scene is not None:
            save_proposals(args.out, proposals, scene)
        else:
            from .scene_io import _write_bytes, proposals_to_bytes
            _write_bytes(args.out, proposals_to_bytes(proposals, tree.n_points))
    print(f"{len(proposals)} proposals -> {args.out}")


def _cmd_evaluate(args) -> None:
    from .metrics import EvalConfig, evaluate_map
    from .scene_io import load_proposals, load_scene

    with stage("load"):
        scene = load_scene(args.scene)
        proposals = load_proposals(args.props, scene)
    with stage("evaluate"):
        report = evaluate_map(proposals, scene, EvalConfig())
        write_json(args.report, report)
    print(f"mAP {report['mAP']:.4f}  AP@50 {report['AP@50']:.4f}  AP@25 {report['AP@25']:.4f}")


def _cmd_run(args) -> None:
    with stage("config"):
        config = PipelineConfig.from_json(args.config)
        if args.out_dir:
            config.output_dir = args.out_dir
    report = run_pipeline(config)
    for name, secs in report["timings_s"].items():
        log.info("%s: %.3f s", name, secs)
    ev = report["evaluation"]
    summary = f"{report['n_proposals']} proposals"
    if ev:
        summary += f", mAP {ev['mAP']:.4f}"
    if report["notes"]:
        summary += f" ({'; '.join(report['notes'])})"
    print(summary)


def _cmd_export_ply(args) -> None:
    from .scene_io import export_ply, load_proposals, load_scene

    with stage("export-ply"):
        scene = load_scene(args.scene)
        export_ply(args.out, scene, load_proposals(args.props, scene))
    print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sptree", description="Superpoint-tree instance proposals")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene with oracle predictions")
    p.add_argument("--instances", type=int, default=5)
    p.add_argument("--points", type=int, default=200, help="points per instance")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--categories", type=int, default=5)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--out-scene", required=True)
    p.add_argument("--out-pred", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("oversegment", help="compute superpoints")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--min-size", type=int, default=30)
    p.add_argument("--lambda-normal", type=float, default=1.0)
    p.add_argument("--lambda-color", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_oversegment)

    for name, func, help_ in (("pool", _cmd_pool, "pool predictions into superpoints"),
                              ("build-tree", _cmd_build_tree, "build the superpoint tree")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--scene", required=True)
        p.add_argument("--pred", required=True)
        p.add_argument("--sp", required=True)
        p.add_argument("--background", type=int, nargs="*", default=[0, 1])
        if name == "build-tree":
            p.add_argument("--linkage", choices=("ward", "centroid"), default="ward")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("propose", help="split the tree into proposals")
    p.add_argument("--tree", required=True)
    p.add_argument("--classifier", default="threshold:0.5", help="threshold:<theta> | mlp:<weights.sstw>")
    p.add_argument("--asymmetric", action="store_true", help="evaluate the classifier in one order only")
    p.add_argument("--min-size", type=int, default=50, help="minimum points per proposal")
    p.add_argument("--refine", default=None, help="clique refinement weights (.sstw)")
    p.add_argument("--scorer", default="heuristic", help="heuristic | mlp:<weights.sstw>")
    p.add_argument("--scene", default=None, help="scene file; enables the PLY sidecar")
    p.add_argument("--pred", default=None, help="predictions file; needed by the MLP scorer")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_propose)

    p = sub.add_parser("evaluate", help="score proposals against ground truth")
    p.add_argument("--props", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("run", help="run the whole pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("export-ply", help="color a scene by its proposals")
    p.add_argument("--props", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_ply)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
