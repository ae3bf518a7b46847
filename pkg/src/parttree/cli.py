"""Command-line operator surface: data generation, training, inference,
export, evaluation and the verification suites."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np


class UsageError(Exception):
    """Bad flags or arguments; exits with code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="parttree", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data",
                       help="generate labeled synthetic shape point clouds")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n", type=int, default=100, help="number of shapes")
    p.add_argument("--families", default="table,dumbbell",
                   help="comma-separated shape families")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--points", type=int, default=2048, help="surface points per shape")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="flat key=value config file")
    p.add_argument("--out", required=True, help="checkpoint/log directory")
    p.add_argument("--data", default=None,
                   help="dataset directory from gen-data (default: generate from config)")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("infer",
                       help="decode one point cloud and export its hierarchy")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--points", required=True, help="input .xyz point cloud")
    p.add_argument("--out", required=True)
    p.add_argument("--res", type=int, default=64, help="marching cubes resolution")

    p = sub.add_parser("export",
                       help="export meshes/tree with custom extraction settings")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("eval",
                       help="evaluate reconstruction and segmentation metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", required=True, help="dataset directory from gen-data")
    p.add_argument("--metrics", default="iou,chamfer,seg",
                   help="comma-separated subset of iou,chamfer,seg")
    p.add_argument("--res", type=int, default=32, help="volumetric IoU grid resolution")
    p.add_argument("--limit", type=int, default=0, help="evaluate at most N shapes (0 = all)")

    p = sub.add_parser("verify",
                       help="run a property suite and print pass/fail per check")
    p.add_argument("suite", choices=["gradcheck", "invariants", "oracle", "all"])
    return parser


# ------------------------------------------------------------- dataset dir


def _write_dataset(out_dir, n, families, seed, points):
    from .encoder import write_xyz
    from .shapes import generate_dataset
    from .trainer import shape_point_cloud

    os.makedirs(out_dir, exist_ok=True)
    shapes = generate_dataset(n, families, seed)
    for i, shape in enumerate(shapes):
        pts, labels = shape_point_cloud(shape, points, seed, i)
        write_xyz(os.path.join(out_dir, f"{i:04d}.xyz"), pts, labels)
        with open(os.path.join(out_dir, f"{i:04d}.meta"), "w", encoding="utf-8") as fh:
            fh.write(f"family = {shape.family}\n")
            fh.write(f"seed = {shape.seed}\n")
            fh.write(f"parts = {shape.num_parts}\n")
    with open(os.path.join(out_dir, "dataset.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"n = {n}\nfamilies = {','.join(families)}\nseed = {seed}\npoints = {points}\n")
    return shapes


def _load_dataset(data_dir):
    from .encoder import read_xyz
    from .shapes import base_family, make_shape

    entries = []
    for name in sorted(os.listdir(data_dir)):
        if not name.endswith(".meta"):
            continue
        meta = {}
        with open(os.path.join(data_dir, name), "r", encoding="utf-8") as fh:
            for line in fh:
                if "=" in line:
                    k, v = (s.strip() for s in line.split("=", 1))
                    meta[k] = v
        shape = make_shape(base_family(meta["family"]), int(meta["seed"]))
        cloud = read_xyz(os.path.join(data_dir, name.replace(".meta", ".xyz")))
        entries.append((shape, cloud))
    if not entries:
        raise FileNotFoundError(f"no .meta entries found in {data_dir!r}")
    return entries


# ------------------------------------------------------------- commands


def _cmd_gen_data(args) -> int:
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    shapes = _write_dataset(args.out, args.n, families, args.seed, args.points)
    print(f"wrote {len(shapes)} shapes to {args.out} (seed={args.seed})")
    return 0


def _cmd_train(args) -> int:
    from .shapes import generate_dataset
    from .trainer import load_checkpoint, load_config, train

    cfg = load_config(args.config)
    if args.data is not None:
        shapes = [shape for shape, _ in _load_dataset(args.data)]
    else:
        shapes = generate_dataset(cfg.n_shapes, list(cfg.families), cfg.data_seed)
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train(cfg, shapes, out_dir=args.out, resume=resume,
                   log_callback=lambda line: print(line, file=sys.stderr))
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics log: {os.path.join(args.out, 'metrics.log')}")
    return 0


def _restore(ckpt_path):
    from .trainer import load_checkpoint, restore_model

    ckpt = load_checkpoint(ckpt_path)
    model, _ = restore_model(ckpt)
    return model, ckpt


def _cmd_infer(args) -> int:
    from .encoder import normalize_points, read_xyz, write_xyz
    from .geometry import export_hierarchy, segment_points

    model, _ = _restore(args.ckpt)
    cloud = read_xyz(args.points)
    pts = normalize_points(cloud.points)
    snap = model.snapshot(pts)
    files = export_hierarchy(snap, args.out, res=args.res)
    seg = segment_points(pts, snap.leaf_contained(pts))
    seg_path = os.path.join(args.out, "segmentation.xyz")
    write_xyz(seg_path, pts, seg)
    print(f"exported {len(files)} files to {args.out}")
    print(f"segmentation: {seg_path}")
    return 0


def _cmd_export(args) -> int:
    from .encoder import normalize_points, read_xyz
    from .geometry import export_hierarchy

    model, _ = _restore(args.ckpt)
    cloud = read_xyz(args.points)
    snap = model.snapshot(normalize_points(cloud.points))
    files = export_hierarchy(snap, args.out, res=args.res, threshold=args.threshold)
    print(f"exported {len(files)} files to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .geometry import (
        associate_labels,
        chamfer,
        marching_cubes,
        segment_points,
        segmentation_iou,
        volumetric_iou,
    )
    from .shapes import base_family

    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(metrics) - {"iou", "chamfer", "seg"}
    if unknown:
        raise UsageError(f"unknown metrics: {sorted(unknown)}")

    model, _ = _restore(args.ckpt)
    entries = _load_dataset(args.dataset)
    if args.limit:
        entries = entries[: args.limit]

    levels = model.cfg.levels
    iou_sums = np.zeros(levels)
    cd_sums = np.zeros(levels)
    count = 0
    label_maps: dict[str, object] = {}
    seg_scores: list[float] = []

    for shape, cloud in entries:
        snap = model.snapshot(cloud.points)
        count += 1
        for lvl in range(1, levels + 1):
            field = snap.union_field(lvl)
            if "iou" in metrics:
                iou_sums[lvl - 1] += volumetric_iou(field, shape.occupancy, res=args.res)
            if "chamfer" in metrics:
                verts, _ = marching_cubes(field, res=args.res)
                gt_pts, _, _ = shape.sample_surface(2048, np.random.default_rng(0))
                if len(verts) == 0:
                    cd_sums[lvl - 1] += chamfer(gt_pts * 0.0, gt_pts)  # collapsed field
                else:
                    if len(verts) > 2048:
                        sel = np.random.default_rng(1).choice(len(verts), 2048, replace=False)
                        verts = verts[sel]
                    cd_sums[lvl - 1] += chamfer(verts, gt_pts)
        if "seg" in metrics and cloud.labels is not None:
            leaf = snap.leaf_contained(cloud.points)
            seg = segment_points(cloud.points, leaf)
            fam = base_family(shape.family)
            if fam not in label_maps:
                # label-code association: once per category, on this instance
                label_maps[fam] = associate_labels(cloud.labels, seg, leaf.shape[0])
            pred = label_maps[fam].apply(seg)
            _, mean_iou = segmentation_iou(pred, cloud.labels)
            seg_scores.append(mean_iou)

    header = ["level"]
    if "chamfer" in metrics:
        header.append("CD")
    if "iou" in metrics:
        header.append("IoU")
    print("\t".join(header))
    for lvl in range(levels):
        row = [str(lvl + 1)]
        if "chamfer" in metrics:
            row.append(f"{cd_sums[lvl] / count:.4f}")
        if "iou" in metrics:
            row.append(f"{iou_sums[lvl] / count:.4f}")
        print("\t".join(row))
    if "seg" in metrics and seg_scores:
        print(f"segmentation mean IoU\t{np.mean(seg_scores):.4f}")
    return 0


def _cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite(args.suite)
    failed = 0
    for r in results:
        print(r.line())
        failed += 0 if r.passed else 1
    if failed:
        print(f"{failed}/{len(results)} checks failed", file=sys.stderr)
        return 2
    print(f"all {len(results)} checks passed")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "export": _cmd_export,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        code = exc.code or 0
        return int(code) if isinstance(code, int) else 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
