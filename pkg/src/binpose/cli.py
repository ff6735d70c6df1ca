"""Command-line workflows: generate, fit, refine, eval, loss.

Exit codes: 0 on success (failed fits are data, not errors), 1 for usage or
configuration problems, 2 for I/O problems.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import kvfile
from .analytic import AnalyticParams, estimate_pose_analytic
from .icp import IcpParams, NoCorrespondenceError, ScanIndex, refine_icp
from .metrics import (
    EvalRecord, RE_GRID, TE_GRID, build_curve, read_records, rotation_error, summarize,
    translation_error, write_curve, write_records,
)
from .rotation import (
    DegenerateRotationError, LossConfig, RotationVectors, joint_loss,
    joint_loss_gradient, rotation_from_vectors, vectors_from_rotation,
)
from .scan import BinPoseError, PoseValidationError, ScanFormatError, load_pose, load_scan, save_pose, save_scan
from .synth import SuiteConfig, generate_suite, load_scene, perturb_pose, render_scan, save_scene, suite_to_text

log = logging.getLogger("binpose")

DEFAULT_SEED = 7
MANIFEST_HEADER = ["scan_id", "scan_file", "pose_file", "scene_file", "tag"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _config_pairs(args) -> list[tuple[str, str]]:
    if not args.config:
        return []
    if not os.path.isfile(args.config):
        raise FileNotFoundError(args.config)
    return kvfile.read_kv(args.config)


def _seed(args, pairs) -> int:
    if args.seed is not None:
        return args.seed
    for k, v in pairs:
        if k == "seed":
            return int(v)
    return DEFAULT_SEED


def _override(obj, args, names: dict):
    changes = {field: getattr(args, flag) for flag, field in names.items() if getattr(args, flag, None) is not None}
    try:
        return replace(obj, **changes)
    except ValueError as exc:
        raise kvfile.ConfigError(str(exc)) from exc


def _analytic_params(args, pairs) -> AnalyticParams:
    try:
        p = kvfile.apply_overrides(AnalyticParams(), pairs, prefix="analytic")
    except ValueError as exc:
        raise kvfile.ConfigError(str(exc)) from exc
    return _override(p, args, {
        "stride": "scanline_stride", "jump": "depth_jump_threshold", "bin_width": "direction_bin_width",
        "inlier": "plane_inlier_threshold", "min_wall_cuts": "min_wall_cuts_per_wall",
    })


def _icp_params(args, pairs) -> IcpParams:
    try:
        p = kvfile.apply_overrides(IcpParams(), pairs, prefix="icp")
    except ValueError as exc:
        raise kvfile.ConfigError(str(exc)) from exc
    return _override(p, args, {
        "max_iterations": "max_iterations", "convergence_delta": "convergence_delta",
        "rejection_radius": "rejection_radius", "sample_spacing": "model_sample_spacing",
        "min_pairs": "min_paired_points",
    })


# --- generate ------------------------------------------------------------

def _render_one(job):
    scene, cfg, out, scan_id = job
    scan, gt = render_scan(scene, cfg.camera())
    save_scan(scan, out / "scans" / f"{scan_id}.binscan")
    save_pose(gt, out / "poses" / f"{scan_id}.pose")
    save_scene(scene, out / "scenes" / f"{scan_id}.scene")
    return [scan_id, f"scans/{scan_id}.binscan", f"poses/{scan_id}.pose", f"scenes/{scan_id}.scene", scene.tag]


def cmd_generate(args) -> int:
    pairs = _config_pairs(args)
    seed = _seed(args, pairs)
    cfg = kvfile.apply_overrides(SuiteConfig(), pairs, prefix="suite")
    cfg = _override(cfg, args, {
        "count": "count", "suite": "kind", "noise": "noise_sigma", "dropout": "dropout_rate",
        "max_tilt": "max_tilt_deg", "max_occluders": "max_occluders",
    })
    if args.full_resolution:
        cfg = cfg.full_resolution()
    cfg.validate()
    out = Path(args.out)
    for sub in ("scans", "poses", "scenes"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    scenes = generate_suite(cfg, seed)
    jobs = [(s, cfg, out, f"scene_{i:04d}") for i, s in enumerate(scenes)]
    rows = _map(_render_one, jobs, args.jobs)
    with open(out / "suite.cfg", "w") as fh:
        fh.write(f"seed={seed}\n" + suite_to_text(cfg))
    with open(out / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        w.writerows(sorted(rows))
    log.info("wrote %d scenes to %s", len(rows), out)
    return 0


def read_manifest(data_dir: Path) -> list[dict]:
    path = data_dir / "manifest.csv"
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise kvfile.ConfigError(f"{path}: unexpected manifest header")
        return list(reader)


# --- fit -----------------------------------------------------------------

def _fit_one(job):
    row, data_dir, out, params, timing = job
    scan = load_scan(data_dir / row["scan_file"])
    gt = load_pose(data_dir / row["pose_file"])
    scene = load_scene(data_dir / row["scene_file"])
    t0 = time.perf_counter()
    report = estimate_pose_analytic(scan, scene.bin, params)
    runtime = (time.perf_counter() - t0) * 1e3 if timing else None
    if report.failed:
        return EvalRecord.failure(row["scan_id"], "analytic", runtime_ms=runtime)
    save_pose(report.pose, out / "poses" / f"{row['scan_id']}.pose")
    return EvalRecord(row["scan_id"], "analytic", translation_error(report.pose.t, gt.t),
                      rotation_error(gt.R, report.pose.R), runtime_ms=runtime)


def cmd_fit(args) -> int:
    pairs = _config_pairs(args)
    params = _analytic_params(args, pairs)
    data_dir = Path(args.data)
    out = Path(args.out)
    rows = read_manifest(data_dir)
    (out / "poses").mkdir(parents=True, exist_ok=True)
    records = _map(_fit_one, [(r, data_dir, out, params, args.timing) for r in rows], args.jobs)
    write_records(records, out / "fit.csv")
    failed = sum(r.failed for r in records)
    print(f"fit: {len(records)} scans, {failed} failed")
    return 0


# --- refine --------------------------------------------------------------

def _refine_one(job):
    row, i, data_dir, init, label, seed, perturb, params, timing = job
    scan_id = row["scan_id"]
    scan = load_scan(data_dir / row["scan_file"])
    gt = load_pose(data_dir / row["pose_file"])
    scene = load_scene(data_dir / row["scene_file"])
    if init == "perturbed":
        initial = perturb_pose(gt, perturb[0], perturb[1], np.random.default_rng([seed, i]))
    else:
        path = Path(init) / f"{scan_id}.pose"
        initial = load_pose(path) if path.exists() else None
    methods = (label, f"{label}+icp", f"{label}+icp_gated")
    if initial is None:
        return [EvalRecord.failure(scan_id, m) for m in methods]

    def record(method, pose, confident=None, runtime=None):
        return EvalRecord(scan_id, method, translation_error(pose.t, gt.t), rotation_error(gt.R, pose.R),
                          icp_confident=confident, runtime_ms=runtime)

    t0 = time.perf_counter()
    try:
        res = refine_icp(scan, initial, scene.bin, params, ScanIndex(scan))
        refined, confident = res.pose, res.confident
    except NoCorrespondenceError:
        refined, confident = initial, False
    runtime = (time.perf_counter() - t0) * 1e3 if timing else None
    return [
        record(methods[0], initial),
        record(methods[1], refined, confident, runtime),
        record(methods[2], refined if confident else initial, confident),
    ]


def cmd_refine(args) -> int:
    pairs = _config_pairs(args)
    params = _icp_params(args, pairs)
    seed = _seed(args, pairs)
    data_dir = Path(args.data)
    if args.init != "perturbed" and not os.path.isdir(args.init):
        raise FileNotFoundError(f"initial pose directory {args.init} does not exist")
    rows = read_manifest(data_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    label = args.label or ("perturbed" if args.init == "perturbed" else "initial")
    jobs = [(r, i, data_dir, args.init, label, seed, (args.perturb_deg, args.perturb_mm), params, args.timing)
            for i, r in enumerate(rows)]
    records = [rec for group in _map(_refine_one, jobs, args.jobs) for rec in group]
    write_records(records, out / "refine.csv")
    print(f"refine: {len(rows)} scans")
    return 0


# --- eval ----------------------------------------------------------------

def _fmt_opt(x, digits=4):
    return "-" if x is None else f"{x:.{digits}f}"


def cmd_eval(args) -> int:
    records = []
    for path in args.records:
        records.extend(read_records(path))
    if not records:
        raise UsageError("no evaluation records in the input")
    out = Path(args.out)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    by_method: dict[str, list[EvalRecord]] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)

    lines = [f"{'method':<24} {'n':>5} {'fail':>7} {'mean_te':>9} {'mean_re':>9} {'std_te':>9} {'std_re':>9}"]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "count", "failure_rate", "mean_e_te_mm", "mean_e_re_rad", "std_e_te_mm", "std_e_re_rad"])
        for method in sorted(by_method):
            s = summarize(by_method[method])
            w.writerow([method, s.count, repr(s.failure_rate)] + ["" if v is None else repr(v)
                       for v in (s.mean_te, s.mean_re, s.std_te, s.std_re)])
            lines.append(f"{method:<24} {s.count:>5} {s.failure_rate:>7.3f} {_fmt_opt(s.mean_te):>9} "
                         f"{_fmt_opt(s.mean_re):>9} {_fmt_opt(s.std_te):>9} {_fmt_opt(s.std_re):>9}")
            for metric, grid in (("e_te", TE_GRID), ("e_re", RE_GRID)):
                write_curve(build_curve(by_method[method], metric, grid), out / "curves" / f"{method}_{metric}.csv")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return 0


# --- loss ----------------------------------------------------------------

def _read_vectors(path):
    """A pose file (16 numbers) or a raw ``v_z v_y t`` file (9 numbers)."""
    with open(path) as fh:
        values = [float(v) for v in fh.read().split()]
    if len(values) == 16:
        pose = load_pose(path)
        rv = vectors_from_rotation(pose.R)
        return rv.v_z, rv.v_y, pose.t
    if len(values) == 9:
        v = np.array(values)
        return v[0:3], v[3:6], v[6:9]
    raise PoseValidationError(f"{path}: expected 9 or 16 numbers, found {len(values)}")


def gradient_check(pred, gt, cfg: LossConfig, h: float = 1e-5) -> float:
    """Relative error between the analytic gradient and central differences."""
    x = np.concatenate(pred)

    def f(v):
        return joint_loss((v[0:3], v[3:6], v[6:9]), gt, cfg).total

    fd = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(9)])
    g = joint_loss_gradient(pred, gt, cfg).flat()
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12))


def cmd_loss(args) -> int:
    cfg = LossConfig(args.lam, args.epsilon)
    pred = _read_vectors(args.pred)
    gt = _read_vectors(args.gt)
    for v in (pred, gt):  # rejects zero or parallel vector pairs
        rotation_from_vectors(RotationVectors(v[0], v[1]))
    loss = joint_loss(pred, gt, cfg)
    grad = joint_loss_gradient(pred, gt, cfg)
    lines = [
        f"L      {loss.total:.9f}",
        f"L_r^z  {loss.rot_z:.9f}",
        f"L_r^y  {loss.rot_y:.9f}",
        f"L1     {loss.trans_l1:.9f}",
    ]
    if grad.differentiable:
        lines.append(f"gradient check max rel error {gradient_check(pred, gt, cfg):.3e}")
    else:
        lines.append("gradient check n/a (non-differentiable point)")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "loss.txt").write_text(text)
    return 0


# --- entry point ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key=value settings file")
    shared.add_argument("--seed", type=int, help=f"RNG seed (default {DEFAULT_SEED})")
    shared.add_argument("--jobs", type=int, default=1, help="worker processes")
    shared.add_argument("--timing", action="store_true", help="record wall-clock runtimes (breaks byte-stable output)")
    shared.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="binpose", description="Bin pose estimation on structured scans.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[shared], help="render a synthetic scene suite")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int)
    g.add_argument("--suite", choices=["visible-rim", "occluded"])
    g.add_argument("--noise", type=float, help="depth noise sigma in mm")
    g.add_argument("--dropout", type=float)
    g.add_argument("--max-tilt", type=float, help="max camera tilt in degrees")
    g.add_argument("--max-occluders", type=int)
    g.add_argument("--full-resolution", action="store_true", help="render at 2064x1544")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", parents=[shared], help="analytic fit of every scan in a suite")
    f.add_argument("--data", required=True, help="directory holding manifest.csv")
    f.add_argument("--out", required=True)
    f.add_argument("--stride", type=int)
    f.add_argument("--jump", type=float)
    f.add_argument("--bin-width", type=float)
    f.add_argument("--inlier", type=float)
    f.add_argument("--min-wall-cuts", type=int)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("refine", parents=[shared], help="ICP refinement from initial poses")
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--init", default="perturbed",
                   help="'perturbed' (ground truth plus noise) or a directory of <scan_id>.pose files")
    r.add_argument("--label", help="method name of the initial poses in the output CSV")
    r.add_argument("--perturb-deg", type=float, default=5.0)
    r.add_argument("--perturb-mm", type=float, default=20.0)
    r.add_argument("--max-iterations", type=int)
    r.add_argument("--convergence-delta", type=float)
    r.add_argument("--rejection-radius", type=float)
    r.add_argument("--sample-spacing", type=float)
    r.add_argument("--min-pairs", type=int)
    r.set_defaults(func=cmd_refine)

    e = sub.add_parser("eval", parents=[shared], help="summary tables and cumulative curves")
    e.add_argument("records", nargs="+", help="record CSV files")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    lo = sub.add_parser("loss", parents=[shared], help="joint loss report for a prediction")
    lo.add_argument("--pred", required=True, help="pose file or 9-number v_z v_y t file")
    lo.add_argument("--gt", required=True)
    lo.add_argument("--lambda", dest="lam", type=float, default=1.0)
    lo.add_argument("--epsilon", type=float, default=1e-8)
    lo.add_argument("--out")
    lo.set_defaults(func=cmd_loss)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ScanFormatError) as exc:
        print(f"binpose: I/O error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, kvfile.ConfigError, DegenerateRotationError, PoseValidationError, ValueError) as exc:
        print(f"binpose: error: {exc}", file=sys.stderr)
        return 1
    except BinPoseError as exc:
        print(f"binpose: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
