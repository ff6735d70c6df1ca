"""Acceptance criteria, each run at its stated size and tolerance.

Every test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary under "acceptance criteria".
"""

import math
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
from scipy.spatial.transform import Rotation

from binpose.analytic import estimate_pose_analytic
from binpose.icp import IcpParams, ScanIndex, refine_icp
from binpose.metrics import rotation_error, translation_error
from binpose.rotation import (
    SYMMETRY, LossConfig, RotationVectors, canonicalize_symmetry, joint_loss, joint_loss_gradient,
    rotation_from_vectors, vectors_from_rotation,
)
from binpose.scan import BinSpec
from binpose.synth import (
    CameraModel, SuiteConfig, bin_boxes, cast_bin, generate_suite, perturb_pose, render_scan,
)
from conftest import record_criterion, top_down_scene
from oracles import box_triangles, brute_nearest, random_rotations, ray_mesh, symmetric_quaternion_error
from test_icp import floor_patch_scan
from test_synth import mesh_rays

N = 10_000


def test_criterion_1_rotation_parameterization():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    vz = rng.normal(size=(N, 3))
    vy = rng.normal(size=(N, 3))
    scale = rng.uniform(1e-3, 1e3, size=(N, 2))
    worst_orth = worst_det = worst_rt = worst_scale = 0.0
    for i in range(N):
        R = rotation_from_vectors(RotationVectors(vz[i], vy[i]))
        worst_orth = max(worst_orth, np.abs(R.T @ R - np.eye(3)).max())
        worst_det = max(worst_det, abs(np.linalg.det(R) - 1))
        worst_rt = max(worst_rt, np.abs(rotation_from_vectors(vectors_from_rotation(R)) - R).max())
        S = rotation_from_vectors(RotationVectors(scale[i, 0] * vz[i], scale[i, 1] * vy[i]))
        worst_scale = max(worst_scale, np.abs(S - R).max())
    for R in random_rotations(N, 102):
        worst_rt = max(worst_rt, np.abs(rotation_from_vectors(vectors_from_rotation(R)) - R).max())
    elapsed = time.perf_counter() - t0
    ok = max(worst_orth, worst_det, worst_rt, worst_scale) <= 1e-9 and elapsed < 5
    record_criterion(1, "rotation parameterization", ok,
                     f"orth {worst_orth:.1e}, det {worst_det:.1e}, round-trip {worst_rt:.1e}, "
                     f"scale {worst_scale:.1e} (tol 1e-9); {elapsed:.2f} s (limit 5 s)")
    assert ok


def test_criterion_2_symmetry():
    t0 = time.perf_counter()
    Rs = random_rotations(N, 201)
    Qs = random_rotations(N, 202)
    equal = idem = invariant = 0
    for R, Q in zip(Rs, Qs):
        c = canonicalize_symmetry(R)
        # the partner of R is R @ SYMMETRY: a half turn about the bin's own z axis
        equal += np.array_equal(c, canonicalize_symmetry(R @ SYMMETRY))
        idem += np.array_equal(canonicalize_symmetry(c), c)
        invariant += rotation_error(Q @ SYMMETRY, R) == rotation_error(Q, R)
    elapsed = time.perf_counter() - t0
    ok = equal == idem == invariant == N and elapsed < 5
    record_criterion(2, "symmetry canonicalization", ok,
                     f"partner-equal {equal}/{N}, idempotent {idem}/{N}, e_RE invariant {invariant}/{N} "
                     f"(exact); {elapsed:.2f} s (limit 5 s)")
    assert ok


def test_criterion_3_loss_gradient():
    t0 = time.perf_counter()
    rng = np.random.default_rng(301)
    h = 1e-5
    worst = 0.0
    checked = 0
    while checked < 1000:
        pred = tuple(rng.normal(size=(3, 3)))
        gt = tuple(rng.normal(size=(3, 3)))
        cfg = LossConfig(lam=float(rng.uniform(0.1, 5)))
        g = joint_loss_gradient(pred, gt, cfg)
        # non-degenerate: away from the acos kinks and from |t - t_hat| = 0
        angles = [joint_loss(pred, gt, cfg).rot_z, joint_loss(pred, gt, cfg).rot_y]
        if not g.differentiable or min(angles) < 0.05 or max(angles) > math.pi - 0.05 \
                or np.min(np.abs(pred[2] - gt[2])) < 1e-3:
            continue
        x = np.concatenate(pred)
        f = lambda v: joint_loss((v[:3], v[3:6], v[6:]), gt, cfg).total
        fd = np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(9)])
        a = g.flat()
        worst = max(worst, np.linalg.norm(a - fd) / max(np.linalg.norm(a), np.linalg.norm(fd)))
        checked += 1
    z, y, t = np.array([0, 0, 1.0]), np.array([0, 1.0, 0]), np.array([10.0, -20, 800])
    self_loss = joint_loss((z, y, t), (z, y, t), LossConfig(epsilon=1e-8)).total
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and self_loss < 1e-3 and elapsed < 10
    record_criterion(3, "loss gradient", ok,
                     f"max FD relative error {worst:.1e} over {checked} inputs (tol 1e-5); "
                     f"L(gt, gt) {self_loss:.1e} (tol 1e-3); {elapsed:.2f} s (limit 10 s)")
    assert ok


def test_criterion_4_metric_oracle():
    A = random_rotations(N, 401)
    B = random_rotations(N, 402)
    worst = max(abs(rotation_error(a, b) - symmetric_quaternion_error(a, b)) for a, b in zip(A, B))
    rz = Rotation.from_euler("z", np.pi).as_matrix()
    rx = Rotation.from_euler("x", np.pi).as_matrix()
    R = Rotation.random(random_state=403).as_matrix()
    examples = [rotation_error(np.eye(3), rz), rotation_error(R, R), rotation_error(np.eye(3), rx) - np.pi]
    ok = worst <= 1e-9 and max(abs(e) for e in examples) <= 1e-9
    record_criterion(4, "rotation metric oracle", ok,
                     f"max |e_RE - quaternion| {worst:.1e} on {N} pairs (tol 1e-9); "
                     f"worked examples off by {max(abs(e) for e in examples):.1e}")
    assert ok


def run_analytic(kind: str):
    cfg = replace(SuiteConfig(), count=50, kind=kind, noise_sigma=0.0)
    cam = cfg.camera()
    out = []
    for scene in generate_suite(cfg, 7):
        scan, gt = render_scan(scene, cam)
        report = estimate_pose_analytic(scan, scene.bin)
        if report.failed:
            out.append((math.inf, math.inf))
        else:
            out.append((rotation_error(gt.R, report.pose.R), translation_error(report.pose.t, gt.t)))
    return np.array(out)


def test_criterion_5_analytic_suites():
    t0 = time.perf_counter()
    vis = run_analytic("visible-rim")
    occ = run_analytic("occluded")
    elapsed = time.perf_counter() - t0
    vis_fail = np.isinf(vis[:, 0]).mean()
    occ_fail = np.isinf(occ[:, 0]).mean()
    max_re, max_te = vis[:, 0].max(), vis[:, 1].max()
    ok = vis_fail == 0 and max_re < 0.05 and max_te < 10 and occ_fail == 1 and elapsed < 120
    record_criterion(5, "analytic fitter suites", ok,
                     f"visible-rim failure {vis_fail:.2f}, max e_RE {max_re:.4f} rad (<0.05), "
                     f"max e_TE {max_te:.2f} mm (<10); occluded failure {occ_fail:.2f} (=1); "
                     f"{elapsed:.1f} s (limit 120 s)")
    assert ok


def test_criterion_6_icp_suite():
    t0 = time.perf_counter()
    cfg = replace(SuiteConfig(), count=50, noise_sigma=0.0)
    cam = cfg.camera()
    te, re = [], []
    monotone = True
    remeasured_up = 0
    nn_ok = None
    for i, scene in enumerate(generate_suite(cfg, 7)):
        scan, gt = render_scan(scene, cam)
        index = ScanIndex(scan)
        if nn_ok is None:
            rng = np.random.default_rng(601)
            q = index.points[rng.integers(0, len(index), 1000)] + rng.normal(scale=15, size=(1000, 3))
            d, _ = index.query(q)
            d_ref, _ = brute_nearest(index.points, q)
            nn_ok = bool(np.allclose(d, d_ref, atol=1e-9))
        init = perturb_pose(gt, 5.0, 20.0, np.random.default_rng([7, i]))
        r = refine_icp(scan, init, scene.bin, IcpParams(), index)
        te.append(translation_error(r.pose.t, gt.t))
        re.append(rotation_error(gt.R, r.pose.R))
        # every ICP iteration (pair, align, re-pair on a fixed model set) must not raise the mean
        for steps in r.history:
            monotone &= all(b <= a + 1e-9 for a, b in zip(steps, steps[1:]))
        remeasured_up += any(nxt[0] > prev[-1] + 1e-9 for prev, nxt in zip(r.history, r.history[1:]))
    # floor-snap case: only a floor patch is visible
    scene = top_down_scene()
    scan, gt = floor_patch_scan(scene, CameraModel())
    snap = refine_icp(scan, perturb_pose(gt, 3.0, 15.0, np.random.default_rng(4)), scene.bin,
                      IcpParams(rejection_radius=10.0))
    elapsed = time.perf_counter() - t0
    med_re, med_te = float(np.median(re)), float(np.median(te))
    ok = med_re < 0.01 and med_te < 2 and monotone and nn_ok and not snap.confident and elapsed < 120
    record_criterion(6, "ICP refinement suite", ok,
                     f"median e_RE {med_re:.4f} rad (<0.01), median e_TE {med_te:.3f} mm (<2), "
                     f"max e_TE {max(te):.3f} mm; per-iteration monotone {monotone} "
                     f"({remeasured_up} runs re-measured higher after a visibility re-cull); "
                     f"NN = brute force {nn_ok}; floor-snap confident={snap.confident} "
                     f"({snap.paired_points} pairs); {elapsed:.1f} s (limit 120 s)")
    assert ok


def test_criterion_7_renderer_oracle():
    spec = BinSpec(320, 210, 160, 6)
    soup = np.concatenate([box_triangles(lo, hi) for lo, hi in bin_boxes(spec)])
    origins, dirs = mesh_rays(1000, 701, spec)
    worst, label_ok, hit_agree = 0.0, True, True
    for o, d in zip(origins, dirs):
        t, label = cast_bin(spec, o, d[None])
        t_ref, k = ray_mesh(o, d, soup)
        if np.isinf(t_ref) or np.isinf(t[0]):
            hit_agree &= bool(np.isinf(t_ref) and np.isinf(t[0]))
            continue
        worst = max(worst, abs(t[0] - t_ref))
        part, face = divmod(k, 12)
        label_ok &= bool(label[0] == 1 + 6 * part + face // 2)

    cam = CameraModel()
    scene = replace(generate_suite(replace(SuiteConfig(), count=1), 7)[0], noise_sigma=1.0, dropout_rate=0.05)
    a, _ = render_scan(scene, cam)
    b, _ = render_scan(scene, cam)
    identical = a.points.tobytes() == b.points.tobytes() and np.array_equal(a.valid, b.valid)

    p, n = 0.2, 10**6
    big = CameraModel(1000, 1000, 600.0)
    scan, _ = render_scan(top_down_scene(dropout_rate=p, seed=702), big)
    frac = 1 - scan.n_valid / n
    bound = 5 * math.sqrt(p * (1 - p) / n)
    ok = worst <= 1e-6 and label_ok and hit_agree and identical and abs(frac - p) <= bound
    record_criterion(7, "renderer oracle", ok,
                     f"max |t - mesh| {worst:.1e} mm on 1000 rays (tol 1e-6), same surface {label_ok}, "
                     f"hit/miss agree {hit_agree}; same-seed renders identical {identical}; "
                     f"dropout {frac:.5f} within 0.2 +/- {bound:.4f}")
    assert ok


def cli(*args):
    return subprocess.run([sys.executable, "-m", "binpose", *map(str, args)], capture_output=True, text=True)


def pipeline(root):
    steps = [
        ("generate", "--out", root / "data", "--count", 8, "--seed", 2024),
        ("fit", "--data", root / "data", "--out", root / "fit", "--jobs", 2),
        ("refine", "--data", root / "data", "--out", root / "perturbed", "--seed", 2024, "--jobs", 2),
        ("refine", "--data", root / "data", "--out", root / "hybrid", "--init", root / "fit" / "poses",
         "--label", "analytic"),
        ("eval", root / "fit" / "fit.csv", root / "perturbed" / "refine.csv", root / "hybrid" / "refine.csv",
         "--out", root / "eval"),
    ]
    for args in steps:
        res = cli(*args)
        assert res.returncode == 0, res.stderr
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def test_criterion_8_end_to_end_determinism(tmp_path):
    first = pipeline(tmp_path / "run1")
    second = pipeline(tmp_path / "run2")
    same = first.keys() == second.keys() and all(first[k] == second[k] for k in first)
    ok = same and len(first) > 10
    record_criterion(8, "end-to-end determinism", ok,
                     f"{len(first)} CSV files from generate -> fit -> refine -> eval, byte-identical across runs: {same}")
    assert ok
