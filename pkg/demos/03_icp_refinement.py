"""Refining a rough pose with ICP, and the case where it should not be trusted.

Run with ``python3 demos/03_icp_refinement.py``.
"""

# %% Start 5 degrees and 20 mm away from the truth, as a stand-in for a
# learned predictor's output.
from dataclasses import replace

import numpy as np

from binpose.icp import IcpParams, refine_icp
from binpose.metrics import rotation_error, translation_error
from binpose.scan import BinSpec, Pose, StructuredScan
from binpose.synth import FLOOR_TOP_LABEL, CameraModel, SceneSpec, SuiteConfig, generate_suite, perturb_pose, render_scan

cfg = replace(SuiteConfig(), count=1)
scene = generate_suite(cfg, seed=4)[0]
scan, gt = render_scan(scene, cfg.camera())
start = perturb_pose(gt, 5.0, 20.0, np.random.default_rng(0))

result = refine_icp(scan, start, scene.bin)
for k, steps in enumerate(result.history):
    print(f"round {k}: mean pair distance", " -> ".join(f"{d:.2f}" for d in steps))
print(f"{result.iterations_used} iterations, {result.paired_points} pairs, confident={result.confident}")
print(f"e_TE {translation_error(start.t, gt.t):.2f} -> {translation_error(result.pose.t, gt.t):.3f} mm")
print(f"e_RE {rotation_error(gt.R, start.R):.4f} -> {rotation_error(gt.R, result.pose.R):.4f} rad")

# %% Only a patch of floor left in the scan: ICP happily snaps the model onto
# it, but a floor cannot fix where the walls are. The pair count gives it away.
spec = BinSpec(300, 200, 150, 6)
R = np.diag([1.0, -1.0, -1.0])  # bin opening faces the scanner
top_down = SceneSpec(spec, Pose(R, np.array([0, 0, 975.0])), background_plane=(0, 0, -1.0, -1056.0))
full, gt, labels = render_scan(top_down, CameraModel(), return_labels=True)
rows, cols = np.nonzero(labels == FLOOR_TOP_LABEL)
window = np.zeros_like(full.valid)
r0, c0 = int(rows.mean()), int(cols.mean())
window[r0 - 18:r0 + 18, c0 - 18:c0 + 18] = True
patch = StructuredScan(full.width, full.height, full.points, window & (labels == FLOOR_TOP_LABEL))

start = perturb_pose(gt, 3.0, 15.0, np.random.default_rng(4))
snap = refine_icp(patch, start, spec, IcpParams(rejection_radius=10.0))
rim = spec.rim_corners()
print(f"floor patch: {patch.n_valid} points, {snap.paired_points} pairs, confident={snap.confident}")
print(f"rim corner error after ICP: {np.linalg.norm(snap.pose.apply(rim) - gt.apply(rim), axis=1).mean():.1f} mm")
