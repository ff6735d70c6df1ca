"""Two-vector rotations, the half-turn ambiguity of a rectangular bin, and
the training loss with its gradient.

Run with ``python3 demos/02_rotations_and_losses.py``.
"""

# %% Any two non-parallel vectors give a rotation; their lengths do not matter.
import numpy as np
from scipy.spatial.transform import Rotation

from binpose.metrics import rotation_error
from binpose.rotation import (
    LossConfig, RotationVectors, canonicalize_symmetry, joint_loss, joint_loss_gradient, rotation_from_vectors,
    symmetry_partner, vectors_from_rotation,
)

R = rotation_from_vectors(RotationVectors(v_z=(0, 0, 5), v_y=(1, 1, 0)))
print(np.round(R, 4))
print("same with rescaled inputs:", np.allclose(R, rotation_from_vectors(RotationVectors((0, 0, 1), (3, 3, 0)))))

# %% A rectangle turned half-way about its own axis looks identical. The two
# matrices differ in sign on their first two columns.
R = Rotation.from_euler("xyz", [170, 10, 35], degrees=True).as_matrix()
P = symmetry_partner(R)
print("partner columns flipped:", np.allclose(P[:, :2], -R[:, :2]), "z kept:", np.allclose(P[:, 2], R[:, 2]))
print("canonical form agrees:", np.array_equal(canonicalize_symmetry(R), canonicalize_symmetry(P)))
print("rotation error between them:", rotation_error(R, P))

# %% The loss compares predicted axis directions with the canonical ground truth.
gt = vectors_from_rotation(canonicalize_symmetry(R))
t_gt = np.array([12.0, -40.0, 950.0])
rng = np.random.default_rng(0)
pred = (gt.v_z * 3 + rng.normal(scale=0.3, size=3), gt.v_y + rng.normal(scale=0.3, size=3), t_gt + [2, -1, 4])
cfg = LossConfig(lam=0.1)
loss = joint_loss(pred, (gt.v_z, gt.v_y, t_gt), cfg)
print(f"L = {loss.total:.4f}  (z {loss.rot_z:.4f}, y {loss.rot_y:.4f}, L1 {loss.trans_l1:.1f})")

# %% The analytic gradient against central differences.
g = joint_loss_gradient(pred, (gt.v_z, gt.v_y, t_gt), cfg).flat()
x = np.concatenate(pred)
f = lambda v: joint_loss((v[:3], v[3:6], v[6:]), (gt.v_z, gt.v_y, t_gt), cfg).total
fd = np.array([(f(x + 1e-5 * e) - f(x - 1e-5 * e)) / 2e-5 for e in np.eye(9)])
print("relative gradient error:", np.linalg.norm(g - fd) / np.linalg.norm(fd))
