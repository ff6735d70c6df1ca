"""Two-vector rotation parameterization, bin symmetry and training losses.

A rotation is described by two unnormalized vectors giving the bin's z and y
axes in camera coordinates. Gram-Schmidt turns them into an orthonormal frame
whose columns are ``(u_x, u_y, u_z)``.

A rectangular bin looks the same after a half turn about its own z-axis, so
``R`` and ``R @ SYMMETRY`` describe the same physical pose. The half turn
negates the first two columns of ``R``; :func:`canonicalize_symmetry` picks
one representative by the sign of column 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .scan import BinPoseError

SYMMETRY = np.diag([-1.0, -1.0, 1.0])
PARALLEL_ANGLE = 1e-6


class DegenerateRotationError(BinPoseError):
    """The two direction vectors do not span a plane."""


@dataclass(frozen=True)
class RotationVectors:
    v_z: np.ndarray
    v_y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_z", np.asarray(self.v_z, dtype=np.float64).reshape(3))
        object.__setattr__(self, "v_y", np.asarray(self.v_y, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0 < self.epsilon <= 1e-6:
            raise ValueError("epsilon must lie in (0, 1e-6]")


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross carries a lot of overhead for a single pair of 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def rotation_from_vectors(rv: RotationVectors) -> np.ndarray:
    v_z, v_y = rv.v_z, rv.v_y
    nz = math.sqrt(v_z @ v_z)
    ny = math.sqrt(v_y @ v_y)
    if not (math.isfinite(nz) and nz > 0):
        raise DegenerateRotationError("v_z must be a nonzero finite vector")
    if not (math.isfinite(ny) and ny > 0):
        raise DegenerateRotationError("v_y must be a nonzero finite vector")
    # angle via atan2 stays accurate for nearly parallel inputs
    c = _cross(v_z, v_y)
    angle = math.atan2(math.sqrt(c @ c), v_z @ v_y)
    if angle <= PARALLEL_ANGLE or angle >= np.pi - PARALLEL_ANGLE:
        raise DegenerateRotationError(f"v_z and v_y are parallel (angle {angle:.3g} rad)")
    u_z = v_z / nz
    w_y = v_y - (v_y @ u_z) * u_z
    u_y = w_y / math.sqrt(w_y @ w_y)
    u_x = _cross(u_y, u_z)
    R = np.empty((3, 3))
    R[:, 0], R[:, 1], R[:, 2] = u_x, u_y, u_z
    return R


def vectors_from_rotation(R: np.ndarray) -> RotationVectors:
    R = np.asarray(R, dtype=np.float64)
    return RotationVectors(R[:, 2].copy(), R[:, 1].copy())


def symmetry_partner(R: np.ndarray) -> np.ndarray:
    """The other rotation describing the same pose of a rectangular bin."""
    return np.asarray(R, dtype=np.float64) @ SYMMETRY


def _keeps_sign(column: np.ndarray) -> bool:
    for value in column:
        if value > 0:
            return True
        if value < 0:
            return False
    return False


def canonicalize_symmetry(R: np.ndarray) -> np.ndarray:
    """Return whichever of ``R`` and its symmetry partner has a positive
    entry at row 1, column 2 (falling back down the column on exact zeros)."""
    R = np.asarray(R, dtype=np.float64)
    if _keeps_sign(R[:, 1]):
        return R.copy()
    return symmetry_partner(R)


def _cosine(u: np.ndarray, v: np.ndarray, epsilon: float) -> float:
    return float(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v) + epsilon)


def angular_loss(u, v, epsilon: float = 1e-8) -> float:
    """Angle in radians between ``u`` and ``v`` with an ``epsilon`` norm guard."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(np.arccos(np.clip(_cosine(u, v, epsilon), -1.0, 1.0)))


class JointLoss(NamedTuple):
    total: float
    rot_z: float
    rot_y: float
    trans_l1: float


class LossGradient(NamedTuple):
    """Gradient of the joint loss w.r.t. the predicted ``v_z``, ``v_y`` and ``t``.

    ``differentiable`` is False when the input sits on a kink of the loss;
    the returned values are then a subgradient (zero on the kinked terms).
    """

    v_z: np.ndarray
    v_y: np.ndarray
    t: np.ndarray
    differentiable: bool

    def flat(self) -> np.ndarray:
        return np.concatenate([self.v_z, self.v_y, self.t])


def _as_triplet(x):
    a, b, c = x
    return (np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), np.asarray(c, dtype=np.float64))


def joint_loss(pred, gt, cfg: LossConfig = LossConfig()) -> JointLoss:
    """Rotation-direction plus weighted L1 translation loss.

    :param pred: ``(v_z, v_y, t)`` as predicted.
    :param gt: ``(u_z, u_y, t_hat)`` read from a canonicalized ground-truth pose.
    """
    v_z, v_y, t = _as_triplet(pred)
    u_z, u_y, t_hat = _as_triplet(gt)
    lz = angular_loss(u_z, v_z, cfg.epsilon)
    ly = angular_loss(u_y, v_y, cfg.epsilon)
    l1 = float(np.abs(t_hat - t).sum())
    return JointLoss(lz + ly + cfg.lam * l1, lz, ly, l1)


def joint_loss_from_poses(R_pred, t_pred, R_gt, t_gt, cfg: LossConfig = LossConfig()) -> JointLoss:
    gt = vectors_from_rotation(canonicalize_symmetry(R_gt))
    pred = vectors_from_rotation(R_pred)
    return joint_loss((pred.v_z, pred.v_y, t_pred), (gt.v_z, gt.v_y, t_gt), cfg)


# sine of the angle below which two directions count as (anti)parallel, the acos kink
KINK_TOLERANCE = 1e-9


def _angular_grad(u: np.ndarray, v: np.ndarray, epsilon: float) -> tuple[np.ndarray, bool]:
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    denom = nu * nv + epsilon
    dot = float(u @ v)
    c = dot / denom
    # checked on the sine: with epsilon in the denominator |c| never reaches 1
    if nv == 0 or nu == 0 or np.linalg.norm(np.cross(u, v)) <= KINK_TOLERANCE * nu * nv:
        return np.zeros(3), False
    dc_dv = u / denom - dot * nu * v / (nv * denom**2)
    return -dc_dv / np.sqrt(1.0 - c * c), True


def joint_loss_gradient(pred, gt, cfg: LossConfig = LossConfig()) -> LossGradient:
    v_z, v_y, t = _as_triplet(pred)
    u_z, u_y, t_hat = _as_triplet(gt)
    g_z, ok_z = _angular_grad(u_z, v_z, cfg.epsilon)
    g_y, ok_y = _angular_grad(u_y, v_y, cfg.epsilon)
    diff = t - t_hat
    g_t = cfg.lam * np.sign(diff)
    ok_t = bool(np.all(diff != 0))
    return LossGradient(g_z, g_y, g_t, ok_z and ok_y and ok_t)
