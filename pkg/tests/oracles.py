"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from binpose.rotation import SYMMETRY


def quaternion_angle(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Geodesic angle between two rotations through unit quaternions."""
    qa = Rotation.from_matrix(R_a).as_quat()
    qb = Rotation.from_matrix(R_b).as_quat()
    q = _quat_mul_conj(qa, qb)
    # q and -q are the same rotation, hence abs on the scalar part
    return 2.0 * np.arctan2(np.linalg.norm(q[:3]), abs(q[3]))


def _quat_mul_conj(qa, qb):
    """``qa * conj(qb)`` in (x, y, z, w) order."""
    x1, y1, z1, w1 = qa
    x2, y2, z2, w2 = -qb[0], -qb[1], -qb[2], qb[3]
    return np.array([
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
    ])


def symmetric_quaternion_error(R_gt: np.ndarray, R_est: np.ndarray) -> float:
    return min(quaternion_angle(R_gt, R_est), quaternion_angle(R_gt @ SYMMETRY, R_est))


def box_triangles(lo, hi) -> np.ndarray:
    """Twelve triangles ``(12, 3, 3)`` covering an axis-aligned box."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    c = np.array([[hi[i] if (k >> i) & 1 else lo[i] for i in range(3)] for k in range(8)])
    quads = [(0, 2, 6, 4), (1, 3, 7, 5), (0, 1, 5, 4), (2, 3, 7, 6), (0, 1, 3, 2), (4, 5, 7, 6)]
    tris = []
    for a, b, cc, d in quads:
        tris.append(c[[a, b, cc]])
        tris.append(c[[a, cc, d]])
    return np.array(tris)


def ray_mesh(origin: np.ndarray, direction: np.ndarray, tris: np.ndarray) -> tuple[float, int]:
    """Nearest Moller-Trumbore hit over a triangle soup: ``(distance, triangle)``.

    Misses give ``(inf, -1)``.
    """
    best, which = np.inf, -1
    for k, (v0, v1, v2) in enumerate(tris):
        e1, e2 = v1 - v0, v2 - v0
        p = np.cross(direction, e2)
        det = e1 @ p
        if abs(det) < 1e-14:
            continue
        s = origin - v0
        u = (s @ p) / det
        if u < -1e-12 or u > 1 + 1e-12:
            continue
        q = np.cross(s, e1)
        v = (direction @ q) / det
        if v < -1e-12 or u + v > 1 + 1e-12:
            continue
        t = (e2 @ q) / det
        if 0 < t < best:
            best, which = t, k
    return best, which


def brute_nearest(points: np.ndarray, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    idx = np.empty(len(queries), dtype=int)
    dist = np.empty(len(queries))
    for k, q in enumerate(queries):
        d2 = ((points - q) ** 2).sum(axis=1)
        idx[k] = int(np.argmin(d2))
        dist[k] = float(np.sqrt(d2[idx[k]]))
    return dist, idx


def random_rotations(n: int, seed: int) -> np.ndarray:
    return Rotation.random(n, random_state=seed).as_matrix()
