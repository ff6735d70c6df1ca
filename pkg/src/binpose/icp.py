"""Point-to-point ICP of a sampled cuboid bin model against a scan."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .rotation import canonicalize_symmetry
from .scan import BinPoseError, BinSpec, Pose, StructuredScan
from .synth import cast_bin

log = logging.getLogger(__name__)


# visibility culls between ICP rounds, at most
VISIBILITY_ROUNDS = 3


class DegenerateSamplingError(BinPoseError):
    pass


class NoCorrespondenceError(BinPoseError):
    pass


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    convergence_delta: float = 0.01
    rejection_radius: float = 25.0
    model_sample_spacing: float = 5.0
    min_paired_points: int = 500

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("convergence_delta", "rejection_radius", "model_sample_spacing", "min_paired_points"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class IcpResult:
    pose: Pose
    iterations_used: int
    final_mean_distance: float
    paired_points: int
    confident: bool
    # mean pair distance after each pairing step, one list per visibility round
    history: list = field(default_factory=list)


def _grid_face(origin, u, v, spacing: float) -> np.ndarray:
    """Regular grid over the rectangle ``origin + a*u + b*v`` with ``a, b`` in [0, 1]."""
    nu = max(2, int(np.ceil(np.linalg.norm(u) / spacing - 1e-9)) + 1)
    nv = max(2, int(np.ceil(np.linalg.norm(v) / spacing - 1e-9)) + 1)
    a, b = np.meshgrid(np.linspace(0, 1, nu), np.linspace(0, 1, nv), indexing="ij")
    return origin + a.reshape(-1, 1) * u + b.reshape(-1, 1) * v


def model_faces(spec: BinSpec) -> list[tuple[str, np.ndarray, np.ndarray, np.ndarray]]:
    """Rectangles ``(name, origin, u, v)`` covering the bin surface."""
    hl, hw, hd = spec.dims / 2
    th = spec.wall_thickness
    ol, ow, bot = hl + th, hw + th, -hd - th
    X, Y, Z = np.eye(3)
    faces = [
        ("floor_inner", np.array([-hl, -hw, -hd]), 2 * hl * X, 2 * hw * Y),
        ("floor_outer", np.array([-ol, -ow, bot]), 2 * ol * X, 2 * ow * Y),
    ]
    for s in (1, -1):
        faces += [
            (f"wall_inner_x{s:+d}", np.array([s * hl, -hw, -hd]), 2 * hw * Y, 2 * hd * Z),
            (f"wall_inner_y{s:+d}", np.array([-hl, s * hw, -hd]), 2 * hl * X, 2 * hd * Z),
            (f"wall_outer_x{s:+d}", np.array([s * ol, -ow, bot]), 2 * ow * Y, (hd - bot) * Z),
            (f"wall_outer_y{s:+d}", np.array([-ol, s * ow, bot]), 2 * ol * X, (hd - bot) * Z),
            (f"rim_x{s:+d}", np.array([min(s * hl, s * ol), -ow, hd]), th * X, 2 * ow * Y),
            (f"rim_y{s:+d}", np.array([-hl, min(s * hw, s * ow), hd]), 2 * hl * X, th * Y),
        ]
    return faces


def sample_bin_model(spec: BinSpec, spacing: float) -> np.ndarray:
    """Grid samples over the inner and outer faces, floor and rim of the bin."""
    if not spacing > 0:
        raise DegenerateSamplingError("spacing must be positive")
    if spacing > min(spec.inner_length, spec.inner_width, spec.inner_depth):
        raise DegenerateSamplingError(
            f"spacing {spacing} mm exceeds the smallest bin dimension"
        )
    return np.concatenate([_grid_face(o, u, v, spacing) for _, o, u, v in model_faces(spec)])


def visible_mask(spec: BinSpec, pose: Pose, model: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    """Model points not hidden by the bin itself when seen from the scanner origin."""
    p_cam = pose.apply(model)
    dist = np.linalg.norm(p_cam, axis=1)
    d_bin = (p_cam / dist[:, None]) @ pose.R
    o_bin = -pose.R.T @ pose.t
    t_hit, _ = cast_bin(spec, o_bin, d_bin)
    return t_hit >= dist - tol


class ScanIndex:
    """Nearest-neighbour lookup over the valid points of a scan."""

    def __init__(self, scan: StructuredScan):
        self.points = scan.valid_points()
        if len(self.points) == 0:
            raise NoCorrespondenceError("scan has no valid points")
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def query(self, q: np.ndarray, max_distance: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
        """Distance and index of the nearest scan point per query.

        Queries with nothing within ``max_distance`` get ``inf`` and index
        ``len(self)``.
        """
        d, i = self._tree.query(np.asarray(q, dtype=np.float64), distance_upper_bound=max_distance)
        return d, i


def rigid_align(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares ``R, t`` with ``R @ src + t ~ dst``; ``R`` is always proper."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = 1.0 if np.linalg.det(Vt.T @ U.T) >= 0 else -1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return R, cd - R @ cs


def _icp_round(index: ScanIndex, model: np.ndarray, pose: Pose, params: IcpParams, budget: int):
    """Classic ICP over a fixed model subset; returns pose, pair count and
    the mean pair distance after every pairing step."""
    if len(model) == 0:
        raise NoCorrespondenceError("no model point is visible from the scanner")

    def pair(p: Pose):
        d, i = index.query(p.apply(model), params.rejection_radius)
        keep = d <= params.rejection_radius
        if keep.sum() < 3:
            raise NoCorrespondenceError("no correspondences within the rejection radius")
        return keep, i, float(d[keep].mean())

    keep, idx, mean = pair(pose)
    steps = [mean]
    for _ in range(budget):
        R, t = rigid_align(model[keep], index.points[idx[keep]])
        candidate = Pose(R, t)
        c_keep, c_idx, c_mean = pair(candidate)
        if c_mean > mean:
            break
        pose, keep, idx = candidate, c_keep, c_idx
        steps.append(c_mean)
        delta = mean - c_mean
        mean = c_mean
        if delta < params.convergence_delta:
            break
    return pose, int(keep.sum()), steps


def refine_icp(scan: StructuredScan, initial: Pose, bin_spec: BinSpec,
               params: IcpParams = IcpParams(), index: ScanIndex | None = None) -> IcpResult:
    """Refine ``initial`` (bin to scanner) by point-to-point ICP.

    Each round runs classic ICP on the model points visible from the scanner
    at the round's starting pose. Visibility is then recomputed at the
    result, and another round follows if the visible set changed. Within a
    round a step that would raise the mean pair distance is not taken.
    """
    index = index or ScanIndex(scan)
    full_model = sample_bin_model(bin_spec, params.model_sample_spacing)

    pose = initial
    history: list[list[float]] = []
    used = 0
    mask = None
    for _ in range(VISIBILITY_ROUNDS):
        new_mask = visible_mask(bin_spec, pose, full_model)
        if mask is not None and (np.array_equal(mask, new_mask) or used >= params.max_iterations):
            break
        mask = new_mask
        try:
            pose, paired, steps = _icp_round(index, full_model[mask], pose, params, params.max_iterations - used)
        except NoCorrespondenceError:
            if not history:
                raise
            break
        used += len(steps) - 1
        history.append(steps)
    mean = history[-1][-1]
    log.debug("icp: %d iterations in %d rounds, mean %.4f mm, %d pairs", used, len(history), mean, paired)
    return IcpResult(
        Pose(canonicalize_symmetry(pose.R), pose.t),
        used,
        mean,
        paired,
        paired >= params.min_paired_points,
        history,
    )
