"""Analytical edge-based bin pose estimation.

Four stages, each usable on its own:

1. :func:`extract_bin_cuts` walks sampled rows and columns of the scan and
   finds wall-floor-wall crossings; each wall contributes its nearest point
   (a sample of the top rim).
2. :func:`estimate_top_plane` takes the dominant horizontal and vertical
   rim-to-rim directions, crosses them into the rim plane normal and drops
   cuts that do not lie on that plane.
3. :func:`detect_corners` orders the rim samples around the opening and
   keeps the four sharpest turns.
4. :func:`fit_walls_and_pose` assigns rim samples to walls, fits a line per
   wall and builds the bin frame.

Depth means the scanner-space z coordinate; the scanner looks along +z.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import find_peaks

from .rotation import canonicalize_symmetry
from .scan import BinPoseError, BinSpec, Pose, StructuredScan

log = logging.getLogger(__name__)

MIN_MODE_ANGLE_DEG = 5.0
MIN_CORNER_SEPARATION = 3
# a corner must turn this much more than the typical rim sample
CORNER_DOMINANCE_DEG = 30.0
# depth slack, relative to the jump threshold, for the rim plateau
RIM_PLATEAU_FRACTION = 0.25


class DegeneratePlaneError(BinPoseError):
    pass


class CornerDetectionError(BinPoseError):
    pass


@dataclass(frozen=True)
class AnalyticParams:
    scanline_stride: int = 16
    depth_jump_threshold: float = 10.0
    direction_bin_width: float = 5.0
    plane_inlier_threshold: float = 8.0
    min_wall_cuts_per_wall: int = 3

    def __post_init__(self):
        for name in ("scanline_stride", "depth_jump_threshold", "direction_bin_width",
                     "plane_inlier_threshold", "min_wall_cuts_per_wall"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class WallCut:
    start: int  # pixel range along the scan-line, inclusive
    stop: int
    top_pixel: int
    top_point: np.ndarray


@dataclass(frozen=True)
class BinCut:
    axis: str  # "horizontal" walks a row, "vertical" walks a column
    scanline_index: int
    walls: tuple[WallCut, WallCut]
    floor_interval: tuple[int, int]

    @property
    def edge_direction(self) -> np.ndarray:
        return self.walls[1].top_point - self.walls[0].top_point

    @property
    def endpoints(self) -> np.ndarray:
        return np.stack([self.walls[0].top_point, self.walls[1].top_point])


@dataclass(frozen=True)
class TopPlane:
    normal: np.ndarray  # unit, pointing toward the scanner
    offset: float  # normal . p = offset on the plane

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.normal - self.offset

    def basis(self) -> tuple[np.ndarray, np.ndarray]:
        """In-plane axes ``(e1, e2)`` with ``e1 x e2 = normal``.

        Increasing polar angle in this basis is counterclockwise as seen
        from the scanner.
        """
        ref = np.array([1.0, 0.0, 0.0])
        if abs(ref @ self.normal) > 0.9:
            ref = np.array([0.0, 1.0, 0.0])
        e1 = ref - (ref @ self.normal) * self.normal
        e1 /= np.linalg.norm(e1)
        return e1, np.cross(self.normal, e1)

    def to_2d(self, points: np.ndarray) -> np.ndarray:
        e1, e2 = self.basis()
        return np.column_stack([points @ e1, points @ e2])

    def to_3d(self, uv: np.ndarray) -> np.ndarray:
        e1, e2 = self.basis()
        uv = np.atleast_2d(uv)
        return self.offset * self.normal + uv[:, :1] * e1 + uv[:, 1:2] * e2


@dataclass
class FitReport:
    pose: Optional[Pose]
    failed: bool
    stage_diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.failed != (self.pose is None):
            raise ValueError("a report is failed exactly when it carries no pose")


# --- stage 1 -------------------------------------------------------------

def _wall_band(d: np.ndarray, run_id: np.ndarray, peak: int, tol: float) -> tuple[int, int, int]:
    """Contiguous same-run neighbourhood of ``peak`` within ``tol`` of its depth."""
    lo = hi = peak
    limit = d[peak] + tol
    while lo > 0 and run_id[lo - 1] == run_id[peak] and d[lo - 1] <= limit:
        lo -= 1
    while hi < len(d) - 1 and run_id[hi + 1] == run_id[peak] and d[hi + 1] <= limit:
        hi += 1
    seg = d[lo:hi + 1]
    # centre of the contiguous near-minimum plateau, so a tilted rim strip
    # is not always sampled at the same edge
    best = int(np.argmin(seg))
    near = seg <= seg[best] + RIM_PLATEAU_FRACTION * tol
    a = b = best
    while a > 0 and near[a - 1]:
        a -= 1
    while b < len(seg) - 1 and near[b + 1]:
        b += 1
    return lo, hi, lo + (a + b) // 2


def _cut_scanline(line_pts: np.ndarray, line_valid: np.ndarray, axis: str, index: int,
                  params: AnalyticParams) -> Optional[BinCut]:
    pix = np.flatnonzero(line_valid)
    if len(pix) < 5:
        return None
    pts = line_pts[pix].astype(np.float64)
    d = pts[:, 2]
    jump = params.depth_jump_threshold
    run_id = np.concatenate([[0], np.cumsum(np.abs(np.diff(d)) >= jump)])
    peaks, _ = find_peaks(-d, prominence=2.0 * jump)
    if len(peaks) < 2:
        return None
    a_lo, a_hi, a_top = _wall_band(d, run_id, int(peaks[0]), jump)
    b_lo, b_hi, b_top = _wall_band(d, run_id, int(peaks[-1]), jump)
    if b_lo <= a_hi + 1:
        return None
    floor = d[a_hi + 1:b_lo]
    # the floor must sit clearly behind both rims
    if floor.max() < max(d[a_top], d[b_top]) + jump:
        return None
    walls = (
        WallCut(int(pix[a_lo]), int(pix[a_hi]), int(pix[a_top]), pts[a_top]),
        WallCut(int(pix[b_lo]), int(pix[b_hi]), int(pix[b_top]), pts[b_top]),
    )
    return BinCut(axis, index, walls, (int(pix[a_hi + 1]), int(pix[b_lo - 1])))


def extract_bin_cuts(scan: StructuredScan, params: AnalyticParams = AnalyticParams()) -> list[BinCut]:
    s = params.scanline_stride
    cuts = []
    for r in range(s // 2, scan.height, s):
        c = _cut_scanline(scan.points[r], scan.valid[r], "horizontal", r, params)
        if c is not None:
            cuts.append(c)
    for col in range(s // 2, scan.width, s):
        c = _cut_scanline(scan.points[:, col], scan.valid[:, col], "vertical", col, params)
        if c is not None:
            cuts.append(c)
    return cuts


# --- stage 2 -------------------------------------------------------------

def mode_direction(vectors: np.ndarray, bin_width_deg: float) -> np.ndarray:
    """Most populated cell of an azimuth/elevation histogram, refined as the
    mean unit vector of that cell."""
    u = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    az = np.degrees(np.arctan2(u[:, 1], u[:, 0]))
    el = np.degrees(np.arcsin(np.clip(u[:, 2], -1.0, 1.0)))
    keys = np.floor(np.column_stack([az, el]) / bin_width_deg).astype(int)
    cells, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    winner = int(np.argmax(counts))
    m = u[inverse.ravel() == winner].mean(axis=0)
    return m / np.linalg.norm(m)


def _fit_plane(points: np.ndarray) -> tuple[np.ndarray, float]:
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c)
    n = vt[2]
    if n[2] > 0:
        n = -n
    return n, float(n @ c)


def estimate_top_plane(cuts: list[BinCut], params: AnalyticParams = AnalyticParams()):
    """Rim plane from the dominant edge directions, plus the cuts lying on it.

    The cross-product normal is used to reject outlier cuts; the plane is then
    refit to the remaining rim samples by least squares.
    """
    h = [c.edge_direction for c in cuts if c.axis == "horizontal"]
    v = [c.edge_direction for c in cuts if c.axis == "vertical"]
    if not h or not v:
        raise DegeneratePlaneError("need at least one horizontal and one vertical bin-cut")
    mh = mode_direction(np.array(h), params.direction_bin_width)
    mv = mode_direction(np.array(v), params.direction_bin_width)
    cross = np.cross(mh, mv)
    angle = np.degrees(np.arctan2(np.linalg.norm(cross), abs(mh @ mv)))
    if angle < MIN_MODE_ANGLE_DEG:
        raise DegeneratePlaneError(f"mode directions are {angle:.2f} deg apart")
    n = cross / np.linalg.norm(cross)
    if n[2] > 0:
        n = -n
    ends = np.concatenate([c.endpoints for c in cuts])
    plane = TopPlane(n, float(np.median(ends @ n)))

    def inliers(pl: TopPlane) -> list[BinCut]:
        return [c for c in cuts if np.all(np.abs(pl.distance(c.endpoints)) <= params.plane_inlier_threshold)]

    kept = inliers(plane)
    if len(kept) >= 2:
        plane = TopPlane(*_fit_plane(np.concatenate([c.endpoints for c in kept])))
        kept = inliers(plane)
    return plane, kept


# --- stage 3 -------------------------------------------------------------

def _rim_order(uv: np.ndarray) -> np.ndarray:
    c = uv.mean(axis=0)
    return np.argsort(np.arctan2(uv[:, 1] - c[1], uv[:, 0] - c[0]), kind="stable")


def _dedupe_ring(uv: np.ndarray, tol: float = 0.5) -> np.ndarray:
    keep = [0]
    for i in range(1, len(uv)):
        if np.linalg.norm(uv[i] - uv[keep[-1]]) > tol:
            keep.append(i)
    if len(keep) > 1 and np.linalg.norm(uv[keep[-1]] - uv[keep[0]]) <= tol:
        keep.pop()
    return uv[keep]


def turning_angles(ring: np.ndarray, radius: float) -> np.ndarray:
    """Direction change at each point of a closed polyline, measured between
    chords reaching at least ``radius`` back and ahead."""
    n = len(ring)
    out = np.zeros(n)
    for i in range(n):
        j = (i - 1) % n
        while np.linalg.norm(ring[i] - ring[j]) < radius and (i - j) % n < n // 2:
            j = (j - 1) % n
        k = (i + 1) % n
        while np.linalg.norm(ring[k] - ring[i]) < radius and (k - i) % n < n // 2:
            k = (k + 1) % n
        a = ring[i] - ring[j]
        b = ring[k] - ring[i]
        out[i] = np.arctan2(a[0] * b[1] - a[1] * b[0], a @ b)
    return np.abs(out)


def detect_corners(cuts: list[BinCut], plane: TopPlane, params: AnalyticParams = AnalyticParams()) -> np.ndarray:
    """Four rim corners (scanner space, on ``plane``), counterclockwise as seen
    from the scanner."""
    if not cuts:
        raise CornerDetectionError("no rim samples")
    uv = plane.to_2d(np.concatenate([c.endpoints for c in cuts]))
    ring = _dedupe_ring(uv[_rim_order(uv)])
    return plane.to_3d(corners_2d(ring, params.min_wall_cuts_per_wall))


def corners_2d(ring: np.ndarray, min_per_wall: int = 3) -> np.ndarray:
    """Pick the four dominant turns of an ordered closed ring of 2D points."""
    n = len(ring)
    if n < max(8, 4 * min_per_wall):
        raise CornerDetectionError(f"only {n} rim samples")
    step = np.linalg.norm(np.diff(ring, axis=0, append=ring[:1]), axis=1)
    ang = turning_angles(ring, 1.5 * float(np.median(step)))
    floor = np.median(ang) + np.radians(CORNER_DOMINANCE_DEG)
    is_max = (ang >= np.roll(ang, 1)) & (ang >= np.roll(ang, -1)) & (ang >= floor)
    chosen: list[int] = []
    for i in sorted(np.flatnonzero(is_max), key=lambda i: (-ang[i], i)):
        if all(min((i - j) % n, (j - i) % n) >= MIN_CORNER_SEPARATION for j in chosen):
            chosen.append(int(i))
        if len(chosen) == 4:
            break
    if len(chosen) < 4:
        raise CornerDetectionError(f"found {len(chosen)} dominant corners, need 4")
    return ring[sorted(chosen)]


# --- stage 4 -------------------------------------------------------------

def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    s = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + s[:, None] * ab), axis=1)


def _fit_line(p: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    c = p.mean(axis=0)
    _, sv, vt = np.linalg.svd(p - c)
    rms = sv[1] / np.sqrt(len(p)) if len(sv) > 1 else 0.0
    return c, vt[0], float(rms)


def _intersect(c1, d1, c2, d2) -> np.ndarray:
    A = np.column_stack([d1, -d2])
    s = np.linalg.solve(A, c2 - c1)
    return c1 + s[0] * d1


def fit_walls_and_pose(cuts: list[BinCut], corners: np.ndarray, plane: TopPlane, bin_spec: BinSpec,
                       params: AnalyticParams = AnalyticParams()) -> FitReport:
    diag: dict = {}
    uv = plane.to_2d(np.concatenate([c.endpoints for c in cuts])) if cuts else np.zeros((0, 2))
    cuv = plane.to_2d(np.asarray(corners))
    dist = np.column_stack([_segment_distance(uv, cuv[k], cuv[(k + 1) % 4]) for k in range(4)]) \
        if len(uv) else np.zeros((0, 4))
    wall_of = np.argmin(dist, axis=1) if len(uv) else np.zeros(0, int)
    # a corner sample sits on two walls; it belongs to neither line
    if len(uv):
        at_corner = np.min(np.linalg.norm(uv[:, None] - cuv[None], axis=2), axis=1) < 1e-6
        wall_of[at_corner] = -1
    support = [int(np.sum(wall_of == k)) for k in range(4)]
    diag["wall_support"] = support
    if min(support) < params.min_wall_cuts_per_wall:
        diag["failed_stage"] = "walls"
        return FitReport(None, True, diag)

    lines = [_fit_line(uv[wall_of == k]) for k in range(4)]
    diag["wall_residuals_mm"] = [ln[2] for ln in lines]
    try:
        rect = np.array([_intersect(lines[k - 1][0], lines[k - 1][1], lines[k][0], lines[k][1])
                         for k in range(4)])
    except np.linalg.LinAlgError:
        diag["failed_stage"] = "walls"
        return FitReport(None, True, diag)
    # wall k runs from rect[k] to rect[k+1]
    side = np.linalg.norm(np.roll(rect, -1, axis=0) - rect, axis=1)
    long_pair = 0 if side[0] + side[2] >= side[1] + side[3] else 1
    diag["rim_size_mm"] = sorted([float((side[0] + side[2]) / 2), float((side[1] + side[3]) / 2)], reverse=True)

    # average all four wall directions modulo 180 deg, short walls turned by 90 deg
    theta = np.array([np.arctan2(ln[1][1], ln[1][0]) for ln in lines])
    theta[[(long_pair + 1) % 4, (long_pair + 3) % 4]] += np.pi / 2
    phi = np.angle(np.mean(np.exp(2j * theta))) / 2
    x2 = np.array([np.cos(phi), np.sin(phi)])

    e1, e2 = plane.basis()
    z = plane.normal
    x = x2[0] * e1 + x2[1] * e2
    x -= (x @ z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = canonicalize_symmetry(np.column_stack([x, y, z]))
    rim_center = plane.to_3d(rect.mean(axis=0))[0]
    t = rim_center - 0.5 * bin_spec.inner_depth * z
    return FitReport(Pose(R, t), False, diag)


def estimate_pose_analytic(scan: StructuredScan, bin_spec: BinSpec,
                           params: AnalyticParams = AnalyticParams()) -> FitReport:
    diag: dict = {}
    cuts = extract_bin_cuts(scan, params)
    diag["cuts_extracted"] = len(cuts)
    if not cuts:
        diag["failed_stage"] = "cuts"
        return FitReport(None, True, diag)
    try:
        plane, kept = estimate_top_plane(cuts, params)
    except DegeneratePlaneError as exc:
        diag.update(failed_stage="plane", error=str(exc))
        return FitReport(None, True, diag)
    diag["plane_inliers"] = len(kept)
    try:
        corners = detect_corners(kept, plane, params)
    except CornerDetectionError as exc:
        diag.update(failed_stage="corners", error=str(exc))
        return FitReport(None, True, diag)
    diag["corners_found"] = len(corners)
    report = fit_walls_and_pose(kept, corners, plane, bin_spec, params)
    report.stage_diagnostics = {**diag, **report.stage_diagnostics}
    log.debug("analytic fit: %s", report.stage_diagnostics)
    return report
