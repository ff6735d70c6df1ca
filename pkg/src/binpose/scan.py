"""Organized single-view scans, rigid poses and cuboid bin descriptions.

All lengths are millimeters. Scans hold an ``(height, width, 3)`` float32 grid
of scanner-space points plus a validity mask; invalid pixels are stored as NaN
triples on disk.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np

SCAN_MAGIC = "BINSCAN"
SCAN_VERSION = 1
POSE_TOLERANCE = 1e-6

_HEADER_RE = re.compile(rb"^BINSCAN (\d+) (\d+) (\d+)\n")


class BinPoseError(Exception):
    """Base class for all errors raised by this package."""


class ScanFormatError(BinPoseError):
    pass


class MalformedHeaderError(ScanFormatError):
    pass


class TruncatedPayloadError(ScanFormatError):
    pass


class EmptyScanError(ScanFormatError):
    pass


class PoseValidationError(BinPoseError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StructuredScan:
    """A ``height x width`` grid of 3D points in scanner space.

    ``points`` may contain anything at invalid pixels; the constructor
    normalizes them to NaN so that every consumer sees the same array.
    Pixels whose coordinates are not finite are forced invalid.
    """

    width: int
    height: int
    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise EmptyScanError(f"scan dimensions must be positive, got {self.width}x{self.height}")
        pts = np.array(self.points, dtype=np.float32).reshape(self.height, self.width, 3)
        valid = np.array(self.valid, dtype=bool).reshape(self.height, self.width)
        valid &= np.isfinite(pts).all(axis=2)
        pts[~valid] = np.nan
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "valid", _readonly(valid))

    @classmethod
    def from_points(cls, points: np.ndarray) -> "StructuredScan":
        """Build a scan from an ``(H, W, 3)`` array; NaN triples become invalid."""
        points = np.asarray(points)
        h, w = points.shape[:2]
        return cls(w, h, points, np.isfinite(points).all(axis=2))

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def valid_points(self) -> np.ndarray:
        """Valid points as an ``(N, 3)`` float64 array in row-major pixel order."""
        return self.points[self.valid].astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, StructuredScan):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.points, other.points, equal_nan=True)
        )


def _check_rotation(R: np.ndarray, tol: float = POSE_TOLERANCE) -> None:
    if R.shape != (3, 3) or not np.isfinite(R).all():
        raise PoseValidationError("rotation must be a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        raise PoseValidationError("rotation block is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise PoseValidationError(f"rotation determinant is {np.linalg.det(R):.6g}, expected 1")


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``p -> R @ p + t`` from bin space to scanner space."""

    R: np.ndarray
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        _check_rotation(R)
        if not np.isfinite(t).all():
            raise PoseValidationError("translation must be finite")
        object.__setattr__(self, "R", _readonly(R))
        object.__setattr__(self, "t", _readonly(t))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        if T.shape != (4, 4):
            raise PoseValidationError(f"expected a 4x4 matrix, got shape {T.shape}")
        if not np.array_equal(T[3], [0.0, 0.0, 0.0, 1.0]):
            raise PoseValidationError("last row of a homogeneous pose must be 0 0 0 1")
        return cls(T[:3, :3], T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "Pose") -> "Pose":
        """``self o other``: apply ``other`` first."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return np.allclose(self.R, other.R, rtol=0, atol=atol) and np.allclose(
            self.t, other.t, rtol=0, atol=atol
        )

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)


@dataclass(frozen=True)
class BinSpec:
    """Open-top cuboid bin. ``inner_length`` runs along the bin x-axis."""

    inner_length: float
    inner_width: float
    inner_depth: float
    wall_thickness: float

    def __post_init__(self):
        if not self.inner_width > 0:
            raise ValueError("inner_width must be positive")
        if self.inner_length < self.inner_width:
            raise ValueError("inner_length must be >= inner_width (x is the longer side)")
        if not (self.inner_depth > 0 and self.wall_thickness > 0):
            raise ValueError("inner_depth and wall_thickness must be positive")

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.inner_length, self.inner_width, self.inner_depth])

    def rim_corners(self) -> np.ndarray:
        """Inner rim corners in bin space, counterclockwise seen from above."""
        hl, hw, hd = self.dims / 2
        return np.array([[hl, hw, hd], [-hl, hw, hd], [-hl, -hw, hd], [hl, -hw, hd]])


def save_scan(scan: StructuredScan, path) -> None:
    """Write ``scan`` as an ASCII header followed by little-endian float32 triples."""
    payload = np.where(scan.valid[..., None], scan.points, np.float32(np.nan))
    header = f"{SCAN_MAGIC} {SCAN_VERSION} {scan.width} {scan.height}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.astype("<f4").tobytes())


def load_scan(path) -> StructuredScan:
    with open(path, "rb") as fh:
        head = fh.read(64)
        m = _HEADER_RE.match(head)
        if m is None:
            raise MalformedHeaderError(f"{path}: missing or malformed BINSCAN header")
        version, width, height = (int(g) for g in m.groups())
        if version != SCAN_VERSION:
            raise MalformedHeaderError(f"{path}: unsupported scan version {version}")
        if width == 0 or height == 0:
            raise EmptyScanError(f"{path}: zero scan dimension ({width}x{height})")
        fh.seek(m.end())
        expected = width * height * 3 * 4
        data = fh.read(expected)
    if len(data) < expected:
        raise TruncatedPayloadError(
            f"{path}: header declares {width}x{height} but payload has {len(data)} of {expected} bytes"
        )
    pts = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(height, width, 3)
    return StructuredScan.from_points(pts)


def save_pose(pose: Pose, path) -> None:
    rows = [" ".join(repr(float(v)) for v in row) for row in pose.matrix()]
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def load_pose(path) -> Pose:
    with open(path) as fh:
        tokens = fh.read().split()
    try:
        values = [float(v) for v in tokens]
    except ValueError as exc:
        raise PoseValidationError(f"{path}: non-numeric pose entry") from exc
    if len(values) != 16:
        raise PoseValidationError(f"{path}: expected 16 numbers, found {len(values)}")
    return Pose.from_matrix(np.array(values).reshape(4, 4))


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
