"""Synthetic structured-light style scans of bins standing on a table.

The renderer casts one pinhole ray per pixel against the bin (five solid
boxes: floor slab and four walls), primitive occluders placed in bin space,
and an infinite background plane. Noise is applied along each ray and drawn
from a counter-based generator keyed on ``(seed, pixel index)``, so a render
never depends on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.spatial.transform import Rotation

from . import kvfile
from .rotation import canonicalize_symmetry
from .scan import BinPoseError, BinSpec, Pose, StructuredScan

LABEL_MISS = 0
LABEL_BACKGROUND = 64
LABEL_OCCLUDER = 100

PART_NAMES = ("floor", "wall+x", "wall-x", "wall+y", "wall-y")
RIM_FACE = 5  # +z face of a box

DEFAULT_WIDTH = 516
DEFAULT_HEIGHT = 386
DEFAULT_FOCAL = 500.0
FULL_WIDTH = 2064
FULL_HEIGHT = 1544


class InvalidCameraError(BinPoseError):
    pass


def box_label(part: int, face: int) -> int:
    return 1 + 6 * part + face


RIM_LABELS = frozenset(box_label(p, RIM_FACE) for p in range(1, 5))
FLOOR_TOP_LABEL = box_label(0, RIM_FACE)


def bin_boxes(spec: BinSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """The bin as five axis-aligned boxes ``(lo, hi)`` in bin space.

    Order matches ``PART_NAMES``. The x walls own the corners.
    """
    hl, hw, hd = spec.dims / 2
    th = spec.wall_thickness
    return [
        (np.array([-hl - th, -hw - th, -hd - th]), np.array([hl + th, hw + th, -hd])),
        (np.array([hl, -hw - th, -hd]), np.array([hl + th, hw + th, hd])),
        (np.array([-hl - th, -hw - th, -hd]), np.array([-hl, hw + th, hd])),
        (np.array([-hl, hw, -hd]), np.array([hl, hw + th, hd])),
        (np.array([-hl, -hw - th, -hd]), np.array([hl, -hw, hd])),
    ]


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float


Occluder = Union[Box, Sphere]


@dataclass(frozen=True)
class CameraModel:
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    focal_length: float = DEFAULT_FOCAL
    principal_point: Optional[tuple] = None
    pose: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera resolution must be positive")
        if not self.focal_length > 0:
            raise ValueError("focal_length must be positive")
        if self.principal_point is None:
            object.__setattr__(self, "principal_point", ((self.width - 1) / 2, (self.height - 1) / 2))
        cx, cy = self.principal_point
        if not (0 <= cx <= self.width - 1 and 0 <= cy <= self.height - 1):
            raise ValueError("principal point must lie inside the image")

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """World-space ray origin and unit directions, row-major ``(H*W, 3)``."""
        cx, cy = self.principal_point
        v, u = np.mgrid[0:self.height, 0:self.width]
        d = np.stack([u - cx, v - cy, np.full(u.shape, self.focal_length)], axis=-1).reshape(-1, 3)
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        return self.pose.t.copy(), d @ self.pose.R.T

    def project(self, points_world: np.ndarray) -> np.ndarray:
        pc = self.pose.inverse().apply(points_world)
        cx, cy = self.principal_point
        return np.column_stack([
            self.focal_length * pc[:, 0] / pc[:, 2] + cx,
            self.focal_length * pc[:, 1] / pc[:, 2] + cy,
        ])


@dataclass(frozen=True)
class SceneSpec:
    bin: BinSpec
    bin_pose: Pose
    background_plane: tuple = (0.0, 0.0, -1.0, -2000.0)  # (nx, ny, nz, offset): n.p = offset
    occluders: tuple = ()
    noise_sigma: float = 0.0
    dropout_rate: float = 0.0
    seed: int = 0
    tag: str = "visible-rim"

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be nonnegative")
        object.__setattr__(self, "occluders", tuple(self.occluders))


def ray_box(origins: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Slab test. Returns entry distance (inf on miss) and entry face ``2*axis + side``.

    ``side`` is 1 for the box's max face along that axis. Rays starting inside
    the box count as misses.
    """
    origins = np.broadcast_to(origins, dirs.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.where(np.isnan(t0) | np.isnan(t1), -np.inf, np.minimum(t0, t1))
    tmax = np.where(np.isnan(t0) | np.isnan(t1), np.inf, np.maximum(t0, t1))
    axis = np.argmax(tmin, axis=1)
    tnear = np.take_along_axis(tmin, axis[:, None], axis=1)[:, 0]
    tfar = tmax.min(axis=1)
    hit = (tnear <= tfar) & (tnear > 0)
    side = (np.take_along_axis(dirs, axis[:, None], axis=1)[:, 0] < 0).astype(int)
    return np.where(hit, tnear, np.inf), 2 * axis + side


def ray_sphere(origins: np.ndarray, dirs: np.ndarray, center, radius: float) -> np.ndarray:
    oc = np.broadcast_to(origins, dirs.shape) - np.asarray(center, dtype=np.float64)
    b = np.einsum("ij,ij->i", dirs, oc)
    c = np.einsum("ij,ij->i", oc, oc) - radius * radius
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        t = -b - np.sqrt(disc)
    return np.where((disc >= 0) & (t > 0) & (c > 0), t, np.inf)


def ray_plane(origins: np.ndarray, dirs: np.ndarray, normal, offset: float) -> np.ndarray:
    n = np.asarray(normal, dtype=np.float64)
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (offset - np.broadcast_to(origins, dirs.shape) @ n) / denom
    return np.where(np.isfinite(t) & (t > 0), t, np.inf)


def cast_bin(spec: BinSpec, origins: np.ndarray, dirs: np.ndarray):
    """Nearest hit of bin-space rays on the bin body: ``(distance, label)``."""
    best = np.full(len(dirs), np.inf)
    label = np.full(len(dirs), LABEL_MISS)
    for part, (lo, hi) in enumerate(bin_boxes(spec)):
        t, face = ray_box(origins, dirs, lo, hi)
        closer = t < best
        best = np.where(closer, t, best)
        label = np.where(closer, 1 + 6 * part + face, label)
    return best, label


def cast_rays(scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray):
    """Nearest-hit distance and surface label for world-space unit rays."""
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    origins = np.asarray(origins, dtype=np.float64)
    R, t = scene.bin_pose.R, scene.bin_pose.t
    o_bin = (np.broadcast_to(origins, dirs.shape) - t) @ R
    d_bin = dirs @ R

    best, label = cast_bin(scene.bin, o_bin, d_bin)
    for k, occ in enumerate(scene.occluders):
        if isinstance(occ, Box):
            tk, _ = ray_box(o_bin, d_bin, np.asarray(occ.lo, float), np.asarray(occ.hi, float))
        else:
            tk = ray_sphere(o_bin, d_bin, occ.center, occ.radius)
        closer = tk < best
        best = np.where(closer, tk, best)
        label = np.where(closer, LABEL_OCCLUDER + k, label)

    nx, ny, nz, off = scene.background_plane
    tp = ray_plane(origins, dirs, (nx, ny, nz), off)
    closer = tp < best
    best = np.where(closer, tp, best)
    label = np.where(closer, LABEL_BACKGROUND, label)
    return best, label


def _inside_box(p, lo, hi) -> bool:
    return bool(np.all(p > lo) and np.all(p < hi))


def check_camera(scene: SceneSpec, camera: CameraModel) -> None:
    c_world = camera.pose.t
    c_bin = scene.bin_pose.inverse().apply(c_world[None])[0]
    for name, (lo, hi) in zip(PART_NAMES, bin_boxes(scene.bin)):
        if _inside_box(c_bin, lo, hi):
            raise InvalidCameraError(f"camera is inside the bin {name}")
    for occ in scene.occluders:
        if isinstance(occ, Box):
            inside = _inside_box(c_bin, np.asarray(occ.lo), np.asarray(occ.hi))
        else:
            inside = np.linalg.norm(c_bin - np.asarray(occ.center)) < occ.radius
        if inside:
            raise InvalidCameraError("camera is inside an occluder")
    nx, ny, nz, off = scene.background_plane
    if np.dot((nx, ny, nz), c_world) <= off:
        raise InvalidCameraError("camera is behind the background plane")


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def pixel_uniforms(seed: int, n: int, stream: int) -> np.ndarray:
    """Uniforms in (0, 1), one per pixel index, independent per ``stream``."""
    key = _splitmix64(np.array([seed % 2**64], dtype=np.uint64))
    key = _splitmix64(key ^ np.uint64(stream))
    z = _splitmix64(key + np.arange(n, dtype=np.uint64) * _GOLDEN)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def pixel_normals(seed: int, n: int) -> np.ndarray:
    u1 = pixel_uniforms(seed, n, 0)
    u2 = pixel_uniforms(seed, n, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def ground_truth_pose(scene: SceneSpec, camera: CameraModel) -> Pose:
    """Bin-to-camera pose with the rotation canonicalized."""
    p = camera.pose.inverse().compose(scene.bin_pose)
    return Pose(canonicalize_symmetry(p.R), p.t)


def render_scan(scene: SceneSpec, camera: CameraModel, return_labels: bool = False):
    """Render ``scene`` into a scan in camera coordinates.

    Returns ``(scan, ground_truth)``, plus an ``(H, W)`` label image when
    ``return_labels`` is set.
    """
    check_camera(scene, camera)
    origin, dirs = camera.pixel_rays()
    dist, label = cast_rays(scene, origin, dirs)
    n = len(dirs)
    if scene.noise_sigma > 0:
        dist = dist + scene.noise_sigma * pixel_normals(scene.seed, n)
    valid = np.isfinite(dist) & (label != LABEL_MISS)
    if scene.dropout_rate > 0:
        valid &= pixel_uniforms(scene.seed, n, 2) >= scene.dropout_rate
    # camera frame: rays start at the origin
    d_cam = dirs @ camera.pose.R
    pts = np.where(valid[:, None], d_cam * np.where(valid, dist, 0.0)[:, None], np.nan)
    scan = StructuredScan(camera.width, camera.height, pts.reshape(camera.height, camera.width, 3),
                          valid.reshape(camera.height, camera.width))
    gt = ground_truth_pose(scene, camera)
    if return_labels:
        return scan, gt, label.reshape(camera.height, camera.width)
    return scan, gt


# --- scene files ---------------------------------------------------------

def scene_to_text(scene: SceneSpec) -> str:
    b = scene.bin
    pairs = [
        ("tag", scene.tag),
        ("seed", scene.seed),
        ("bin", kvfile.fmt([b.inner_length, b.inner_width, b.inner_depth, b.wall_thickness])),
        ("bin_pose", kvfile.fmt(scene.bin_pose.matrix().ravel())),
        ("background_plane", kvfile.fmt(scene.background_plane)),
        ("noise_sigma", kvfile.fmt(scene.noise_sigma)),
        ("dropout_rate", kvfile.fmt(scene.dropout_rate)),
    ]
    for occ in scene.occluders:
        if isinstance(occ, Box):
            pairs.append(("occluder", "box " + kvfile.fmt(list(occ.lo) + list(occ.hi))))
        else:
            pairs.append(("occluder", "sphere " + kvfile.fmt(list(occ.center) + [occ.radius])))
    return kvfile.format_kv(pairs)


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split()]


def scene_from_text(text: str) -> SceneSpec:
    kw = {"occluders": []}
    for key, value in kvfile.parse_kv(text):
        if key == "tag":
            kw["tag"] = value
        elif key == "seed":
            kw["seed"] = int(value)
        elif key == "bin":
            kw["bin"] = BinSpec(*_floats(value))
        elif key == "bin_pose":
            kw["bin_pose"] = Pose.from_matrix(np.array(_floats(value)).reshape(4, 4))
        elif key == "background_plane":
            kw["background_plane"] = tuple(_floats(value))
        elif key in ("noise_sigma", "dropout_rate"):
            kw[key] = float(value)
        elif key == "occluder":
            kind, rest = value.split(None, 1)
            nums = _floats(rest)
            if kind == "box":
                kw["occluders"].append(Box(tuple(nums[:3]), tuple(nums[3:])))
            elif kind == "sphere":
                kw["occluders"].append(Sphere(tuple(nums[:3]), nums[3]))
            else:
                raise kvfile.ConfigError(f"unknown occluder kind {kind!r}")
        else:
            raise kvfile.ConfigError(f"unknown scene key {key!r}")
    if "bin" not in kw or "bin_pose" not in kw:
        raise kvfile.ConfigError("scene needs 'bin' and 'bin_pose'")
    return SceneSpec(**kw)


def save_scene(scene: SceneSpec, path) -> None:
    with open(path, "w") as fh:
        fh.write(scene_to_text(scene))


def load_scene(path) -> SceneSpec:
    with open(path) as fh:
        return scene_from_text(fh.read())


# --- suites --------------------------------------------------------------

@dataclass(frozen=True)
class SuiteConfig:
    count: int = 50
    kind: str = "visible-rim"  # or "occluded"
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    focal_length: float = DEFAULT_FOCAL
    length_range: tuple = (250.0, 450.0)
    aspect_range: tuple = (0.55, 0.8)  # inner_width / inner_length
    depth_range: tuple = (100.0, 220.0)
    thickness_range: tuple = (4.0, 8.0)
    max_tilt_deg: float = 20.0
    coverage_range: tuple = (0.45, 0.65)  # outer diagonal / image width
    max_occluders: int = 3
    noise_sigma: float = 0.0
    dropout_rate: float = 0.0
    edge_margin_px: float = 24.0

    def validate(self) -> None:
        if self.count < 0:
            raise kvfile.ConfigError("count must be nonnegative")
        if self.kind not in ("visible-rim", "occluded"):
            raise kvfile.ConfigError(f"unknown suite kind {self.kind!r}")
        for name in ("length_range", "aspect_range", "depth_range", "thickness_range", "coverage_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise kvfile.ConfigError(f"{name} must be an ascending positive range")
        if self.aspect_range[1] > 1:
            raise kvfile.ConfigError("aspect_range must not exceed 1 (length is the longer side)")
        if not 0 <= self.max_tilt_deg <= 60:
            raise kvfile.ConfigError("max_tilt_deg must lie in [0, 60]")
        if self.max_occluders < 0:
            raise kvfile.ConfigError("max_occluders must be nonnegative")
        if not 0 <= self.dropout_rate < 1 or self.noise_sigma < 0:
            raise kvfile.ConfigError("bad noise settings")

    def camera(self) -> CameraModel:
        return CameraModel(self.width, self.height, self.focal_length)

    def full_resolution(self) -> "SuiteConfig":
        from dataclasses import replace
        s = FULL_WIDTH / self.width
        return replace(self, width=FULL_WIDTH, height=FULL_HEIGHT, focal_length=self.focal_length * s,
                       edge_margin_px=self.edge_margin_px * s)


def _outer_corners(spec: BinSpec) -> np.ndarray:
    hl, hw, hd = spec.dims / 2
    th = spec.wall_thickness
    xs, ys, zs = (-hl - th, hl + th), (-hw - th, hw + th), (-hd - th, hd)
    return np.array([[x, y, z] for x in xs for y in ys for z in zs])


def _sample_pose(rng: np.random.Generator, spec: BinSpec, cfg: SuiteConfig) -> Pose:
    yaw = rng.uniform(0, 2 * np.pi)
    tilt = np.deg2rad(cfg.max_tilt_deg) * np.sqrt(rng.uniform())
    tilt_dir = rng.uniform(0, 2 * np.pi)
    R = (
        Rotation.from_rotvec(tilt * np.array([np.cos(tilt_dir), np.sin(tilt_dir), 0.0]))
        * Rotation.from_euler("x", np.pi)
        * Rotation.from_euler("z", yaw)
    ).as_matrix()
    outer = spec.dims[:2] + 2 * spec.wall_thickness
    diag = float(np.hypot(*outer))
    dist = cfg.focal_length * diag / (rng.uniform(*cfg.coverage_range) * cfg.width)
    shift = rng.uniform(-0.08, 0.08, size=2) * dist
    return Pose(R, np.array([shift[0], shift[1], dist]))


def _sample_items(rng: np.random.Generator, spec: BinSpec, cfg: SuiteConfig) -> list:
    hl, hw, hd = spec.dims / 2
    items = []
    for _ in range(rng.integers(0, cfg.max_occluders + 1)):
        if rng.uniform() < 0.5:
            sx = rng.uniform(0.1, 0.35) * spec.inner_length
            sy = rng.uniform(0.1, 0.35) * spec.inner_width
            sz = rng.uniform(0.15, 0.6) * spec.inner_depth
            cx = rng.uniform(-hl + sx / 2, hl - sx / 2)
            cy = rng.uniform(-hw + sy / 2, hw - sy / 2)
            items.append(Box((cx - sx / 2, cy - sy / 2, -hd), (cx + sx / 2, cy + sy / 2, -hd + sz)))
        else:
            r = rng.uniform(0.1, 0.3) * min(spec.inner_depth, spec.inner_width)
            cx = rng.uniform(-hl + r, hl - r)
            cy = rng.uniform(-hw + r, hw - r)
            items.append(Sphere((cx, cy, -hd + r), r))
    return items


def _lid(rng: np.random.Generator, spec: BinSpec) -> Box:
    hl, hw, hd = spec.dims / 2
    m = spec.wall_thickness + rng.uniform(5.0, 20.0)
    h = rng.uniform(5.0, 20.0)
    return Box((-hl - m, -hw - m, hd), (hl + m, hw + m, hd + h))


def _fits_in_image(spec: BinSpec, pose: Pose, cam: CameraModel, margin: float) -> bool:
    uv = cam.project(pose.apply(_outer_corners(spec)))
    return bool(
        np.all(uv[:, 0] >= margin) and np.all(uv[:, 0] <= cam.width - 1 - margin)
        and np.all(uv[:, 1] >= margin) and np.all(uv[:, 1] <= cam.height - 1 - margin)
    )


def generate_suite(cfg: SuiteConfig, seed: int = 7) -> list[SceneSpec]:
    """Deterministic list of scenes for ``cfg``.

    ``visible-rim`` scenes keep the whole bin in view with items below the rim;
    ``occluded`` scenes put a lid over the rim so no top edge is visible.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    cam = cfg.camera()
    scenes = []
    for i in range(cfg.count):
        length = rng.uniform(*cfg.length_range)
        spec = BinSpec(
            length,
            length * rng.uniform(*cfg.aspect_range),
            rng.uniform(*cfg.depth_range),
            rng.uniform(*cfg.thickness_range),
        )
        for _ in range(1000):
            pose = _sample_pose(rng, spec, cfg)
            if _fits_in_image(spec, pose, cam, cfg.edge_margin_px):
                break
        else:
            raise kvfile.ConfigError("could not place a bin inside the image; check coverage_range and tilt")
        occluders = _sample_items(rng, spec, cfg)
        if cfg.kind == "occluded":
            occluders.append(_lid(rng, spec))
        # table under the floor slab, normal along the bin's up axis
        up = pose.R[:, 2]
        table_point = pose.apply(np.array([[0.0, 0.0, -spec.inner_depth / 2 - spec.wall_thickness]]))[0]
        scenes.append(SceneSpec(
            bin=spec,
            bin_pose=pose,
            background_plane=(*up, float(up @ table_point)),
            occluders=tuple(occluders),
            noise_sigma=cfg.noise_sigma,
            dropout_rate=cfg.dropout_rate,
            seed=int(rng.integers(0, 2**63)),
            tag=cfg.kind,
        ))
    return scenes


def suite_to_text(cfg: SuiteConfig) -> str:
    from dataclasses import asdict
    return kvfile.format_kv((k, kvfile.fmt(v) if not isinstance(v, str) else v) for k, v in asdict(cfg).items())


def load_suite_config(path_or_pairs) -> SuiteConfig:
    pairs = kvfile.read_kv(path_or_pairs) if not isinstance(path_or_pairs, list) else path_or_pairs
    return kvfile.apply_overrides(SuiteConfig(), pairs, prefix="suite")


def perturb_pose(pose: Pose, angle_deg: float, offset_mm: float, rng: np.random.Generator) -> Pose:
    """Rotate about a random axis through the bin centre by exactly ``angle_deg``
    and shift by exactly ``offset_mm`` in a random direction."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    shift = rng.normal(size=3)
    shift /= np.linalg.norm(shift)
    dR = Rotation.from_rotvec(np.radians(angle_deg) * axis).as_matrix()
    return Pose(dR @ pose.R, pose.t + offset_mm * shift)
