from functools import lru_cache

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from binpose.scan import BinSpec, Pose
from binpose.synth import CameraModel, SceneSpec, SuiteConfig, generate_suite, render_scan


@lru_cache(maxsize=None)
def suite(kind: str = "visible-rim", count: int = 50, seed: int = 7, noise: float = 0.0):
    """Rendered ``(scene, scan, gt)`` triples, cached across test modules."""
    from dataclasses import replace
    cfg = replace(SuiteConfig(), kind=kind, count=count, noise_sigma=noise)
    cam = cfg.camera()
    return tuple((s, *render_scan(s, cam)) for s in generate_suite(cfg, seed))


def top_down_scene(spec: BinSpec = BinSpec(300, 200, 150, 6), distance: float = 900.0, yaw_deg: float = 0.0,
                   **kw) -> SceneSpec:
    """Bin seen straight down its opening from ``distance`` mm above the rim."""
    R = (Rotation.from_euler("x", np.pi) * Rotation.from_euler("z", yaw_deg, degrees=True)).as_matrix()
    t = np.array([0.0, 0.0, distance + spec.inner_depth / 2])
    floor = t[2] + spec.inner_depth / 2 + spec.wall_thickness
    return SceneSpec(spec, Pose(R, t), background_plane=(0.0, 0.0, -1.0, -floor), **kw)


@pytest.fixture
def camera():
    return CameraModel()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    """Print and remember one pass/fail line for the acceptance summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
