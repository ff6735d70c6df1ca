"""Six-degree-of-freedom pose estimation of cuboid bins in structured scans."""

from .analytic import AnalyticParams, FitReport, estimate_pose_analytic
from .icp import IcpParams, IcpResult, refine_icp
from .metrics import EvalRecord, rotation_error, summarize, translation_error
from .rotation import (
    LossConfig, RotationVectors, canonicalize_symmetry, joint_loss, joint_loss_gradient,
    rotation_from_vectors, vectors_from_rotation,
)
from .scan import BinSpec, Pose, StructuredScan, load_pose, load_scan, save_pose, save_scan
from .synth import CameraModel, SceneSpec, SuiteConfig, generate_suite, render_scan

__version__ = "0.1.0"
