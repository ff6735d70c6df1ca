"""Model-independent pose errors, evaluation records and cumulative curves."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .rotation import symmetry_partner

RECORD_HEADER = ["scan_id", "method", "e_te_mm", "e_re_rad", "failed", "icp_confident", "runtime_ms"]
CURVE_HEADER = ["threshold", "fraction"]

TE_GRID = np.round(np.arange(0.0, 50.0 + 1e-9, 0.5), 10)
RE_GRID = np.round(np.arange(0.0, np.pi, 0.01), 10)


def translation_error(t_est, t_gt) -> float:
    return float(np.linalg.norm(np.asarray(t_gt, dtype=np.float64) - np.asarray(t_est, dtype=np.float64)))


def _trace_angle(A: np.ndarray, B: np.ndarray) -> float:
    cos = (np.trace(A @ B.T) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def rotation_error(R_gt, R_est) -> float:
    """Angle of ``R_gt' R_est^-1`` minimized over both symmetric ground truths."""
    R_gt = np.asarray(R_gt, dtype=np.float64)
    R_est = np.asarray(R_est, dtype=np.float64)
    return min(_trace_angle(R_gt, R_est), _trace_angle(symmetry_partner(R_gt), R_est))


@dataclass
class EvalRecord:
    scan_id: str
    method: str
    e_te: float
    e_re: float
    failed: bool = False
    icp_confident: Optional[bool] = None
    runtime_ms: Optional[float] = None

    def __post_init__(self):
        if self.failed:
            self.e_te = math.inf
            self.e_re = math.inf
        elif not (math.isfinite(self.e_te) and math.isfinite(self.e_re)):
            raise ValueError("a non-failed record needs finite errors")

    @classmethod
    def failure(cls, scan_id: str, method: str, **kw) -> "EvalRecord":
        return cls(scan_id, method, math.inf, math.inf, True, **kw)

    def error(self, metric: str) -> float:
        if metric in ("e_te", "e_TE", "te"):
            return self.e_te
        if metric in ("e_re", "e_RE", "re"):
            return self.e_re
        raise KeyError(metric)


def _fmt_float(x: float) -> str:
    return "inf" if math.isinf(x) else repr(float(x))


def _fmt_opt_bool(b: Optional[bool]) -> str:
    return "" if b is None else str(int(b))


def write_records(records: Iterable[EvalRecord], path) -> None:
    rows = sorted(records, key=lambda r: (r.scan_id, r.method))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for r in rows:
            w.writerow([
                r.scan_id,
                r.method,
                _fmt_float(r.e_te),
                _fmt_float(r.e_re),
                int(r.failed),
                _fmt_opt_bool(r.icp_confident),
                "" if r.runtime_ms is None else f"{r.runtime_ms:.3f}",
            ])


def read_records(path) -> list[EvalRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            conf = row["icp_confident"]
            rt = row["runtime_ms"]
            out.append(EvalRecord(
                row["scan_id"],
                row["method"],
                float(row["e_te_mm"]),
                float(row["e_re_rad"]),
                row["failed"] == "1",
                None if conf == "" else conf == "1",
                None if rt == "" else float(rt),
            ))
    return out


@dataclass(frozen=True)
class CumulativeCurve:
    thresholds: np.ndarray
    fractions: np.ndarray


def build_curve(records: Sequence[EvalRecord], metric: str, thresholds=None) -> CumulativeCurve:
    """Fraction of records whose error lies strictly below each threshold.

    Failed records carry infinite error and therefore never count.
    """
    if not records:
        raise ValueError("cannot build a curve from an empty record list")
    if thresholds is None:
        thresholds = TE_GRID if metric in ("e_te", "e_TE", "te") else RE_GRID
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) < 0):
        raise ValueError("thresholds must be ascending")
    errors = np.sort([r.error(metric) for r in records])
    counts = np.searchsorted(errors, thresholds, side="left")
    return CumulativeCurve(thresholds, counts / len(errors))


def write_curve(curve: CumulativeCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for th, fr in zip(curve.thresholds, curve.fractions):
            w.writerow([repr(float(th)), repr(float(fr))])


@dataclass(frozen=True)
class Summary:
    count: int
    failure_rate: float
    mean_te: Optional[float]
    std_te: Optional[float]
    mean_re: Optional[float]
    std_re: Optional[float]


def summarize(records: Sequence[EvalRecord]) -> Summary:
    """Mean and population std per metric over non-failed records."""
    if not records:
        raise ValueError("cannot summarize an empty record list")
    ok = [r for r in records if not r.failed]
    rate = 1.0 - len(ok) / len(records)
    if not ok:
        return Summary(len(records), rate, None, None, None, None)
    te = np.array([r.e_te for r in ok])
    re = np.array([r.e_re for r in ok])
    return Summary(len(records), rate, float(te.mean()), float(te.std()), float(re.mean()), float(re.std()))
