"""Dose-profile metrics: process window, in-part dose range, voxel error rate.

``alpha`` is the percentage trimmed from each end of a distribution, so
``alpha = 0.025`` drops 0.025 % of the voxels at either end.  Percentiles use
linear interpolation between order statistics,
``v[k] + t * (v[k+1] - v[k])`` at position ``p/100 * (n-1) = k + t``, which
makes ``alpha = 0`` reduce exactly to min and max.
"""

from __future__ import annotations

import math

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateGeometryError, ShapeError
from .geometry import TargetGeometry


@dataclass(frozen=True)
class MetricReport:
    pw: float
    ipdr: float
    ver: float
    alpha: float
    n_in: int
    n_out: int
    scope: str = "volume"
    slice: Optional[int] = None
    mean_in: float = float("nan")
    max_dose: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def _check_alpha(alpha: float):
    if not 0.0 <= alpha < 50.0:
        raise ValueError(f"alpha must be in [0, 50), got {alpha}")


def split_dose(dose: np.ndarray, geom: TargetGeometry) -> tuple[np.ndarray, np.ndarray]:
    """In-part and out-of-part dose values (EXT dropped)."""
    dose = np.asarray(dose, dtype=np.float64)
    if dose.ndim == 2:
        dose = dose[:, :, None]
    if dose.shape != geom.labels.shape:
        raise ShapeError(f"dose shape {dose.shape} does not match geometry {geom.labels.shape}")
    return dose[geom.in_mask], dose[geom.out_mask]


def _need(values: np.ndarray, what: str):
    if values.size == 0:
        raise DegenerateGeometryError(f"no {what} voxels")


def percentile(values: np.ndarray, pct: float) -> float:
    """Linear-interpolation percentile (see module docstring)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    pos = pct / 100.0 * (v.size - 1)
    k = int(math.floor(pos))
    t = pos - k
    k1 = min(k + 1, v.size - 1)
    part = np.partition(v, (k, k1)) if k1 != k else np.partition(v, k)
    lo, hi = part[k], part[k1]
    return float(lo + t * (hi - lo))


def pw_values(f_in: np.ndarray, f_out: np.ndarray, alpha: float = 0.0) -> float:
    _check_alpha(alpha)
    _need(f_in, "in-part")
    _need(f_out, "out-of-part")
    return percentile(f_in, alpha) - percentile(f_out, 100.0 - alpha)


def ipdr_values(f_in: np.ndarray, alpha: float = 0.0) -> float:
    _check_alpha(alpha)
    _need(f_in, "in-part")
    lo, hi = percentile(f_in, alpha), percentile(f_in, 100.0 - alpha)
    return float(max(hi - lo, 0.0))


def ver_values(f_in: np.ndarray, f_out: np.ndarray, alpha: float = 0.0) -> float:
    """Fraction of printable voxels that are out-of-part and above the in-part floor."""
    _check_alpha(alpha)
    _need(f_in, "in-part")
    _need(f_out, "out-of-part")
    floor = percentile(f_in, alpha)
    w = int(np.count_nonzero(f_out > floor))
    return w / (f_in.size + f_out.size)


def process_window(dose, geom: TargetGeometry, alpha: float = 0.0) -> float:
    f_in, f_out = split_dose(dose, geom)
    return pw_values(f_in, f_out, alpha)


def in_part_dose_range(dose, geom: TargetGeometry, alpha: float = 0.0) -> float:
    f_in, _ = split_dose(dose, geom)
    return ipdr_values(f_in, alpha)


def voxel_error_rate(dose, geom: TargetGeometry, alpha: float = 0.0) -> float:
    f_in, f_out = split_dose(dose, geom)
    return ver_values(f_in, f_out, alpha)


def report_values(f_in: np.ndarray, f_out: np.ndarray, alpha: float = 0.0,
                  scope: str = "volume", slice_index: Optional[int] = None) -> MetricReport:
    return MetricReport(
        pw=pw_values(f_in, f_out, alpha),
        ipdr=ipdr_values(f_in, alpha),
        ver=ver_values(f_in, f_out, alpha),
        alpha=alpha,
        n_in=int(f_in.size),
        n_out=int(f_out.size),
        scope=scope,
        slice=slice_index,
        mean_in=float(f_in.mean()),
        max_dose=float(max(f_in.max(), f_out.max())),
    )


def evaluate(dose, geom: TargetGeometry, alpha: float = 0.0) -> MetricReport:
    """Whole-volume report pooling every slice."""
    f_in, f_out = split_dose(dose, geom)
    return report_values(f_in, f_out, alpha)


def evaluate_slices(dose, geom: TargetGeometry, alpha: float = 0.0) -> list[MetricReport]:
    """One report per slice, restricting the label sets to that slice."""
    dose = np.asarray(dose, dtype=np.float64)
    if dose.ndim == 2:
        dose = dose[:, :, None]
    reports = []
    for z in range(geom.nz):
        d = dose[:, :, z]
        f_in = d[geom.in_mask[:, :, z]]
        f_out = d[geom.out_mask[:, :, z]]
        reports.append(report_values(f_in, f_out, alpha, scope="slice", slice_index=z))
    return reports


def histogram(dose, geom: TargetGeometry, bins: int = 100):
    """Fixed-width in-part and out-of-part histograms sharing one bin range.

    The range runs from 0 (or the smallest dose, if negative) to the largest
    printable-region dose.  Returns ``(in_counts, out_counts, edges)``.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    f_in, f_out = split_dose(dose, geom)
    _need(f_in, "in-part")
    _need(f_out, "out-of-part")
    hi = max(f_in.max(), f_out.max())
    lo = min(0.0, f_in.min(), f_out.min())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    in_counts, _ = np.histogram(f_in, bins=edges)
    out_counts, _ = np.histogram(f_out, bins=edges)
    return in_counts, out_counts, edges
