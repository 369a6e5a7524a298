"""Elementwise dose penalties and the assembled planning objective.

Every family is a squared residual ``p(x) = r(x)**2`` with a piecewise-linear
residual, so ``dp = 2 r`` is continuous and 2-Lipschitz:

* out-of-part:  ``r = max(x - tau_lower, 0)``, plus ``min(x - tau_lower, 0)``
  for the two-sided L2N form.
* in-part:      ``r = min(x - tau_upper, 0) + max(x - tau_upper - w, 0)``
  with ``w = 0`` for L2N, ``w = inf`` for OSP and the configured width for
  OSPW.

Writing the families this way lets a batch of configurations (one per
column of a sinogram stack) share a single vectorised evaluation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ShapeError
from .geometry import TargetGeometry
from .projector import ProjectionGeometry, get_projector

FAMILIES = ("L2N", "OSP", "OSPW")


@dataclass(frozen=True)
class PenaltyConfig:
    family: str
    tau_lower: float
    tau_upper: float
    w: float = 0.0

    def __post_init__(self):
        fam = self.family.upper()
        if fam not in FAMILIES:
            raise ValueError(f"unknown penalty family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        tl, tu = float(self.tau_lower), float(self.tau_upper)
        if not (0.0 <= tl < tu <= 1.0):
            raise ValueError(
                f"thresholds must satisfy 0 <= tau_lower < tau_upper <= 1, got {tl}, {tu}"
            )
        if not (self.w >= 0.0 and math.isfinite(self.w)):
            raise ValueError(f"w must be a finite value >= 0, got {self.w}")

    @property
    def in_width(self) -> float:
        """Width of the in-part dead zone above ``tau_upper``."""
        if self.family == "L2N":
            return 0.0
        if self.family == "OSP":
            return math.inf
        return float(self.w)

    @property
    def two_sided_out(self) -> bool:
        return self.family == "L2N"

    def label(self) -> str:
        if self.family == "OSPW":
            return f"OSPW(w={self.w:g})"
        return self.family

    def to_dict(self) -> dict:
        return asdict(self)


class PenaltyBatch:
    """Column-wise penalty parameters for a stack of configurations."""

    def __init__(self, configs: Sequence[PenaltyConfig]):
        self.configs = list(configs)
        self.tau_lower = np.array([c.tau_lower for c in configs], dtype=np.float64)
        self.tau_upper = np.array([c.tau_upper for c in configs], dtype=np.float64)
        self.width = np.array([c.in_width for c in configs], dtype=np.float64)
        self.two_sided = np.array([c.two_sided_out for c in configs], dtype=bool)

    def __len__(self):
        return len(self.configs)

    def residual_out(self, x: np.ndarray) -> np.ndarray:
        d = x - self.tau_lower
        return np.where(self.two_sided | (d > 0.0), d, 0.0)

    def residual_in(self, x: np.ndarray) -> np.ndarray:
        d = x - self.tau_upper
        return np.minimum(d, 0.0) + np.maximum(d - self.width, 0.0)

    def residual(self, f: np.ndarray, in_mask: np.ndarray, out_mask: np.ndarray) -> np.ndarray:
        """Residual of every voxel; zero where neither mask is set."""
        r = np.where(in_mask, self.residual_in(f), 0.0)
        return np.where(out_mask, self.residual_out(f), r)


def _as_batch(cfg: Union[PenaltyConfig, PenaltyBatch]) -> PenaltyBatch:
    return cfg if isinstance(cfg, PenaltyBatch) else PenaltyBatch([cfg])


def p_out(x, cfg: PenaltyConfig):
    r = _as_batch(cfg).residual_out(np.asarray(x, dtype=np.float64))
    return r * r


def dp_out(x, cfg: PenaltyConfig):
    return 2.0 * _as_batch(cfg).residual_out(np.asarray(x, dtype=np.float64))


def p_in(x, cfg: PenaltyConfig):
    r = _as_batch(cfg).residual_in(np.asarray(x, dtype=np.float64))
    return r * r


def dp_in(x, cfg: PenaltyConfig):
    return 2.0 * _as_batch(cfg).residual_in(np.asarray(x, dtype=np.float64))


def _check(g: np.ndarray, geom: TargetGeometry, pg: ProjectionGeometry) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if geom.nx != pg.nx:
        raise ShapeError(f"geometry nx={geom.nx} differs from projection nx={pg.nx}")
    if g.ndim == 2:
        g = g[:, :, None]
    if g.shape != pg.sino_shape + (geom.nz,):
        raise ShapeError(f"sinogram shape {g.shape} does not match {pg.sino_shape + (geom.nz,)}")
    return g


def dose_residual(g, geom: TargetGeometry, pg: ProjectionGeometry, cfg: PenaltyConfig):
    f = get_projector(pg).backward(_check(g, geom, pg))
    return _as_batch(cfg).residual(f, geom.in_mask, geom.out_mask)


def objective(g, geom: TargetGeometry, pg: ProjectionGeometry, cfg: PenaltyConfig) -> float:
    """Sum of out-of-part and in-part penalties of the dose ``A^T g``."""
    r = dose_residual(g, geom, pg, cfg)
    return float(np.sum(r * r))


def gradient(g, geom: TargetGeometry, pg: ProjectionGeometry, cfg: PenaltyConfig) -> np.ndarray:
    """``A`` applied to the voxelwise penalty derivative; same shape as ``g``."""
    squeeze = np.ndim(g) == 2
    r = dose_residual(g, geom, pg, cfg)
    out = get_projector(pg).forward(2.0 * r)
    return out[:, :, 0] if squeeze else out
