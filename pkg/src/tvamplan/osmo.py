"""Object-space model optimisation baseline.

A model image starts as the binary target.  Every iteration the model is
forward projected, sinogram values below the minimum projection value are
raised to it, the result is back-projected and the dose normalised by its
maximum.  The model is then corrected where the normalised dose violates the
thresholds:

* out-of-part voxels with dose above ``tau_lower`` lose ``dose - tau_lower``;
* in-part voxels with dose below ``tau_upper`` gain ``tau_upper - dose``.

Thresholds are therefore relative to the maximum dose.  With the default
minimum projection value of 0, low threshold pairs drive the model negative
until the clamped sinogram is identically zero; that run cannot continue and
is reported as a collapse.

Choices where the method leaves room:

* external voxels are not part of the model correction (their model value
  stays 0) but do take part in the maximum used for normalisation;
* the correction step has unit gain;
* the returned plan is the last clamped sinogram as is, so it respects the
  minimum projection value; the dose is its back-projection divided by the
  maximum.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import CollapseError, DegenerateGeometryError, ShapeError
from .geometry import TargetGeometry
from .projector import ProjectionGeometry, get_projector
from .solver import SolveResult, ramp_filter


@dataclass(frozen=True)
class OsmoOptions:
    tau_lower: float = 0.85
    tau_upper: float = 0.90
    max_iters: int = 1000
    min_projection_value: float = 0.0
    filtered: bool = False

    def __post_init__(self):
        if not (0.0 <= self.tau_lower < self.tau_upper <= 1.0):
            raise ValueError(
                "thresholds must satisfy 0 <= tau_lower < tau_upper <= 1, "
                f"got {self.tau_lower}, {self.tau_upper}"
            )
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.min_projection_value < 0:
            raise ValueError("min_projection_value must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def osmo_batch(geom: TargetGeometry, pg: ProjectionGeometry, tau_lower: np.ndarray,
               tau_upper: np.ndarray, max_iters: int, min_projection_value: float = 0.0,
               filtered: bool = False):
    """Run OSMO for several threshold pairs (or slices) side by side.

    ``geom`` has either one slice (shared by every column) or one slice per
    column.  Returns ``(plans, doses, collapsed_at)``; collapsed columns keep
    zeros and ``collapsed_at[j]`` names the iteration, else -1.
    """
    proj = get_projector(pg)
    op = proj.full
    nx = pg.nx
    tau_lower = np.atleast_1d(np.asarray(tau_lower, dtype=np.float64))
    tau_upper = np.atleast_1d(np.asarray(tau_upper, dtype=np.float64))
    nb = max(tau_lower.size, geom.nz)
    tau_lower = np.broadcast_to(tau_lower, (nb,))
    tau_upper = np.broadcast_to(tau_upper, (nb,))

    in_m = geom.in_mask.reshape(nx * nx, geom.nz)[op.pixels]
    out_m = geom.out_mask.reshape(nx * nx, geom.nz)[op.pixels]
    in_m = np.broadcast_to(in_m, (op.n_pixels, nb))
    out_m = np.broadcast_to(out_m, (op.n_pixels, nb))

    model = in_m.astype(np.float64)
    collapsed_at = np.full(nb, -1, dtype=np.int64)
    alive = np.ones(nb, dtype=bool)
    g = np.zeros(pg.sino_shape + (nb,))
    f = np.zeros((op.n_pixels, nb))
    for k in range(1, max_iters + 1):
        op.fwd(model, out=g)
        if filtered:
            g = ramp_filter(g)
        np.maximum(g, min_projection_value, out=g)
        g[:, :, ~alive] = 0.0
        peak_g = g.max(axis=(0, 1))
        newly = alive & (peak_g <= 0.0)
        collapsed_at[newly] = k
        alive &= ~newly
        g[:, :, ~alive] = 0.0
        op.back(g, out=f)
        if k == max_iters or not alive.any():
            break
        peak = f.max(axis=0)
        fn = f / np.where(peak > 0, peak, 1.0)
        over = out_m & (fn > tau_lower)
        under = in_m & (fn < tau_upper)
        model -= np.where(over, fn - tau_lower, 0.0)
        model += np.where(under, tau_upper - fn, 0.0)
        model[:, ~alive] = 0.0
    peak = f.max(axis=0)
    dose_flat = np.where(alive & (peak > 0), f / np.where(peak > 0, peak, 1.0), 0.0)
    plans = g
    doses = np.empty((nx * nx, nb))
    doses[op.pixels] = dose_flat
    return plans, doses.reshape(nx, nx, nb), collapsed_at


def solve_osmo(geom: TargetGeometry, pg: ProjectionGeometry,
               opts: Optional[OsmoOptions] = None) -> SolveResult:
    """OSMO on a slice or volume; raises :class:`CollapseError` on collapse."""
    opts = opts or OsmoOptions()
    if geom.nx != pg.nx:
        raise ShapeError(f"geometry nx={geom.nx} differs from projection nx={pg.nx}")
    bad = geom.degenerate_slices()
    if bad:
        raise DegenerateGeometryError(f"degenerate slices: {bad}", slices=bad)
    plans, doses, collapsed = osmo_batch(
        geom, pg, opts.tau_lower, opts.tau_upper, opts.max_iters,
        opts.min_projection_value, opts.filtered,
    )
    if (collapsed >= 0).any():
        raise CollapseError(int(collapsed[collapsed >= 0].min()))
    return SolveResult(plan=plans, dose=doses, history=[], iters_run=opts.max_iters)


def solve_osmo_pairs(geom: TargetGeometry, pg: ProjectionGeometry,
                     pairs: Sequence[tuple[float, float]], max_iters: int,
                     min_projection_value: float = 0.0, filtered: bool = False):
    tl = np.array([p[0] for p in pairs])
    tu = np.array([p[1] for p in pairs])
    return osmo_batch(geom, pg, tl, tu, max_iters, min_projection_value, filtered)
