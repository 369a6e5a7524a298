"""Projected FISTA for non-negative illumination plans.

The solver works on a stack of independent problems that share one
projection geometry: the columns of the trailing batch axis are either the
slices of a volume or the threshold pairs of a sweep.  Only voxels inside the
inscribed circle are projected during iterations, since external voxels carry
no penalty; the full dose grid is back-projected once at the end.

Because the back-projection is linear, the dose at the extrapolated point
``y = x + beta (x - x_prev)`` is formed from the doses of ``x`` and
``x_prev``.  Each iteration therefore costs one forward and one back
projection while still giving the objective at every iterate ``x``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DegenerateGeometryError, DivergenceError, ShapeError
from .geometry import TargetGeometry, inscribed_mask
from .penalty import PenaltyBatch, PenaltyConfig
from .projector import ProjectionGeometry, get_projector, operator_norm

log = logging.getLogger(__name__)

STEP_SAFETY = 1.05
INITS = ("zeros", "clipped_fbp")


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 1000
    step: Union[float, str] = "auto"
    init: str = "zeros"
    record_every: int = 10
    seed: int = 0
    norm_iters: int = 100
    workers: int = 1

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if isinstance(self.step, str):
            if self.step != "auto":
                raise ValueError(f"step must be 'auto' or a positive number, got {self.step!r}")
        elif not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveResult:
    """Plan ``(n_angles, n_bins, nz)`` and dose ``(nx, nx, nz)``."""

    plan: np.ndarray
    dose: np.ndarray
    history: list = field(default_factory=list)
    iters_run: int = 0

    @property
    def final_objective(self) -> float:
        return self.history[-1][1] if self.history else math.nan


@lru_cache(maxsize=16)
def lipschitz(pg: ProjectionGeometry, norm_iters: int = 100, seed: int = 0) -> float:
    """Gradient Lipschitz bound ``2 * ||A||^2`` with a safety margin."""
    return 2.0 * STEP_SAFETY * operator_norm(pg, norm_iters, seed)


def resolve_step(pg: ProjectionGeometry, opts: SolveOptions) -> float:
    if opts.step == "auto":
        return 1.0 / lipschitz(pg, opts.norm_iters, opts.seed)
    return float(opts.step)


def ramp_filter(sino: np.ndarray) -> np.ndarray:
    """Ram-Lak filter along the detector axis (axis 1)."""
    n = sino.shape[1]
    size = 1 << int(math.ceil(math.log2(2 * n)))
    m = np.arange(size)
    m = np.where(m > size // 2, m - size, m)
    h = np.zeros(size)
    h[0] = 0.25
    odd = m % 2 == 1
    h[odd] = -1.0 / (np.pi * m[odd]) ** 2
    resp = np.real(np.fft.fft(h))
    spec = np.fft.fft(sino, n=size, axis=1) * resp[None, :, None]
    return np.real(np.fft.ifft(spec, axis=1))[:, :n, :]


def clipped_fbp(geom: TargetGeometry, pg: ProjectionGeometry, tau_upper: float) -> np.ndarray:
    """Ramp-filtered projection of the target with negatives clipped.

    Each slice is scaled so the mean in-part dose equals ``tau_upper``.
    """
    proj = get_projector(pg)
    target = geom.in_mask.astype(np.float64)
    g = np.maximum(ramp_filter(proj.forward(target)), 0.0)
    f = proj.backward(g)
    inm = geom.in_mask
    for z in range(geom.nz):
        mean_in = f[:, :, z][inm[:, :, z]].mean()
        if mean_in > 0:
            g[:, :, z] *= tau_upper / mean_in
    return g


def fista_batch(op, in_mask: np.ndarray, out_mask: np.ndarray, penalties: PenaltyBatch,
                step: float, max_iters: int, x0: np.ndarray, record_every: int = 10):
    """Run projected FISTA on every column of ``x0`` simultaneously.

    ``in_mask``/``out_mask`` are ``(op.n_pixels, nb)`` (or broadcastable)
    booleans over the operator's voxels.  Returns ``(x, history, failed_at)``
    where ``history`` holds ``(iteration, per-column objectives)`` and
    ``failed_at[j]`` is the first iteration at which column ``j`` became
    non-finite, or -1.
    """
    nb = x0.shape[2]
    x = np.maximum(x0, 0.0)
    fx = op.back(x)
    y = x.copy()
    fy = fx.copy()
    x_new = np.empty_like(x)
    fx_new = np.empty_like(fx)
    grad = np.empty_like(x)
    t = 1.0
    failed_at = np.full(nb, -1, dtype=np.int64)

    def column_objective(f):
        r = penalties.residual(f, in_mask, out_mask)
        return np.einsum("pj,pj->j", r, r)

    obj = column_objective(fx)
    history = [(0, obj)]
    # overflow is detected through the objective and reported per column
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, max_iters + 1):
            r = penalties.residual(fy, in_mask, out_mask)
            r *= 2.0
            op.fwd(r, out=grad)
            np.multiply(grad, -step, out=x_new)
            x_new += y
            np.maximum(x_new, 0.0, out=x_new)
            op.back(x_new, out=fx_new)
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            # y = x_new + beta (x_new - x), same for the doses
            np.subtract(x_new, x, out=y)
            y *= beta
            y += x_new
            np.subtract(fx_new, fx, out=fy)
            fy *= beta
            fy += fx_new
            x, x_new = x_new, x
            fx, fx_new = fx_new, fx
            t = t_new

            obj = column_objective(fx)
            bad = ~np.isfinite(obj) & (failed_at < 0)
            failed_at[bad] = k
            if k % record_every == 0 or k == max_iters:
                history.append((k, obj))
    return x, history, failed_at


def _support_masks(geom: TargetGeometry, op) -> tuple[np.ndarray, np.ndarray]:
    nx = geom.nx
    flat_in = geom.in_mask.reshape(nx * nx, geom.nz)[op.pixels]
    flat_out = geom.out_mask.reshape(nx * nx, geom.nz)[op.pixels]
    return flat_in, flat_out


def _check_inputs(geom: TargetGeometry, pg: ProjectionGeometry):
    if geom.nx != pg.nx:
        raise ShapeError(f"geometry nx={geom.nx} differs from projection nx={pg.nx}")
    bad = geom.degenerate_slices()
    if bad:
        raise DegenerateGeometryError(
            f"cannot plan: slices without in-part or out-of-part voxels: {bad}", slices=bad
        )


def _initial_plan(geom, pg, cfg_tau_upper, opts) -> np.ndarray:
    if opts.init == "zeros":
        return np.zeros(pg.sino_shape + (geom.nz,))
    return clipped_fbp(geom, pg, cfg_tau_upper)


def solve(geom: TargetGeometry, pg: ProjectionGeometry, cfg: PenaltyConfig,
          opts: Optional[SolveOptions] = None) -> SolveResult:
    """Minimise the penalty objective over non-negative plans.

    Runs exactly ``opts.max_iters`` iterations.  Multi-slice geometries are
    solved as independent slices sharing one step size.
    """
    opts = opts or SolveOptions()
    _check_inputs(geom, pg)
    proj = get_projector(pg)
    op = proj.restrict(inscribed_mask(pg.nx))
    in_m, out_m = _support_masks(geom, op)
    step = resolve_step(pg, opts)
    x0 = _initial_plan(geom, pg, cfg.tau_upper, opts)
    pen = PenaltyBatch([cfg])
    x, hist, failed_at = fista_batch(op, in_m, out_m, pen, step, opts.max_iters, x0,
                                     opts.record_every)
    if (failed_at >= 0).any():
        raise DivergenceError(int(failed_at[failed_at >= 0].min()))
    history = [(k, float(np.sum(o))) for k, o in hist]
    dose = proj.backward(x)
    return SolveResult(plan=x, dose=dose, history=history, iters_run=opts.max_iters)


def _solve_chunk(args):
    geom, pg, cfg, opts = args
    return solve(geom, pg, cfg, opts)


def solve_volume(geom: TargetGeometry, pg: ProjectionGeometry, cfg: PenaltyConfig,
                 opts: Optional[SolveOptions] = None, chunk: int = 16) -> SolveResult:
    """Slice-independent planning of a volume.

    Slices are grouped into chunks of ``chunk`` slices; with
    ``opts.workers > 1`` the chunks run in a process pool.  Every slice is a
    separate column of the batched solver, so the result does not depend on
    the chunking or the worker count.
    """
    opts = opts or SolveOptions()
    _check_inputs(geom, pg)
    # share one step size across chunks
    opts = SolveOptions(**{**opts.to_dict(), "step": resolve_step(pg, opts)})
    starts = list(range(0, geom.nz, chunk))
    jobs = [(geom.select_slices(range(s, min(s + chunk, geom.nz))), pg, cfg, opts)
            for s in starts]
    if opts.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=opts.workers) as pool:
            parts = list(pool.map(_solve_chunk, jobs))
    else:
        parts = [_solve_chunk(j) for j in jobs]
    plan = np.concatenate([p.plan for p in parts], axis=2)
    dose = np.concatenate([p.dose for p in parts], axis=2)
    history = [(k, float(sum(p.history[i][1] for p in parts)))
               for i, (k, _) in enumerate(parts[0].history)]
    return SolveResult(plan=plan, dose=dose, history=history, iters_run=opts.max_iters)


def solve_batch(geom: TargetGeometry, pg: ProjectionGeometry, configs: Sequence[PenaltyConfig],
                opts: Optional[SolveOptions] = None):
    """Solve one 2D geometry for many penalty configurations at once.

    Returns ``(plans, doses, failed_at)`` with the configuration index on the
    last axis.
    """
    opts = opts or SolveOptions()
    if geom.nz != 1:
        raise ShapeError("solve_batch expects a single-slice geometry")
    _check_inputs(geom, pg)
    proj = get_projector(pg)
    op = proj.restrict(inscribed_mask(pg.nx))
    in_m, out_m = _support_masks(geom, op)
    step = resolve_step(pg, opts)
    nb = len(configs)
    if opts.init == "zeros":
        x0 = np.zeros(pg.sino_shape + (nb,))
    else:
        x0 = np.concatenate([clipped_fbp(geom, pg, c.tau_upper) for c in configs], axis=2)
    pen = PenaltyBatch(configs)
    x, _, failed_at = fista_batch(op, in_m, out_m, pen, step, opts.max_iters, x0,
                                  record_every=max(opts.max_iters, 1))
    return x, proj.backward(x), failed_at
