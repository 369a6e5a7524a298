"""Threshold sweeps over (tau_lower, tau_upper) pairs and PW-optimal selection.

Threshold values are held as integer hundredths ("ticks") so grid keys are
exact; the default grid is 0.00, 0.04, ..., 1.00 (26 values, 325 pairs).
Pairs are solved as columns of one batched problem, optionally split into
chunks that run in a process pool.  Every column is computed independently,
so chunking and worker count do not change the numbers.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import SelectionError
from .geometry import TargetGeometry
from .metrics import evaluate
from .osmo import osmo_batch
from .penalty import FAMILIES, PenaltyConfig
from .projector import ProjectionGeometry
from .solver import SolveOptions, resolve_step, solve_batch

DEFAULT_TICKS = tuple(range(0, 101, 4))
METHODS = FAMILIES + ("OSMO",)
METRICS = ("pw", "ipdr", "ver")


def tick_value(tick: int) -> float:
    return tick / 100.0


def value_tick(value: float) -> int:
    t = round(value * 100)
    if abs(t - value * 100) > 1e-6:
        raise ValueError(f"threshold {value} is not a multiple of 0.01")
    return int(t)


@dataclass(frozen=True)
class WRule:
    """How the OSPW dead-zone width follows the upper threshold."""

    kind: str = "fixed"
    w: float = 0.0

    def __post_init__(self):
        if self.kind not in ("fixed", "complement"):
            raise ValueError(f"w rule must be 'fixed' or 'complement', got {self.kind!r}")
        if self.kind == "fixed" and not (self.w >= 0 and math.isfinite(self.w)):
            raise ValueError(f"fixed w must be finite and >= 0, got {self.w}")

    @classmethod
    def parse(cls, text: str) -> "WRule":
        """``complement`` or ``fixed:<w>`` (a bare number means fixed)."""
        text = text.strip().lower()
        if text == "complement":
            return cls("complement")
        if text.startswith("fixed:"):
            text = text[6:]
        return cls("fixed", float(text))

    def __str__(self):
        return "complement" if self.kind == "complement" else f"fixed:{self.w:g}"


def apply_w_rule(tau_upper: float, rule: WRule) -> float:
    if rule.kind == "complement":
        return max(1.0 - tau_upper, 0.0)
    return float(rule.w)


@dataclass
class SweepRecord:
    lower_tick: int
    upper_tick: int
    w: float
    status: str = "ok"
    pw: float = math.nan
    ipdr: float = math.nan
    ver: float = math.nan
    max_dose: float = math.nan
    failed_at: int = -1

    @property
    def tau_lower(self) -> float:
        return tick_value(self.lower_tick)

    @property
    def tau_upper(self) -> float:
        return tick_value(self.upper_tick)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class SweepGrid:
    ticks: tuple
    method: str
    geometry: str
    alpha: float = 0.0
    w_rule: str = "fixed:0"
    iters: int = 0
    records: list = field(default_factory=list)

    @property
    def tau_values(self) -> list[float]:
        return [tick_value(t) for t in self.ticks]

    @property
    def n_failed(self) -> int:
        return sum(not r.ok for r in self.records)

    def record(self, tau_lower: float, tau_upper: float) -> SweepRecord:
        key = (value_tick(tau_lower), value_tick(tau_upper))
        for r in self.records:
            if (r.lower_tick, r.upper_tick) == key:
                return r
        raise KeyError(key)

    def matrix(self, metric: str) -> np.ndarray:
        """Dense ``(len(ticks), len(ticks))`` array, rows = lower, NaN where empty."""
        metric = metric.lower()
        if metric not in METRICS + ("max_dose",):
            raise ValueError(f"unknown metric {metric!r}")
        index = {t: i for i, t in enumerate(self.ticks)}
        m = np.full((len(self.ticks), len(self.ticks)), np.nan)
        for r in self.records:
            if r.ok:
                m[index[r.lower_tick], index[r.upper_tick]] = getattr(r, metric)
        return m


def grid_pairs(ticks: Sequence[int]) -> list[tuple[int, int]]:
    ticks = sorted(set(int(t) for t in ticks))
    return [(a, b) for i, a in enumerate(ticks) for b in ticks[i + 1:]]


def _normalise_method(method: str) -> str:
    m = method.upper()
    if m not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return m


def _run_chunk(args):
    geom, pg, method, pairs, w_values, opts, alpha = args
    tl = np.array([tick_value(a) for a, _ in pairs])
    tu = np.array([tick_value(b) for _, b in pairs])
    if method == "OSMO":
        _, doses, failed = osmo_batch(geom, pg, tl, tu, opts.max_iters)
    else:
        configs = [PenaltyConfig(method, a, b, w) for a, b, w in zip(tl, tu, w_values)]
        _, doses, failed = solve_batch(geom, pg, configs, opts)
    out = []
    for j, ((a, b), w) in enumerate(zip(pairs, w_values)):
        rec = SweepRecord(a, b, w)
        if failed[j] >= 0:
            rec.status = "failed"
            rec.failed_at = int(failed[j])
        else:
            rep = evaluate(doses[:, :, j], geom, alpha)
            rec.pw, rec.ipdr, rec.ver, rec.max_dose = rep.pw, rep.ipdr, rep.ver, rep.max_dose
        out.append(rec)
    return out


def run_sweep(geom: TargetGeometry, pg: ProjectionGeometry, method: str, iters: int,
              alpha: float = 0.0, ticks: Optional[Iterable[int]] = None,
              w_rule: WRule = WRule(), opts: Optional[SolveOptions] = None,
              chunk: int = 65, workers: int = 1) -> SweepGrid:
    """Run ``method`` at every threshold pair of the grid.

    ``method`` is one of L2N, OSP, OSPW or OSMO; OSPW takes its width from
    ``w_rule``.  Pairs that diverge or collapse are recorded as failed.
    """
    method = _normalise_method(method)
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if geom.nz != 1:
        raise ValueError("sweeps run on single-slice geometries")
    ticks = tuple(sorted(set(DEFAULT_TICKS if ticks is None else (int(t) for t in ticks))))
    if any(t < 0 or t > 100 for t in ticks):
        raise ValueError("grid ticks must lie in [0, 100]")
    opts = opts or SolveOptions()
    opts = SolveOptions(**{**opts.to_dict(), "max_iters": iters})
    if method != "OSMO":
        opts = SolveOptions(**{**opts.to_dict(), "step": resolve_step(pg, opts)})
    pairs = grid_pairs(ticks)
    if method == "OSPW":
        w_values = [apply_w_rule(tick_value(b), w_rule) for _, b in pairs]
    else:
        w_values = [0.0] * len(pairs)
    chunk = max(1, int(chunk))
    jobs = [(geom, pg, method, pairs[s:s + chunk], w_values[s:s + chunk], opts, alpha)
            for s in range(0, len(pairs), chunk)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    records = [r for part in parts for r in part]
    return SweepGrid(ticks=ticks, method=method, geometry=geom.name, alpha=alpha,
                     w_rule=str(w_rule) if method == "OSPW" else "", iters=iters,
                     records=records)


def select_pw_optimal(grid: SweepGrid, exclude_overdose: bool = True) -> tuple[float, float]:
    """Admissible pair with the largest PW.

    Pairs whose maximum dose over the printable region exceeds 1 are dropped
    unless ``exclude_overdose`` is False.  Ties go to the larger upper
    threshold, then the larger lower threshold.
    """
    cands = [r for r in grid.records
             if r.ok and not (exclude_overdose and r.max_dose > 1.0)]
    if not cands:
        raise SelectionError("no admissible threshold pair in the sweep")
    best = max(cands, key=lambda r: (r.pw, r.upper_tick, r.lower_tick))
    return best.tau_lower, best.tau_upper


def summary(grid: SweepGrid, exclude_overdose: bool = True) -> dict:
    try:
        pair = select_pw_optimal(grid, exclude_overdose)
        pw = grid.record(*pair).pw
    except SelectionError:
        pair, pw = None, None
    return {
        "method": grid.method,
        "geometry": grid.geometry,
        "optimal_pair": list(pair) if pair else None,
        "optimal_pw": pw,
        "n_failed": grid.n_failed,
        "n_records": len(grid.records),
        "exclude_overdose": exclude_overdose,
        "alpha": grid.alpha,
        "w_rule": grid.w_rule,
        "iters": grid.iters,
    }


def export_colormap(grid: SweepGrid, metric: str, path, png_path=None,
                    vmax: Optional[float] = None, vmin: Optional[float] = None) -> Path:
    """Write a dense CSV matrix (rows = lower, columns = upper) and optional PNG.

    Empty cells are blank.  ``vmin``/``vmax`` restrict the PNG colour scale,
    which makes small nonzero values visible.
    """
    path = Path(path)
    m = grid.matrix(metric)
    labels = [f"{tick_value(t):.2f}" for t in grid.ticks]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"{metric.lower()}:lower\\upper"] + labels)
            for i, lab in enumerate(labels):
                w.writerow([lab] + ["" if np.isnan(v) else repr(float(v)) for v in m[i]])
    except OSError as exc:
        raise OSError(f"cannot write colour map {path}: {exc}") from exc
    if png_path is not None:
        _render_png(m, png_path, vmin, vmax)
    return path


def _render_png(m: np.ndarray, path, vmin=None, vmax=None, scale: int = 12):
    from PIL import Image

    finite = m[np.isfinite(m)]
    lo = float(finite.min()) if vmin is None and finite.size else (vmin or 0.0)
    hi = float(finite.max()) if vmax is None and finite.size else (vmax if vmax is not None else 1.0)
    if hi <= lo:
        hi = lo + 1.0
    t = np.clip((m - lo) / (hi - lo), 0.0, 1.0)
    # blue -> white -> red, empty cells grey; origin at the bottom left
    rgb = np.empty(m.shape + (3,), dtype=np.uint8)
    r = np.where(t < 0.5, 2 * t, 1.0)
    g = np.where(t < 0.5, 2 * t, 2 * (1 - t))
    b = np.where(t < 0.5, 1.0, 2 * (1 - t))
    for k, c in enumerate((r, g, b)):
        rgb[..., k] = np.where(np.isfinite(m), np.round(255 * c), 160).astype(np.uint8)
    img = np.flipud(rgb.transpose(1, 0, 2))
    img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    try:
        Image.fromarray(img, "RGB").save(path)
    except OSError as exc:
        raise OSError(f"cannot write colour map image {path}: {exc}") from exc


def write_summary(grid: SweepGrid, path, exclude_overdose: bool = True) -> dict:
    s = summary(grid, exclude_overdose)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(s, fh, indent=2)
    return s


def record_dict(r: SweepRecord) -> dict:
    d = asdict(r)
    d["tau_lower"] = r.tau_lower
    d["tau_upper"] = r.tau_upper
    return d
