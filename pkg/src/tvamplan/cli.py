"""Command-line entry point.

Subcommands: ``plan``, ``sweep``, ``compare``, ``metrics``, ``gen-geometry``.
Every option can come from a JSON config file (``--config``); flags given on
the command line override file values.  Each run writes the fully resolved
configuration to its output directory so it can be replayed with
``--config <out>/config.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import io as aio
from .errors import (
    ArtifactError,
    CollapseError,
    DegenerateGeometryError,
    DivergenceError,
    SelectionError,
    ShapeError,
)
from .geometry import (
    TargetGeometry,
    load_target,
    make_disk,
    make_dogbones,
    make_ellipses,
    make_gyroid,
    make_resolution_target,
)
from .metrics import evaluate, evaluate_slices, histogram
from .osmo import OsmoOptions, solve_osmo
from .penalty import PenaltyConfig
from .projector import ProjectionGeometry
from .solver import SolveOptions, solve_volume
from .sweep import WRule, export_colormap, run_sweep, value_tick, write_summary

log = logging.getLogger("tvamplan")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
GEOMETRIES = ("disk", "ellipses", "dogbones", "resolution", "gyroid", "file")
METHODS = ("l2n", "osp", "ospw", "osmo")
DEFAULT_TAUS = {"osmo": (0.85, 0.90)}
PENALTY_TAUS = (0.70, 0.90)
CONFIG_NAME = "config.json"


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class RunConfig:
    # geometry
    geometry: str = "disk"
    nx: int = 128
    nz: int = 1
    radius_fraction: float = 0.5
    cells: int = 2
    solid_fraction: float = 0.3
    geometry_path: Optional[str] = None
    threshold: float = 0.5
    # projection
    n_angles: int = 360
    n_bins: Optional[int] = None
    angle_offset: float = 0.0
    # method
    method: str = "ospw"
    tau_lower: Optional[float] = None
    tau_upper: Optional[float] = None
    w: float = 0.0
    min_projection_value: float = 0.0
    # solver
    iters: int = 1000
    step: str = "auto"
    init: str = "zeros"
    record_every: int = 10
    seed: int = 0
    norm_iters: int = 100
    workers: int = 1
    # evaluation and output
    alpha: float = 0.0
    bins: int = 100
    out: str = "out"
    # sweep
    grid: Optional[list] = None
    w_rule: Optional[str] = None
    exclude_overdose: bool = True
    chunk: int = 65
    ver_vmax: Optional[float] = None
    png: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> dict:
        """Everything that affects numbers (the output directory does not)."""
        d = self.to_dict()
        d.pop("out")
        return d


FIELD_NAMES = {f.name for f in fields(RunConfig)}


def _problem_list(cfg: RunConfig, command: str) -> list[str]:
    p = []
    if cfg.geometry not in GEOMETRIES:
        p.append(f"geometry must be one of {GEOMETRIES}, got {cfg.geometry!r}")
    if cfg.geometry == "file" and not cfg.geometry_path:
        p.append("geometry 'file' needs geometry_path")
    if cfg.nx < 8:
        p.append(f"nx must be >= 8, got {cfg.nx}")
    if cfg.nz < 1:
        p.append(f"nz must be >= 1, got {cfg.nz}")
    if not 0 < cfg.radius_fraction < 1:
        p.append(f"radius_fraction must be in (0, 1), got {cfg.radius_fraction}")
    if not 0 < cfg.solid_fraction < 1:
        p.append(f"solid_fraction must be in (0, 1), got {cfg.solid_fraction}")
    if cfg.cells < 1:
        p.append(f"cells must be >= 1, got {cfg.cells}")
    if cfg.n_angles < 1:
        p.append(f"n_angles must be >= 1, got {cfg.n_angles}")
    if cfg.n_bins is not None and cfg.n_bins < 1:
        p.append(f"n_bins must be >= 1, got {cfg.n_bins}")
    if cfg.method not in METHODS:
        p.append(f"method must be one of {METHODS}, got {cfg.method!r}")
    tl, tu = cfg.tau_lower, cfg.tau_upper
    if tl is not None and tu is not None and not (0.0 <= tl < tu <= 1.0):
        p.append(f"thresholds must satisfy 0 <= tau_lower < tau_upper <= 1, got {tl}, {tu}")
    if not (cfg.w >= 0 and math.isfinite(cfg.w)):
        p.append(f"w must be finite and >= 0, got {cfg.w}")
    if cfg.min_projection_value < 0:
        p.append("min_projection_value must be >= 0")
    if cfg.iters < (1 if command == "sweep" else 0):
        p.append(f"iters must be >= {1 if command == 'sweep' else 0}, got {cfg.iters}")
    if cfg.method == "osmo" and cfg.iters < 1:
        p.append("osmo needs iters >= 1")
    if cfg.step != "auto":
        try:
            if not float(cfg.step) > 0:
                p.append(f"step must be positive or 'auto', got {cfg.step}")
        except ValueError:
            p.append(f"step must be positive or 'auto', got {cfg.step!r}")
    if cfg.init not in ("zeros", "clipped_fbp"):
        p.append(f"init must be 'zeros' or 'clipped_fbp', got {cfg.init!r}")
    if cfg.record_every < 1:
        p.append("record_every must be >= 1")
    if cfg.norm_iters < 10:
        p.append("norm_iters must be >= 10")
    if cfg.workers < 1:
        p.append("workers must be >= 1")
    if not 0 <= cfg.alpha < 50:
        p.append(f"alpha must be in [0, 50), got {cfg.alpha}")
    if cfg.bins < 2:
        p.append("bins must be >= 2")
    if cfg.chunk < 1:
        p.append("chunk must be >= 1")
    if cfg.grid is not None:
        try:
            ticks = [value_tick(float(v)) for v in cfg.grid]
            if len(set(ticks)) < 2 or min(ticks) < 0 or max(ticks) > 100:
                p.append("grid needs at least two distinct values in [0, 1]")
        except (TypeError, ValueError) as exc:
            p.append(f"grid values must be multiples of 0.01: {exc}")
    if cfg.w_rule is not None:
        try:
            WRule.parse(cfg.w_rule)
        except ValueError as exc:
            p.append(f"w_rule: {exc}")
    if command == "sweep" and cfg.nz != 1:
        p.append("sweep runs on single-slice geometries (nz = 1)")
    return p


def resolve(file_values: dict, flag_values: dict, command: str = "plan") -> RunConfig:
    """Merge defaults, config-file values and flags, then validate."""
    merged = {}
    unknown = sorted(set(file_values) - FIELD_NAMES)
    if unknown:
        raise ConfigError([f"unknown config keys: {unknown}"])
    merged.update(file_values)
    merged.update(flag_values)
    cfg = RunConfig(**merged)
    cfg.method = str(cfg.method).lower()
    cfg.geometry = str(cfg.geometry).lower()
    cfg.step = str(cfg.step)
    lo, hi = DEFAULT_TAUS.get(cfg.method, PENALTY_TAUS)
    if cfg.tau_lower is None:
        cfg.tau_lower = lo
    if cfg.tau_upper is None:
        cfg.tau_upper = hi
    if cfg.grid is not None:
        cfg.grid = [float(v) for v in cfg.grid]
    problems = _problem_list(cfg, command)
    if problems:
        raise ConfigError(problems)
    return cfg


# builders

def build_geometry(cfg: RunConfig) -> TargetGeometry:
    g = cfg.geometry
    if g == "disk":
        return make_disk(cfg.nx, cfg.radius_fraction)
    if g == "ellipses":
        return make_ellipses(cfg.nx)
    if g == "dogbones":
        return make_dogbones(cfg.nx)
    if g == "resolution":
        return make_resolution_target(cfg.nx)
    if g == "gyroid":
        return make_gyroid(cfg.nx, cfg.nz, cfg.cells, cfg.solid_fraction)
    path = Path(cfg.geometry_path)
    if path.suffix == ".u8" or aio.sidecar_path(path).exists() and _is_artifact(path):
        return aio.load_geometry(path).validate()
    return load_target(path, cfg.threshold)


def _is_artifact(path: Path) -> bool:
    try:
        return aio.read_header(path).kind == "geometry"
    except Exception:
        return False


def build_projection(cfg: RunConfig, nx: int) -> ProjectionGeometry:
    return ProjectionGeometry(nx, cfg.n_angles, cfg.n_bins, cfg.angle_offset)


def solve_options(cfg: RunConfig) -> SolveOptions:
    step = "auto" if cfg.step == "auto" else float(cfg.step)
    return SolveOptions(max_iters=cfg.iters, step=step, init=cfg.init,
                        record_every=cfg.record_every, seed=cfg.seed,
                        norm_iters=cfg.norm_iters, workers=cfg.workers)


def method_label(cfg: RunConfig) -> str:
    if cfg.method == "ospw":
        return f"OSPW(w={cfg.w:g})"
    return cfg.method.upper()


def run_method(cfg: RunConfig, geom: TargetGeometry, pg: ProjectionGeometry):
    if cfg.method == "osmo":
        opts = OsmoOptions(cfg.tau_lower, cfg.tau_upper, cfg.iters, cfg.min_projection_value)
        return solve_osmo(geom, pg, opts)
    pen = PenaltyConfig(cfg.method.upper(), cfg.tau_lower, cfg.tau_upper,
                        cfg.w if cfg.method == "ospw" else 0.0)
    return solve_volume(geom, pg, pen, solve_options(cfg))


def metric_rows(cfg: RunConfig, geom: TargetGeometry, dose: np.ndarray, label: str) -> list[dict]:
    w = cfg.w if cfg.method == "ospw" else 0.0
    reports = [evaluate(dose, geom, cfg.alpha)]
    if geom.nz > 1:
        reports += evaluate_slices(dose, geom, cfg.alpha)
    return [aio.metric_row(r, geom.name, label, cfg.tau_lower, cfg.tau_upper, w) for r in reports]


def _summary_line(label: str, row: dict) -> str:
    return (f"{label} tau=({row['tau_lower']:.2f},{row['tau_upper']:.2f}) "
            f"PW={row['pw']:.4f} IPDR={row['ipdr']:.4f} VER={row['ver']:.4g} "
            f"max={row['max_dose']:.4f}")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_config(cfg: RunConfig, out: Path, command: str):
    d = {"command": command, "tool_version": __version__, **cfg.to_dict()}
    with open(out / CONFIG_NAME, "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=2)


def _prov(cfg: RunConfig) -> dict:
    return aio.provenance(method_label(cfg), cfg.fingerprint())


# commands

def cmd_plan(cfg: RunConfig) -> int:
    geom = build_geometry(cfg)
    pg = build_projection(cfg, geom.nx)
    out = _out_dir(cfg)
    write_config(cfg, out, "plan")
    res = run_method(cfg, geom, pg)
    prov = _prov(cfg)
    label = method_label(cfg)
    aio.save_sinogram(out / "plan.f32", res.plan, pg, prov)
    aio.save_dose(out / "dose.f32", res.dose, pg, prov)
    aio.save_history(out / "history.csv", res.history, prov)
    rows = metric_rows(cfg, geom, res.dose, label)
    aio.save_metrics(out / "metrics.csv", rows, prov)
    aio.save_histogram(out / "histogram.csv", *histogram(res.dose, geom, cfg.bins), prov)
    print(_summary_line(label, rows[0]))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    geom = build_geometry(cfg)
    pg = build_projection(cfg, geom.nx)
    out = _out_dir(cfg)
    write_config(cfg, out, "sweep")
    ticks = None if cfg.grid is None else [value_tick(v) for v in cfg.grid]
    rule = WRule.parse(cfg.w_rule) if cfg.w_rule else WRule("fixed", cfg.w)
    grid = run_sweep(geom, pg, cfg.method.upper(), cfg.iters, cfg.alpha, ticks, rule,
                     solve_options(cfg), chunk=cfg.chunk, workers=cfg.workers)
    aio.save_sweep(out / "sweep.csv", grid, _prov(cfg))
    for metric in ("pw", "ipdr", "ver"):
        vmax = cfg.ver_vmax if metric == "ver" else None
        png = out / f"{metric}.png" if cfg.png else None
        export_colormap(grid, metric, out / f"{metric}.csv", png, vmax=vmax)
    s = write_summary(grid, out / "summary.json", cfg.exclude_overdose)
    pair = s["optimal_pair"]
    if pair is None:
        print(f"{grid.method}: {len(grid.records)} pairs, no admissible pair, "
              f"{s['n_failed']} failed")
    else:
        print(f"{grid.method}: {len(grid.records)} pairs, optimal ({pair[0]:.2f},{pair[1]:.2f}) "
              f"PW={s['optimal_pw']:.4f}, {s['n_failed']} failed")
    return EXIT_OK


def cmd_compare(cfg_a: RunConfig, cfg_b: RunConfig, out_dir: str) -> int:
    geom_a, geom_b = build_geometry(cfg_a), build_geometry(cfg_b)
    if geom_a.nx != geom_b.nx:
        raise ConfigError([f"configurations use different nx ({geom_a.nx} vs {geom_b.nx})"])
    if geom_a != geom_b:
        raise ConfigError(["configurations describe different geometries"])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / CONFIG_NAME, "w", encoding="utf-8") as fh:
        json.dump({"command": "compare", "tool_version": __version__,
                   "a": cfg_a.to_dict(), "b": cfg_b.to_dict(), "out": out_dir}, fh, indent=2)
    rows = []
    for cfg in (cfg_a, cfg_b):
        pg = build_projection(cfg, geom_a.nx)
        res = run_method(cfg, geom_a, pg)
        row = metric_rows(cfg, geom_a, res.dose, method_label(cfg))[0]
        row["geometry"] = f"{geom_a.name}:{geom_a.digest()}"
        rows.append(row)
        print(_summary_line(row["method"], row))
    aio.save_metrics(out / "compare.csv", rows,
                     aio.provenance("compare", [cfg_a.fingerprint(), cfg_b.fingerprint()]))
    return EXIT_OK


def cmd_metrics(cfg: RunConfig, dose_path: str) -> int:
    geom = build_geometry(cfg)
    dose, header = aio.load_array(dose_path, "dose")
    if dose.shape != geom.labels.shape:
        raise ShapeError(f"dose shape {dose.shape} does not match geometry {geom.labels.shape}")
    dose = dose.astype(np.float64)
    out = _out_dir(cfg)
    d = {"command": "metrics", "tool_version": __version__, "dose": str(dose_path),
         **cfg.to_dict()}
    with open(out / CONFIG_NAME, "w", encoding="utf-8") as fh:
        json.dump(d, fh, indent=2)
    label = header.provenance.get("method", "") or method_label(cfg)
    rows = metric_rows(cfg, geom, dose, label)
    prov = aio.provenance("metrics", cfg.fingerprint())
    aio.save_metrics(out / "metrics.csv", rows, prov)
    aio.save_histogram(out / "histogram.csv", *histogram(dose, geom, cfg.bins), prov)
    print(_summary_line(label, rows[0]))
    return EXIT_OK


def cmd_gen_geometry(cfg: RunConfig) -> int:
    geom = build_geometry(cfg).validate()
    out = _out_dir(cfg)
    write_config(cfg, out, "gen-geometry")
    aio.save_geometry(out / "geometry.u8", geom, aio.provenance("gen-geometry", cfg.fingerprint()))
    if cfg.png:
        from PIL import Image

        lut = np.array([0, 255, 96], dtype=np.uint8)
        Image.fromarray(lut[geom.labels[:, :, 0]]).save(out / "geometry.png")
    print(f"{geom.name}: nx={geom.nx} nz={geom.nz} in={geom.n_in} out={geom.n_out} "
          f"digest={geom.digest()}")
    return EXIT_OK


# argument parsing

def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_common(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON config file; flags override its values")
    g = p.add_argument_group("geometry")
    g.add_argument("--geometry", choices=GEOMETRIES, default=S)
    g.add_argument("--nx", type=int, default=S)
    g.add_argument("--nz", type=int, default=S)
    g.add_argument("--radius-fraction", type=float, default=S)
    g.add_argument("--cells", type=int, default=S)
    g.add_argument("--solid-fraction", type=float, default=S)
    g.add_argument("--geometry-path", default=S)
    g.add_argument("--threshold", type=float, default=S)
    g = p.add_argument_group("projection")
    g.add_argument("--n-angles", type=int, default=S)
    g.add_argument("--n-bins", type=int, default=S)
    g.add_argument("--angle-offset", type=float, default=S)
    g = p.add_argument_group("method")
    g.add_argument("--method", type=str.lower, choices=METHODS, default=S)
    g.add_argument("--tau-lower", type=float, default=S)
    g.add_argument("--tau-upper", type=float, default=S)
    g.add_argument("--w", type=float, default=S)
    g.add_argument("--min-projection-value", type=float, default=S)
    g = p.add_argument_group("solver")
    g.add_argument("--iters", type=int, default=S)
    g.add_argument("--step", default=S)
    g.add_argument("--init", choices=("zeros", "clipped_fbp"), default=S)
    g.add_argument("--record-every", type=int, default=S)
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--norm-iters", type=int, default=S)
    g.add_argument("--workers", type=int, default=S)
    g = p.add_argument_group("output")
    g.add_argument("--alpha", type=float, default=S, help="percent trimmed at each end")
    g.add_argument("--bins", type=int, default=S, help="histogram bins")
    g.add_argument("--out", default=S)


def _add_sweep(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    p.add_argument("--grid", type=_floats, default=S, help="comma-separated threshold values")
    p.add_argument("--w-rule", default=S, help="'complement' or 'fixed:<w>'")
    p.add_argument("--exclude-overdose", type=_bool, default=S)
    p.add_argument("--chunk", type=int, default=S, help="pairs per batched solve")
    p.add_argument("--ver-vmax", type=float, default=S, help="colour-scale cap for the VER map")
    p.add_argument("--png", type=_bool, default=S, help="also render PNG heat maps")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tvamplan", description="Illumination-plan optimisation")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("plan", help="optimise one illumination plan"))
    sp = sub.add_parser("sweep", help="sweep threshold pairs")
    _add_common(sp)
    _add_sweep(sp)
    cp = sub.add_parser("compare", help="run two configurations on one geometry")
    _add_common(cp)
    cp.add_argument("--config-a", help="config file for the first run")
    cp.add_argument("--config-b", help="config file for the second run")
    cp.add_argument("--set-a", action="append", default=[], metavar="KEY=VALUE")
    cp.add_argument("--set-b", action="append", default=[], metavar="KEY=VALUE")
    mp = sub.add_parser("metrics", help="recompute metrics from a saved dose")
    _add_common(mp)
    mp.add_argument("--dose", required=True, help="dose artifact (.f32 with sidecar)")
    gp = sub.add_parser("gen-geometry", help="write a built-in geometry")
    _add_common(gp)
    gp.add_argument("--png", type=_bool, default=argparse.SUPPRESS, help="also write a PNG preview")
    return ap


_COMMON_SKIP = {"command", "config", "verbose", "config_a", "config_b", "set_a", "set_b",
                "dose"}


def _flag_values(ns: argparse.Namespace, skip=()) -> dict:
    d = {k: v for k, v in vars(ns).items() if k not in _COMMON_SKIP and k not in skip}
    return d


def _read_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise ConfigError([f"{path}: config must be a JSON object"])
    d.pop("command", None)
    d.pop("tool_version", None)
    return d


def _parse_sets(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError([f"--set expects KEY=VALUE, got {item!r}"])
        k, v = item.split("=", 1)
        k = k.strip().replace("-", "_")
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _dispatch(ns: argparse.Namespace) -> int:
    if ns.command == "compare":
        base = _read_config(ns.config)
        out = base.pop("out", "out")
        if isinstance(base.get("a"), dict):
            base_a, base_b = base.pop("a"), base.pop("b")
            base_a.pop("out", None)
            base_b.pop("out", None)
        else:
            base_a = base_b = {}
        flags = _flag_values(ns, skip=("png", "grid", "w_rule", "exclude_overdose", "chunk",
                                       "ver_vmax"))
        out = flags.pop("out", out)
        a = {**base, **base_a, **_read_config(ns.config_a), **flags, **_parse_sets(ns.set_a)}
        b = {**base, **base_b, **_read_config(ns.config_b), **flags, **_parse_sets(ns.set_b)}
        a.pop("out", None)
        b.pop("out", None)
        return cmd_compare(resolve(a, {}, "compare"), resolve(b, {}, "compare"), out)
    file_values = _read_config(ns.config)
    file_values.pop("dose", None)
    if ns.command == "gen-geometry":
        cfg = resolve(file_values, _flag_values(ns), "gen-geometry")
        return cmd_gen_geometry(cfg)
    cfg = resolve(file_values, _flag_values(ns), ns.command)
    if ns.command == "plan":
        return cmd_plan(cfg)
    if ns.command == "sweep":
        return cmd_sweep(cfg)
    return cmd_metrics(cfg, ns.dose)


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(ns)
    except (OSError, ArtifactError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DegenerateGeometryError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, CollapseError, SelectionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
