"""Artifact persistence: raw little-endian binaries or CSV, each with a JSON sidecar.

Every artifact ``name.ext`` has a header in ``name.ext.json``::

    {"kind": ..., "shape": [...], "dtype": "f32" | "u8" | "text",
     "version": 1, "provenance": {...}, "meta": {...}}

Arrays are stored in C order with the in-memory axis order
(``(nx, nx, nz)`` for doses and geometries, ``(n_angles, n_bins, nz)`` for
sinograms).  Floats in CSV files are written with ``repr`` so they read back
bit-exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .errors import (
    ArtifactError,
    ArtifactShapeError,
    CorruptSidecarError,
    DtypeMismatchError,
    VersionMismatchError,
)
from .geometry import TargetGeometry
from .metrics import MetricReport
from .sweep import SweepGrid, SweepRecord

FORMAT_VERSION = 1
KINDS = ("geometry", "sinogram", "dose", "history", "metrics", "sweep")
DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
ARRAY_DTYPE = {"geometry": "u8", "sinogram": "f32", "dose": "f32"}


def config_hash(config: Any) -> str:
    """Short stable digest of a JSON-serialisable configuration."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def provenance(method: str = "", config: Any = None) -> dict:
    return {
        "method": method,
        "config_hash": config_hash(config) if config is not None else "",
        "tool_version": __version__,
    }


@dataclass
class ArtifactHeader:
    kind: str
    shape: list
    dtype: str
    version: int = FORMAT_VERSION
    provenance: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArtifactHeader":
        try:
            return cls(
                kind=str(d["kind"]),
                shape=[int(s) for s in d["shape"]],
                dtype=str(d["dtype"]),
                version=int(d["version"]),
                provenance=dict(d.get("provenance", {})),
                meta=dict(d.get("meta", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptSidecarError(f"sidecar is missing or has malformed fields: {exc}") from exc


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_header(path, header: ArtifactHeader):
    with open(sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(header.to_dict(), fh, indent=2, sort_keys=True)


def read_header(path, kind: Optional[str] = None) -> ArtifactHeader:
    side = sidecar_path(path)
    try:
        with open(side, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptSidecarError(f"{side}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise CorruptSidecarError(f"{side}: expected a JSON object")
    header = ArtifactHeader.from_dict(raw)
    if header.version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{side}: format version {header.version}, this tool reads {FORMAT_VERSION}"
        )
    if header.kind not in KINDS:
        raise CorruptSidecarError(f"{side}: unknown artifact kind {header.kind!r}")
    if kind is not None and header.kind != kind:
        raise ArtifactError(f"{side}: expected a {kind} artifact, found {header.kind}")
    return header


# binary arrays

def save_array(path, array: np.ndarray, kind: str, meta: Optional[dict] = None,
               prov: Optional[dict] = None) -> ArtifactHeader:
    if kind not in ARRAY_DTYPE:
        raise ValueError(f"{kind!r} is not an array artifact kind")
    code = ARRAY_DTYPE[kind]
    data = np.ascontiguousarray(array, dtype=DTYPES[code])
    header = ArtifactHeader(kind, list(data.shape), code, FORMAT_VERSION, prov or {}, meta or {})
    Path(path).write_bytes(data.tobytes(order="C"))
    write_header(path, header)
    return header


def load_array(path, kind: Optional[str] = None) -> tuple[np.ndarray, ArtifactHeader]:
    header = read_header(path, kind)
    if header.kind not in ARRAY_DTYPE:
        raise ArtifactError(f"{path}: {header.kind} is not an array artifact")
    if header.dtype != ARRAY_DTYPE[header.kind]:
        raise DtypeMismatchError(
            f"{path}: {header.kind} must be {ARRAY_DTYPE[header.kind]}, sidecar says {header.dtype}"
        )
    dt = DTYPES[header.dtype]
    raw = Path(path).read_bytes()
    expected = math.prod(header.shape) * dt.itemsize
    if len(raw) != expected:
        raise ArtifactShapeError(
            f"{path}: shape {header.shape} needs {expected} bytes, file has {len(raw)}"
        )
    return np.frombuffer(raw, dtype=dt).reshape(header.shape).copy(), header


def save_geometry(path, geom: TargetGeometry, prov: Optional[dict] = None) -> ArtifactHeader:
    return save_array(path, geom.labels, "geometry",
                      {"name": geom.name, "digest": geom.digest()}, prov)


def load_geometry(path) -> TargetGeometry:
    labels, header = load_array(path, "geometry")
    if labels.ndim != 3 or labels.shape[0] != labels.shape[1]:
        raise ArtifactShapeError(f"{path}: geometry must be (nx, nx, nz), got {labels.shape}")
    if labels.max(initial=0) > 2:
        raise ArtifactError(f"{path}: label values must be 0, 1 or 2")
    return TargetGeometry(labels, name=header.meta.get("name", Path(path).stem))


def projection_meta(pg) -> dict:
    return {"n_angles": pg.n_angles, "n_bins": pg.n_bins, "nx": pg.nx,
            "angle_offset": pg.angle_offset}


def save_sinogram(path, sino: np.ndarray, pg, prov: Optional[dict] = None) -> ArtifactHeader:
    sino = np.asarray(sino)
    if sino.ndim == 2:
        sino = sino[:, :, None]
    meta = {**projection_meta(pg), "nz": int(sino.shape[2])}
    return save_array(path, sino, "sinogram", meta, prov)


def save_dose(path, dose: np.ndarray, pg=None, prov: Optional[dict] = None) -> ArtifactHeader:
    dose = np.asarray(dose)
    if dose.ndim == 2:
        dose = dose[:, :, None]
    meta = {"nx": int(dose.shape[0]), "ny": int(dose.shape[1]), "nz": int(dose.shape[2])}
    if pg is not None:
        meta["angle_offset"] = pg.angle_offset
    return save_array(path, dose, "dose", meta, prov)


# text artifacts

def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    if v is None:
        return ""
    return str(v)


def _parse_float(s: str) -> float:
    return math.nan if s == "" else float(s)


def _write_csv(path, header_row, rows, kind, meta, prov) -> ArtifactHeader:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header_row)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    header = ArtifactHeader(kind, [len(rows), len(header_row)], "text", FORMAT_VERSION,
                            prov or {}, meta or {})
    write_header(path, header)
    return header


def _read_csv(path, kind, columns) -> tuple[list[dict], ArtifactHeader]:
    header = read_header(path, kind)
    if header.dtype != "text":
        raise DtypeMismatchError(f"{path}: {kind} artifacts are text, sidecar says {header.dtype}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != list(columns):
        raise ArtifactShapeError(f"{path}: unexpected columns {rows[0] if rows else []}")
    body = rows[1:]
    if [len(body), len(columns)] != header.shape or any(len(r) != len(columns) for r in body):
        raise ArtifactShapeError(
            f"{path}: sidecar shape {header.shape} does not match {len(body)} rows"
        )
    return [dict(zip(columns, r)) for r in body], header


HISTORY_COLUMNS = ("iter", "objective")


def save_history(path, history, prov: Optional[dict] = None) -> ArtifactHeader:
    rows = [(int(k), float(v)) for k, v in history]
    return _write_csv(path, HISTORY_COLUMNS, rows, "history", {}, prov)


def load_history(path) -> list[tuple[int, float]]:
    rows, _ = _read_csv(path, "history", HISTORY_COLUMNS)
    return [(int(r["iter"]), float(r["objective"])) for r in rows]


METRIC_COLUMNS = ("geometry", "method", "tau_lower", "tau_upper", "w", "alpha",
                  "pw", "ipdr", "ver", "slice", "n_in", "n_out", "max_dose")


def metric_row(report: MetricReport, geometry: str, method: str, tau_lower: float,
               tau_upper: float, w: float) -> dict:
    return {
        "geometry": geometry, "method": method, "tau_lower": float(tau_lower),
        "tau_upper": float(tau_upper), "w": float(w), "alpha": float(report.alpha),
        "pw": report.pw, "ipdr": report.ipdr, "ver": report.ver,
        "slice": "" if report.slice is None else int(report.slice),
        "n_in": report.n_in, "n_out": report.n_out, "max_dose": report.max_dose,
    }


def save_metrics(path, rows: list[dict], prov: Optional[dict] = None) -> ArtifactHeader:
    return _write_csv(path, METRIC_COLUMNS, [[r[c] for c in METRIC_COLUMNS] for r in rows],
                      "metrics", {}, prov)


def load_metrics(path) -> list[dict]:
    rows, _ = _read_csv(path, "metrics", METRIC_COLUMNS)
    out = []
    for r in rows:
        d = dict(r)
        for c in ("tau_lower", "tau_upper", "w", "alpha", "pw", "ipdr", "ver", "max_dose"):
            d[c] = _parse_float(d[c])
        d["slice"] = None if d["slice"] == "" else int(d["slice"])
        d["n_in"], d["n_out"] = int(d["n_in"]), int(d["n_out"])
        out.append(d)
    return out


HISTOGRAM_COLUMNS = ("bin_lo", "bin_hi", "in_count", "out_count")


def save_histogram(path, in_counts, out_counts, edges, prov: Optional[dict] = None):
    rows = [(float(edges[i]), float(edges[i + 1]), int(in_counts[i]), int(out_counts[i]))
            for i in range(len(in_counts))]
    return _write_csv(path, HISTOGRAM_COLUMNS, rows, "metrics", {"table": "histogram"}, prov)


SWEEP_COLUMNS = ("tau_lower", "tau_upper", "w", "status", "pw", "ipdr", "ver", "max_dose",
                 "failed_at")


def save_sweep(path, grid: SweepGrid, prov: Optional[dict] = None) -> ArtifactHeader:
    rows = [(f"{r.tau_lower:.2f}", f"{r.tau_upper:.2f}", float(r.w), r.status, float(r.pw),
             float(r.ipdr), float(r.ver), float(r.max_dose), int(r.failed_at))
            for r in grid.records]
    meta = {"ticks": list(grid.ticks), "method": grid.method, "geometry": grid.geometry,
            "alpha": grid.alpha, "w_rule": grid.w_rule, "iters": grid.iters}
    return _write_csv(path, SWEEP_COLUMNS, rows, "sweep", meta, prov)


def load_sweep(path) -> SweepGrid:
    rows, header = _read_csv(path, "sweep", SWEEP_COLUMNS)
    m = header.meta
    try:
        grid = SweepGrid(ticks=tuple(int(t) for t in m["ticks"]), method=m["method"],
                         geometry=m["geometry"], alpha=float(m["alpha"]),
                         w_rule=m.get("w_rule", ""), iters=int(m.get("iters", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptSidecarError(f"{path}: sweep metadata incomplete ({exc})") from exc
    for r in rows:
        grid.records.append(SweepRecord(
            lower_tick=round(float(r["tau_lower"]) * 100),
            upper_tick=round(float(r["tau_upper"]) * 100),
            w=float(r["w"]), status=r["status"], pw=_parse_float(r["pw"]),
            ipdr=_parse_float(r["ipdr"]), ver=_parse_float(r["ver"]),
            max_dose=_parse_float(r["max_dose"]), failed_at=int(r["failed_at"]),
        ))
    return grid


_LOADERS = {
    "geometry": load_geometry,
    "sinogram": lambda p: load_array(p, "sinogram")[0],
    "dose": lambda p: load_array(p, "dose")[0],
    "history": load_history,
    "metrics": load_metrics,
    "sweep": load_sweep,
}


def load(path):
    """Load any artifact, dispatching on the kind recorded in its sidecar."""
    return _LOADERS[read_header(path).kind](path)


def save(artifact, path, kind: Optional[str] = None, **kw) -> ArtifactHeader:
    """Save an artifact; plain arrays and lists need an explicit ``kind``."""
    if isinstance(artifact, TargetGeometry):
        return save_geometry(path, artifact, kw.get("prov"))
    if isinstance(artifact, SweepGrid):
        return save_sweep(path, artifact, kw.get("prov"))
    if kind in ("sinogram", "dose", "geometry"):
        return save_array(path, artifact, kind, kw.get("meta"), kw.get("prov"))
    if kind == "history":
        return save_history(path, artifact, kw.get("prov"))
    if kind == "metrics":
        return save_metrics(path, artifact, kw.get("prov"))
    raise ValueError(f"cannot infer artifact kind for {type(artifact).__name__}; pass kind=")
