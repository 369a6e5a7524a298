import json

import numpy as np
import pytest

from tvamplan import io as aio
from tvamplan.errors import (
    ArtifactError,
    ArtifactShapeError,
    CorruptSidecarError,
    DtypeMismatchError,
    VersionMismatchError,
)
from tvamplan.geometry import make_gyroid
from tvamplan.metrics import evaluate
from tvamplan.projector import ProjectionGeometry
from tvamplan.sweep import DEFAULT_TICKS, SweepGrid, SweepRecord, export_colormap, grid_pairs


def test_dose_roundtrip_bit_exact(tmp_path, rng):
    dose = rng.random((32, 32, 1)).astype(np.float32)
    aio.save_dose(tmp_path / "d.f32", dose)
    back, header = aio.load_array(tmp_path / "d.f32", "dose")
    assert back.dtype == np.dtype("<f4") and np.array_equal(back, dose)
    assert header.shape == [32, 32, 1]
    assert np.array_equal(aio.load(tmp_path / "d.f32"), dose)


def test_little_endian_on_disk(tmp_path):
    aio.save_dose(tmp_path / "d.f32", np.array([[[1.0]]], dtype=np.float32))
    assert (tmp_path / "d.f32").read_bytes() == b"\x00\x00\x80\x3f"


def test_sinogram_sidecar_describes_projection(tmp_path, rng):
    pg = ProjectionGeometry(16, 10, angle_offset=0.25)
    aio.save_sinogram(tmp_path / "p.f32", rng.random(pg.sino_shape), pg,
                      aio.provenance("OSPW(w=0)", {"a": 1}))
    h = aio.read_header(tmp_path / "p.f32")
    assert h.meta["n_angles"] == 10 and h.meta["n_bins"] == pg.n_bins and h.meta["nz"] == 1
    assert h.meta["angle_offset"] == 0.25
    assert h.provenance["method"] == "OSPW(w=0)"
    assert len(h.provenance["config_hash"]) == 16


def test_header_roundtrip(tmp_path):
    h = aio.ArtifactHeader("dose", [2, 3, 1], "f32", 1, {"method": "x"}, {"k": [1, 2]})
    aio.write_header(tmp_path / "a.f32", h)
    assert aio.read_header(tmp_path / "a.f32") == h


def test_geometry_roundtrip(tmp_path):
    g = make_gyroid(32, 3, 2, 0.3)
    aio.save_geometry(tmp_path / "g.u8", g)
    back = aio.load(tmp_path / "g.u8")
    assert back == g and back.name == "gyroid"


def test_wrong_shape_in_sidecar(tmp_path, rng):
    aio.save_dose(tmp_path / "d.f32", rng.random((8, 8)))
    side = tmp_path / "d.f32.json"
    d = json.loads(side.read_text())
    d["shape"] = [8, 9, 1]
    side.write_text(json.dumps(d))
    with pytest.raises(ArtifactShapeError):
        aio.load(tmp_path / "d.f32")


def test_corrupt_sidecar(tmp_path, rng):
    aio.save_dose(tmp_path / "d.f32", rng.random((8, 8)))
    (tmp_path / "d.f32.json").write_text("{not json")
    with pytest.raises(CorruptSidecarError):
        aio.load(tmp_path / "d.f32")
    (tmp_path / "d.f32.json").write_text(json.dumps({"kind": "dose"}))
    with pytest.raises(CorruptSidecarError):
        aio.load(tmp_path / "d.f32")


def test_dtype_mismatch(tmp_path, rng):
    aio.save_dose(tmp_path / "d.f32", rng.random((8, 8)))
    side = tmp_path / "d.f32.json"
    d = json.loads(side.read_text())
    d["dtype"] = "u8"
    side.write_text(json.dumps(d))
    with pytest.raises(DtypeMismatchError):
        aio.load(tmp_path / "d.f32")


def test_version_mismatch(tmp_path, rng):
    aio.save_dose(tmp_path / "d.f32", rng.random((8, 8)))
    side = tmp_path / "d.f32.json"
    d = json.loads(side.read_text())
    d["version"] = 99
    side.write_text(json.dumps(d))
    with pytest.raises(VersionMismatchError):
        aio.load(tmp_path / "d.f32")


def test_errors_are_distinct():
    kinds = [CorruptSidecarError, ArtifactShapeError, DtypeMismatchError, VersionMismatchError]
    for a in kinds:
        assert issubclass(a, ArtifactError)
        for b in kinds:
            assert a is b or not issubclass(a, b)


def test_wrong_kind(tmp_path, rng):
    aio.save_dose(tmp_path / "d.f32", rng.random((8, 8)))
    with pytest.raises(ArtifactError):
        aio.load_array(tmp_path / "d.f32", "sinogram")


def test_history_roundtrip(tmp_path):
    hist = [(0, 12.5), (10, 1.0 / 3.0), (20, 1e-17)]
    aio.save_history(tmp_path / "h.csv", hist)
    assert aio.load(tmp_path / "h.csv") == hist


def test_metrics_roundtrip(tmp_path, rng):
    g = make_gyroid(32, 2, 2, 0.3)
    rep = evaluate(rng.random((32, 32, 2)), g, 0.025)
    row = aio.metric_row(rep, "gyroid", "OSPW(w=0)", 0.7, 0.9, 0.0)
    aio.save_metrics(tmp_path / "m.csv", [row])
    back = aio.load(tmp_path / "m.csv")
    assert back == [row | {"slice": None}]
    header = (tmp_path / "m.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("geometry,method,tau_lower,tau_upper,w,alpha,pw,ipdr,ver,slice")


def test_sweep_roundtrip_reexport(tmp_path):
    rng = np.random.default_rng(0)
    recs = []
    for a, b in grid_pairs(DEFAULT_TICKS):
        if a < 12 and b < 20:
            recs.append(SweepRecord(a, b, 1 - b / 100, status="failed", failed_at=7))
        else:
            recs.append(SweepRecord(a, b, 1 - b / 100, pw=rng.normal(), ipdr=rng.random(),
                                    ver=rng.random(), max_dose=rng.random() * 2))
    grid = SweepGrid(DEFAULT_TICKS, "OSPW", "disk", 0.025, "complement", 1000, recs)
    assert len(grid.records) == 325
    aio.save_sweep(tmp_path / "s.csv", grid)
    back = aio.load(tmp_path / "s.csv")
    assert back.ticks == grid.ticks and back.method == "OSPW" and back.iters == 1000
    for metric in ("pw", "ipdr", "ver"):
        export_colormap(grid, metric, tmp_path / f"a_{metric}.csv")
        export_colormap(back, metric, tmp_path / f"b_{metric}.csv")
        assert (tmp_path / f"a_{metric}.csv").read_bytes() == \
            (tmp_path / f"b_{metric}.csv").read_bytes()
    assert [r.status for r in back.records] == [r.status for r in grid.records]


def test_config_hash_stable():
    assert aio.config_hash({"b": 1, "a": [1, 2]}) == aio.config_hash({"a": [1, 2], "b": 1})
    assert aio.config_hash({"a": 1}) != aio.config_hash({"a": 2})
