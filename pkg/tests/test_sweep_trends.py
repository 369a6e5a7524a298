"""Sweep-level trend properties on full threshold grids (slow, nx=64)."""

import numpy as np
import pytest

from tvamplan.geometry import make_disk, make_dogbones, make_resolution_target
from tvamplan.metrics import evaluate
from tvamplan.penalty import PenaltyConfig
from tvamplan.projector import ProjectionGeometry
from tvamplan.solver import SolveOptions, solve
from tvamplan.sweep import run_sweep, select_pw_optimal

pytestmark = pytest.mark.slow

NX, ANGLES, ITERS = 64, 128, 1000
MAKERS = {"disk": make_disk, "dogbones": make_dogbones, "resolution": make_resolution_target}


@pytest.fixture(scope="module")
def sweeps():
    out = {}
    for name, make in MAKERS.items():
        geom, pg = make(NX), ProjectionGeometry(NX, ANGLES)
        out[name] = (geom, pg, run_sweep(geom, pg, "OSPW", ITERS))
    return out


@pytest.mark.parametrize("name", list(MAKERS))
def test_default_pair_is_admissible_and_near_optimal(sweeps, name):
    geom, pg, grid = sweeps[name]
    best_pw = grid.record(*select_pw_optimal(grid)).pw
    res = solve(geom, pg, PenaltyConfig("OSPW", 0.70, 0.90, 0.0), SolveOptions(max_iters=ITERS))
    rep = evaluate(res.dose, geom)
    assert rep.max_dose <= 1.0
    assert rep.pw >= 0.75 * best_pw


def test_region_structure_on_logo_class_geometry(sweeps):
    _, _, grid = sweeps["dogbones"]
    ok = [r for r in grid.records if r.ok]
    flat = [r for r in ok if r.lower_tick >= 0.75 * r.upper_tick]
    open_ = [r for r in ok if r.lower_tick >= 0.65 * r.upper_tick]
    assert flat and open_
    assert np.mean([r.ipdr <= 0.05 for r in flat]) >= 0.9
    assert np.mean([r.pw >= 0.0 for r in open_]) >= 0.9
