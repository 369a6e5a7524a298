import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from tvamplan.errors import DegenerateGeometryError, ShapeError
from tvamplan.geometry import (
    Label,
    TargetGeometry,
    from_image,
    from_mask,
    gyroid_field,
    inscribed_mask,
    load_target,
    make_disk,
    make_dogbones,
    make_ellipses,
    make_gyroid,
    make_resolution_target,
)


def assert_partition(g: TargetGeometry):
    n = g.nx * g.nx * g.nz
    masks = [g.in_mask, g.out_mask, g.ext_mask]
    assert sum(int(m.sum()) for m in masks) == n
    assert not (g.in_mask & g.out_mask).any()
    assert not (g.in_mask & g.ext_mask).any()
    assert not (g.out_mask & g.ext_mask).any()
    ext = ~inscribed_mask(g.nx)
    assert np.array_equal(g.ext_mask, np.broadcast_to(ext[:, :, None], g.labels.shape))


def test_disk_partition_covers_grid():
    g = make_disk(40, 0.5)
    assert g.n_in > 0 and g.n_out > 0
    assert g.n_in + g.n_out + int(g.ext_mask.sum()) == 1600
    assert_partition(g)


def test_disk_nx8_by_hand():
    # centres at +-0.5, +-1.5; distance < 2 keeps the 2x2 core and its 8 edge neighbours
    expected = np.zeros((8, 8), dtype=bool)
    expected[3:5, 2:6] = True
    expected[2:6, 3:5] = True
    g = make_disk(8, 0.5)
    assert np.array_equal(g.in_mask[:, :, 0], expected)
    assert g.n_in == 12


def test_disk_rejects_tiny_grid():
    with pytest.raises(ValueError):
        make_disk(4)


@pytest.mark.parametrize("nx", [8, 9, 16, 33, 64])
def test_corner_is_external(nx):
    g = make_disk(nx)
    for i, j in [(0, 0), (0, nx - 1), (nx - 1, 0), (nx - 1, nx - 1)]:
        assert g.labels[i, j, 0] == Label.EXT


def test_inscribed_circle_strict():
    # for even nx, the voxel centred at distance exactly nx/2 cannot occur, so
    # check against a direct enumeration instead
    nx = 10
    c = np.arange(nx) - 4.5
    inside = np.array([[np.hypot(a, b) < 5 for b in c] for a in c])
    assert np.array_equal(inscribed_mask(nx), inside)


@pytest.mark.parametrize("maker", [
    lambda: make_disk(32, 0.3),
    lambda: make_ellipses(40),
    lambda: make_dogbones(64),
    lambda: make_resolution_target(64),
    lambda: make_gyroid(32, 6, 2, 0.3),
])
def test_constructors_partition(maker):
    assert_partition(maker())


@settings(max_examples=40, deadline=None)
@given(st.integers(8, 24), st.integers(0, 2**32 - 1), st.floats(0.2, 0.8))
def test_partition_random_images(nx, seed, thr):
    img = np.random.default_rng(seed).random((nx, nx))
    try:
        g = from_image(img, thr)
    except DegenerateGeometryError:
        return
    assert_partition(g)


def test_ext_mask_ignores_content():
    nx = 20
    a = from_image(np.random.default_rng(0).random((nx, nx)), 0.5)
    b = from_image(np.ones((nx, nx)) * np.eye(nx) + 0.3, 0.5)
    assert np.array_equal(a.ext_mask, b.ext_mask)


def test_ellipses_three_labels():
    g = make_ellipses(40)
    assert g.nx == 40
    assert set(np.unique(g.labels)) == {Label.OUT, Label.IN, Label.EXT}


def test_gyroid_periodic_in_z():
    g = make_gyroid(32, 198, 2, 0.3)
    period = 99
    assert np.array_equal(g.labels[:, :, :period], g.labels[:, :, period:])
    f = gyroid_field(32, 198, 2)
    assert np.array_equal(f[:, :, :period], f[:, :, period:])


def test_gyroid_solid_fraction():
    g = make_gyroid(64, 16, 2, 0.3)
    cyl = ~g.ext_mask
    frac = g.n_in / int(cyl.sum())
    assert 0.25 <= frac <= 0.35


def test_gyroid_threshold_against_bisection():
    nx, nz, target = 64, 16, 0.3
    absg = np.abs(gyroid_field(nx, nz, 2))
    cyl = np.broadcast_to(inscribed_mask(nx)[:, :, None], absg.shape)
    vals = absg[cyl]
    lo, hi = 0.0, float(vals.max())
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if np.mean(vals <= mid) < target:
            lo = mid
        else:
            hi = mid
    oracle_count = int(np.count_nonzero(vals <= hi))
    g = make_gyroid(nx, nz, 2, target)
    assert g.n_in == oracle_count


def test_gyroid_reproducible_and_single_slice():
    a = make_gyroid(32, 5, 2, 0.3)
    b = make_gyroid(32, 5, 2, 0.3)
    assert np.array_equal(a.labels, b.labels)
    assert a.digest() == b.digest()
    one = make_gyroid(32, 1, 2, 0.3)
    assert one.nz == 1 and one.n_in > 0


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
def test_gyroid_bad_fraction(frac):
    with pytest.raises(ValueError):
        make_gyroid(32, 2, 2, frac)


def test_load_png_8bit_single_pixel(tmp_path):
    img = np.zeros((21, 21), dtype=np.uint8)
    img[10, 10] = 200
    p = tmp_path / "dot.png"
    Image.fromarray(img).save(p)
    g = load_target(p, 0.5)
    assert g.n_in == 1
    assert g.labels[10, 10, 0] == Label.IN


def test_load_png_16bit(tmp_path):
    img = np.zeros((32, 32), dtype=np.uint16)
    img[12:20, 12:20] = 40000
    p = tmp_path / "sq.png"
    Image.fromarray(img).save(p)
    g = load_target(p, 0.5)
    assert g.n_in == 64
    with pytest.raises(DegenerateGeometryError):
        load_target(p, 0.7)  # 40000/65535 is below 0.7, nothing is in-part


def test_load_raw_f32_stack(tmp_path):
    nx, nz = 24, 3
    vol = np.zeros((nz, nx, nx), dtype="<f4")  # slice-row-major on disk
    vol[:, 8:16, 10:14] = 1.0
    vol[2, 8:16, 10:14] = 0.0
    vol[2, 11, 11] = 0.9
    p = tmp_path / "vol.raw"
    vol.tofile(p)
    (tmp_path / "vol.raw.json").write_text(json.dumps(
        {"nx": nx, "ny": nx, "nz": nz, "dtype": "f32", "order": "slice-row-major"}))
    g = load_target(p, 0.5)
    assert g.labels.shape == (nx, nx, nz)
    assert g.in_mask[:, :, 0].sum() == 32
    assert g.in_mask[9, 12, 1]
    assert g.in_mask[:, :, 2].sum() == 1 and g.in_mask[11, 11, 2]


def test_load_raw_non_square(tmp_path):
    p = tmp_path / "r.raw"
    np.zeros((10, 12), dtype="<f4").tofile(p)
    (tmp_path / "r.raw.json").write_text(json.dumps(
        {"nx": 12, "ny": 10, "nz": 1, "dtype": "f32", "order": "slice-row-major"}))
    with pytest.raises(ShapeError):
        load_target(p)


def test_load_png_non_square(tmp_path):
    p = tmp_path / "rect.png"
    Image.fromarray(np.zeros((10, 14), dtype=np.uint8)).save(p)
    with pytest.raises(ShapeError):
        load_target(p)


def test_all_zero_image_degenerate():
    with pytest.raises(DegenerateGeometryError):
        from_image(np.zeros((16, 16)), 0.5)


def test_all_in_slice_degenerate():
    with pytest.raises(DegenerateGeometryError) as info:
        from_mask(np.stack([np.eye(16, dtype=bool), np.ones((16, 16), bool)], axis=2))
    assert info.value.slices == [1]


def test_labels_are_read_only():
    g = make_disk(16)
    with pytest.raises(ValueError):
        g.labels[0, 0, 0] = 1


def test_select_slices_and_equality():
    g = make_gyroid(32, 4, 2, 0.3)
    s = g.select_slices([2, 0])
    assert np.array_equal(s.labels[:, :, 0], g.labels[:, :, 2])
    assert g.slice(1) == TargetGeometry(g.labels[:, :, 1:2])
