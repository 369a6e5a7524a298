"""Target geometries and the in-part / out-of-part / external voxel partition.

Slices are square ``nx x nx`` grids.  Voxel centres sit at ``j - (nx-1)/2``
in voxel units, and a voxel belongs to the printable region when its centre
lies strictly inside the inscribed circle of radius ``nx/2``.  Everything
outside that circle is external and is never penalised.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .errors import DegenerateGeometryError, ShapeError


class Label(IntEnum):
    OUT = 0
    IN = 1
    EXT = 2


def _centres(nx: int) -> np.ndarray:
    return np.arange(nx) - (nx - 1) / 2.0


def radius_grid(nx: int) -> np.ndarray:
    """Distance of each voxel centre from the slice centre, shape ``(nx, nx)``."""
    c = _centres(nx)
    return np.hypot(c[:, None], c[None, :])


def inscribed_mask(nx: int) -> np.ndarray:
    """Voxels whose centre is strictly inside the inscribed circle."""
    return radius_grid(nx) < nx / 2.0


@dataclass(frozen=True, eq=False)
class TargetGeometry:
    """Per-voxel labels of shape ``(nx, nx, nz)``."""

    labels: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim == 2:
            labels = labels[:, :, None]
        if labels.ndim != 3 or labels.shape[0] != labels.shape[1]:
            raise ShapeError(f"labels must be (nx, nx, nz), got {labels.shape}")
        labels = np.ascontiguousarray(labels, dtype=np.uint8)
        if labels.max(initial=0) > Label.EXT:
            raise ValueError("labels must be in {OUT=0, IN=1, EXT=2}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def nx(self) -> int:
        return self.labels.shape[0]

    @property
    def nz(self) -> int:
        return self.labels.shape[2]

    @property
    def in_mask(self) -> np.ndarray:
        return self.labels == Label.IN

    @property
    def out_mask(self) -> np.ndarray:
        return self.labels == Label.OUT

    @property
    def ext_mask(self) -> np.ndarray:
        return self.labels == Label.EXT

    @property
    def n_in(self) -> int:
        return int(self.in_mask.sum())

    @property
    def n_out(self) -> int:
        return int(self.out_mask.sum())

    def slice(self, z: int) -> "TargetGeometry":
        return TargetGeometry(self.labels[:, :, z : z + 1], name=f"{self.name}[z={z}]")

    def select_slices(self, idx: Iterable[int]) -> "TargetGeometry":
        return TargetGeometry(self.labels[:, :, list(idx)], name=self.name)

    def degenerate_slices(self) -> list[int]:
        has_in = self.in_mask.any(axis=(0, 1))
        has_out = self.out_mask.any(axis=(0, 1))
        return [int(z) for z in np.flatnonzero(~(has_in & has_out))]

    def validate(self) -> "TargetGeometry":
        bad = self.degenerate_slices()
        if bad:
            raise DegenerateGeometryError(
                f"slices without in-part or out-of-part voxels: {bad}", slices=bad
            )
        ext = ~inscribed_mask(self.nx)
        if not np.array_equal(self.ext_mask, np.broadcast_to(ext[:, :, None], self.labels.shape)):
            raise ValueError("external label must be exactly the voxels outside the inscribed circle")
        return self

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.labels.shape, dtype=np.int64).tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, TargetGeometry):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)


def from_mask(mask: np.ndarray, name: str = "custom") -> TargetGeometry:
    """Label a boolean in-part mask; the inscribed circle decides OUT vs EXT."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 2:
        mask = mask[:, :, None]
    if mask.ndim != 3 or mask.shape[0] != mask.shape[1]:
        raise ShapeError(f"slices must be square, got shape {mask.shape}")
    inside = inscribed_mask(mask.shape[0])[:, :, None]
    labels = np.full(mask.shape, Label.EXT, dtype=np.uint8)
    labels[np.broadcast_to(inside, mask.shape)] = Label.OUT
    labels[mask & inside] = Label.IN
    return TargetGeometry(labels, name=name).validate()


def make_disk(nx: int, radius_fraction: float = 0.5) -> TargetGeometry:
    """Centred disk of radius ``radius_fraction * nx/2``."""
    if nx < 8:
        raise ValueError(f"nx must be >= 8, got {nx}")
    if not 0.0 < radius_fraction < 1.0:
        raise ValueError(f"radius_fraction must be in (0, 1), got {radius_fraction}")
    return from_mask(radius_grid(nx) < radius_fraction * nx / 2.0, name="disk")


def _ellipse(x, y, cx, cy, a, b, phi_deg):
    c, s = math.cos(math.radians(phi_deg)), math.sin(math.radians(phi_deg))
    dx, dy = x - cx, y - cy
    xp = dx * c + dy * s
    yp = -dx * s + dy * c
    return (xp / a) ** 2 + (yp / b) ** 2 <= 1.0


def _unit_coords(nx: int):
    # [-1, 1] coordinates with y pointing up (row 0 is the top of the image)
    c = (np.arange(nx) + 0.5) * (2.0 / nx) - 1.0
    return c[None, :], -c[:, None]


def make_ellipses(nx: int = 40) -> TargetGeometry:
    """Four overlapping ellipses on a [-1, 1] square (the n=40 illustration)."""
    x, y = _unit_coords(nx)
    mask = np.zeros((nx, nx), dtype=bool)
    for cx, cy, a, b, phi in [
        (0.0, 0.0, 0.5, 0.3, 0.0),
        (0.1, 0.6, 0.3, 0.2, 45.0),
        (-0.3, -0.5, 0.2, 0.4, 15.0),
        (0.5, -0.5, 0.3, 0.3, 0.0),
    ]:
        mask |= _ellipse(x, y, cx, cy, a, b, phi)
    return from_mask(mask, name="ellipses")


def _dogbone(x, y, cx, cy, length, bar, lobe, phi_deg, square=False):
    c, s = math.cos(math.radians(phi_deg)), math.sin(math.radians(phi_deg))
    dx, dy = x - cx, y - cy
    u = dx * c + dy * s
    v = -dx * s + dy * c
    half = length / 2.0
    shaft = (np.abs(u) <= half) & (np.abs(v) <= bar / 2.0)
    if square:
        ends = (np.abs(np.abs(u) - half) <= lobe) & (np.abs(v) <= lobe)
    else:
        ends = (np.hypot(u - half, v) <= lobe) | (np.hypot(u + half, v) <= lobe)
    return shaft | ends


def make_dogbones(nx: int) -> TargetGeometry:
    """Logo-like stand-in: three dogbones with thin shafts and round or square lobes."""
    if nx < 32:
        raise ValueError(f"nx must be >= 32 for the dogbone target, got {nx}")
    x, y = _unit_coords(nx)
    mask = (
        _dogbone(x, y, -0.05, 0.45, 0.80, 0.10, 0.15, 8.0)
        | _dogbone(x, y, 0.0, 0.0, 0.95, 0.07, 0.14, -4.0, square=True)
        | _dogbone(x, y, 0.05, -0.45, 0.75, 0.12, 0.15, 3.0)
    )
    return from_mask(mask, name="dogbones")


def make_resolution_target(nx: int) -> TargetGeometry:
    """Resolution-test stand-in: bar groups of shrinking pitch plus squares."""
    if nx < 64:
        raise ValueError(f"nx must be >= 64 for the resolution target, got {nx}")
    x, y = _unit_coords(nx)
    mask = np.zeros((nx, nx), dtype=bool)
    # large square right of centre
    mask |= (np.abs(x - 0.35) <= 0.2) & (np.abs(y - 0.05) <= 0.2)
    # vertical bar groups, pitch halves from group to group
    left = -0.75
    for width in (0.08, 0.05, 0.03, 0.02):
        for k in range(3):
            x0 = left + 2 * k * width
            mask |= (x >= x0) & (x < x0 + width) & (y >= 0.1) & (y <= 0.5)
        left += 6 * width + 0.04
    # horizontal bar groups below
    top = -0.1
    for width in (0.06, 0.04, 0.025):
        for k in range(3):
            y0 = top - 2 * k * width
            mask |= (y <= y0) & (y > y0 - width) & (x >= -0.7) & (x <= -0.3)
        top -= 6 * width + 0.04
    # small squares of decreasing size
    cx = 0.2
    for side in (0.12, 0.08, 0.05, 0.03):
        mask |= (np.abs(x - cx) <= side / 2) & (np.abs(y + 0.5) <= side / 2)
        cx += side + 0.08
    return from_mask(mask, name="resolution")


def _periodic_phase(n: int, cells: int) -> np.ndarray:
    # 2*pi*cells*(i + 0.5)/n reduced exactly modulo 2*pi via integer arithmetic
    m = ((2 * np.arange(n) + 1) * cells) % (2 * n)
    return np.pi * m / n


def gyroid_field(nx: int, nz: int, cells: int) -> np.ndarray:
    """Gyroid implicit function sampled at voxel centres, shape ``(nx, nx, nz)``.

    ``cells`` unit cells span the slice in x and y, and the ``nz`` slices in z.
    """
    px = _periodic_phase(nx, cells)
    pz = _periodic_phase(nz, cells)
    X = px[None, :, None]
    Y = px[:, None, None]
    Z = pz[None, None, :]
    return np.sin(X) * np.cos(Y) + np.sin(Y) * np.cos(Z) + np.sin(Z) * np.cos(X)


def make_gyroid(nx: int, nz: int, cells: int = 2, solid_fraction: float = 0.3) -> TargetGeometry:
    """Sheet gyroid ``|G| <= t`` inside the inscribed cylinder.

    ``t`` is the ``solid_fraction`` quantile of ``|G|`` over the cylinder, so
    the in-part volume fraction of the cylinder matches ``solid_fraction`` up
    to ties.
    """
    if nx < 32:
        raise ValueError(f"nx must be >= 32, got {nx}")
    if nz < 1 or cells < 1:
        raise ValueError("nz and cells must be >= 1")
    if not 0.0 < solid_fraction < 1.0:
        raise ValueError(f"solid_fraction must be in (0, 1), got {solid_fraction}")
    g = np.abs(gyroid_field(nx, nz, cells))
    cyl = np.broadcast_to(inscribed_mask(nx)[:, :, None], g.shape)
    vals = np.sort(g[cyl])
    t = vals[max(int(math.ceil(solid_fraction * vals.size)) - 1, 0)]
    return from_mask(g <= t, name="gyroid")


def from_image(values: np.ndarray, threshold: float, name: str = "image") -> TargetGeometry:
    """Threshold a grey-level image (or stack along the last axis)."""
    values = np.asarray(values)
    if values.ndim not in (2, 3) or values.shape[0] != values.shape[1]:
        raise ShapeError(f"slices must be square, got shape {values.shape}")
    return from_mask(values >= threshold, name=name)


def load_target(path: Union[str, Path], threshold: float = 0.5) -> TargetGeometry:
    """Load a PNG or raw float32 raster and threshold it.

    ``threshold`` is a fraction of the dtype maximum: 255 for 8-bit PNG,
    65535 for 16-bit PNG and 1.0 for float32 rasters.
    """
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        with Image.open(path) as im:
            arr = np.array(im)
        if arr.ndim == 3:
            raise ShapeError(f"{path}: expected a single-channel greyscale PNG")
        if arr.dtype == np.uint8:
            vmax = 255.0
        elif arr.dtype in (np.uint16, np.int32, np.int16):
            vmax = 65535.0
        else:
            raise ValueError(f"{path}: unsupported PNG pixel type {arr.dtype}")
        values = arr.astype(np.float64) / vmax
    else:
        values = _load_raw_f32(path)
    return from_image(values, threshold, name=path.stem)


def _load_raw_f32(path: Path) -> np.ndarray:
    sidecar = path.with_suffix(path.suffix + ".json") if path.suffix else path.with_suffix(".json")
    if not sidecar.exists():
        sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    if meta.get("dtype") != "f32" or meta.get("order", "slice-row-major") != "slice-row-major":
        raise ValueError(f"{sidecar}: expected dtype 'f32' in slice-row-major order")
    nx, ny, nz = int(meta["nx"]), int(meta["ny"]), int(meta.get("nz", 1))
    if nx != ny:
        raise ShapeError(f"{path}: slices must be square, got {ny}x{nx}")
    data = np.fromfile(path, dtype="<f4")
    if data.size != nx * ny * nz:
        raise ShapeError(f"{path}: {data.size} values, sidecar expects {nx * ny * nz}")
    return np.moveaxis(data.reshape(nz, ny, nx), 0, -1).astype(np.float64)
