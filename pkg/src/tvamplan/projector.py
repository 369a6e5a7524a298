"""Parallel-beam projector pair for square slices.

The back-projector is pixel driven: every voxel centre is projected onto the
detector for each angle and the sinogram is sampled there with linear
interpolation.  The forward projector scatters with exactly the same weights,
so the two are transposes of each other by construction.

Arrays carry a trailing batch axis: images are ``(nx, nx[, nb])`` and
sinograms are ``(n_angles, n_bins[, nb])``.  For volumes the batch axis is the
slice index, for threshold sweeps it is the threshold pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numba import njit

from .errors import ShapeError

_TILE = 256


def default_n_bins(nx: int) -> int:
    n = math.ceil(nx * math.sqrt(2.0))
    return n if n % 2 == 1 else n + 1


@dataclass(frozen=True)
class ProjectionGeometry:
    """Equally spaced angles over [0, pi) and a unit-spaced detector."""

    nx: int
    n_angles: int = 360
    n_bins: Optional[int] = None
    angle_offset: float = 0.0

    def __post_init__(self):
        if self.nx < 1:
            raise ValueError(f"nx must be >= 1, got {self.nx}")
        if self.n_angles < 1:
            raise ValueError(f"n_angles must be >= 1, got {self.n_angles}")
        if self.n_bins is None:
            object.__setattr__(self, "n_bins", default_n_bins(self.nx))
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be >= 1, got {self.n_bins}")
        # the slice corners must project strictly inside the detector
        corner = (self.nx - 1) / math.sqrt(2.0)
        if corner >= (self.n_bins - 1) / 2.0:
            raise ValueError(
                f"n_bins={self.n_bins} does not cover the slice diagonal for nx={self.nx}"
            )

    @property
    def angles(self) -> np.ndarray:
        return self.angle_offset + np.pi * np.arange(self.n_angles) / self.n_angles

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.nx, self.nx)

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_bins)

    def to_dict(self) -> dict:
        return {
            "nx": self.nx,
            "n_angles": self.n_angles,
            "n_bins": self.n_bins,
            "angle_offset": self.angle_offset,
        }


@njit(cache=True, nogil=True)
def _backproject1(sino, bins, w0, w1, tile, out):
    n_angles, npos = bins.shape
    for start in range(0, npos, tile):
        stop = min(start + tile, npos)
        for a in range(n_angles):
            row = sino[a]
            kb = bins[a]
            c0 = w0[a]
            c1 = w1[a]
            for q in range(start, stop):
                k = kb[q]
                out[q] += c0[q] * row[k] + c1[q] * row[k + 1]


@njit(cache=True, nogil=True)
def _project1(img, bins, w0, w1, tile, out):
    n_angles, npos = bins.shape
    for start in range(0, npos, tile):
        stop = min(start + tile, npos)
        for a in range(n_angles):
            row = out[a]
            kb = bins[a]
            c0 = w0[a]
            c1 = w1[a]
            for q in range(start, stop):
                k = kb[q]
                v = img[q]
                row[k] += c0[q] * v
                row[k + 1] += c1[q] * v


@njit(cache=True, nogil=True)
def _backproject(sino, bins, w0, w1, tile, out):
    n_angles, npos = bins.shape
    nb = sino.shape[2]
    for start in range(0, npos, tile):
        stop = min(start + tile, npos)
        for a in range(n_angles):
            row = sino[a]
            kb = bins[a]
            for q in range(start, stop):
                k = kb[q]
                c0 = w0[a, q]
                c1 = w1[a, q]
                lo = row[k]
                hi = row[k + 1]
                acc = out[q]
                for j in range(nb):
                    acc[j] += c0 * lo[j] + c1 * hi[j]


@njit(cache=True, nogil=True)
def _project(img, bins, w0, w1, tile, out):
    n_angles, npos = bins.shape
    nb = img.shape[1]
    for start in range(0, npos, tile):
        stop = min(start + tile, npos)
        for a in range(n_angles):
            row = out[a]
            kb = bins[a]
            for q in range(start, stop):
                k = kb[q]
                c0 = w0[a, q]
                c1 = w1[a, q]
                lo = row[k]
                hi = row[k + 1]
                v = img[q]
                for j in range(nb):
                    lo[j] += c0 * v[j]
                    hi[j] += c1 * v[j]


def _tiled_order(nx: int, side: int = 16) -> np.ndarray:
    idx = np.arange(nx * nx).reshape(nx, nx)
    blocks = [
        idx[r : r + side, c : c + side].ravel()
        for r in range(0, nx, side)
        for c in range(0, nx, side)
    ]
    return np.concatenate(blocks).astype(np.int64)


class PixelOperator:
    """Projector restricted to a subset of voxels of one slice.

    Voxel values are passed as ``(len(pixels), nb)`` arrays in the order of
    ``pixels`` (raveled indices of the slice).  Sinograms are
    ``(n_angles, n_bins, nb)``.
    """

    def __init__(self, pg: ProjectionGeometry, pixels: np.ndarray):
        self.pg = pg
        self.pixels = np.asarray(pixels, dtype=np.int64)
        nx = pg.nx
        c = (nx - 1) / 2.0
        ys = self.pixels // nx - c
        xs = self.pixels % nx - c
        theta = pg.angles
        u = np.cos(theta)[:, None] * xs[None, :] + np.sin(theta)[:, None] * ys[None, :]
        u += (pg.n_bins - 1) / 2.0
        k = np.floor(u)
        frac = u - k
        self.bins = np.ascontiguousarray(k.astype(np.int64))
        self.w0 = np.ascontiguousarray((1.0 - frac) / pg.n_angles)
        self.w1 = np.ascontiguousarray(frac / pg.n_angles)

    @property
    def n_pixels(self) -> int:
        return self.pixels.shape[0]

    def back(self, sino: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
        nb = sino.shape[2]
        if out is None:
            out = np.zeros((self.n_pixels, nb))
        else:
            out.fill(0.0)
        if nb == 1:
            _backproject1(sino[:, :, 0], self.bins, self.w0, self.w1, _TILE, out[:, 0])
        else:
            _backproject(sino, self.bins, self.w0, self.w1, _TILE, out)
        return out

    def fwd(self, vals: np.ndarray, out: Optional[np.ndarray] = None) -> np.ndarray:
        nb = vals.shape[1]
        if out is None:
            out = np.zeros((self.pg.n_angles, self.pg.n_bins, nb))
        else:
            out.fill(0.0)
        if nb == 1:
            _project1(vals[:, 0], self.bins, self.w0, self.w1, _TILE, out[:, :, 0])
        else:
            _project(vals, self.bins, self.w0, self.w1, _TILE, out)
        return out


class Projector:
    """Matched forward/back-projector for one :class:`ProjectionGeometry`.

    Back-projection is averaged over angles (divided by ``n_angles``) so dose
    magnitudes do not depend on how many angles are used; the forward
    projector carries the same factor.
    """

    def __init__(self, pg: ProjectionGeometry):
        self.pg = pg
        self.order = _tiled_order(pg.nx)
        self.full = PixelOperator(pg, self.order)

    def restrict(self, mask: np.ndarray) -> PixelOperator:
        """Operator acting only on voxels where the 2D ``mask`` is true."""
        keep = np.asarray(mask, dtype=bool).ravel()[self.order]
        return PixelOperator(self.pg, self.order[keep])

    def forward(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        nx = self.pg.nx
        if img.ndim not in (2, 3) or img.shape[:2] != (nx, nx):
            raise ShapeError(f"image shape {img.shape} does not match nx={nx}")
        squeeze = img.ndim == 2
        vals = np.ascontiguousarray(img.reshape(nx * nx, -1)[self.order])
        out = self.full.fwd(vals)
        return out[:, :, 0] if squeeze else out

    def backward(self, sino: np.ndarray) -> np.ndarray:
        sino = np.asarray(sino, dtype=np.float64)
        shape = self.pg.sino_shape
        if sino.ndim not in (2, 3) or sino.shape[:2] != shape:
            raise ShapeError(f"sinogram shape {sino.shape} does not match {shape}")
        squeeze = sino.ndim == 2
        s3 = np.ascontiguousarray(sino.reshape(shape + (-1,)))
        vals = self.full.back(s3)
        nx = self.pg.nx
        out = np.empty((nx * nx, vals.shape[1]))
        out[self.order] = vals
        return out.reshape(nx, nx) if squeeze else out.reshape(nx, nx, -1)


@lru_cache(maxsize=8)
def get_projector(pg: ProjectionGeometry) -> Projector:
    return Projector(pg)


def forward(img: np.ndarray, pg: ProjectionGeometry) -> np.ndarray:
    """Forward-project an image (or a stack along the last axis)."""
    return get_projector(pg).forward(img)


def backward(sino: np.ndarray, pg: ProjectionGeometry) -> np.ndarray:
    """Back-project a sinogram into an angle-averaged dose image."""
    return get_projector(pg).backward(sino)


def power_iteration(normal_op: Callable[[np.ndarray], np.ndarray], x0: np.ndarray,
                    iters: int) -> float:
    """Largest eigenvalue of a symmetric PSD operator via power iteration.

    Returns the Rayleigh quotient of the last iterate, which never decreases
    from one iteration to the next for PSD operators.
    """
    x = x0 / np.linalg.norm(x0)
    est = 0.0
    for _ in range(iters):
        y = normal_op(x)
        est = float(np.vdot(x, y))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
    return est


def operator_norm(pg: ProjectionGeometry, iters: int = 100, seed: int = 0) -> float:
    """Estimate ``sigma_max(A)**2`` by power iteration on ``A^T A``."""
    if iters < 10:
        raise ValueError(f"iters must be >= 10, got {iters}")
    op = get_projector(pg).full
    rng = np.random.default_rng(seed)
    x0 = rng.random((op.n_pixels, 1))

    def normal_op(x):
        return op.back(op.fwd(x))

    return power_iteration(normal_op, x0, iters)
