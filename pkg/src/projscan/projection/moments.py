"""Per-pixel moments across the slices of a volume.

Two routes compute the same population statistics:

* :class:`MomentAccumulator` streams slices (or blocks of slices) through the
  Welford/Terriberry update and combines partial results with the pairwise
  formulas of Chan et al. / Pebay.  It carries moments up to fourth order.
* :func:`project_mean_std` is a fused single-pass kernel that visits every
  voxel once and updates the mean/M2 accumulators of all three planes.  It
  exists for throughput on full-size grids.

Degenerate pixels (zero variance, or fewer than two slices) get skew = kurt = 0.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import EmptyAxisError, ParameterError
from ..volume_io import PLANE_AXES, Volume3D

STATISTICS = ("mean", "std", "skew", "kurt")

# variance at or below (this * |mean|)^2 is treated as zero
_DEGENERATE_REL = 64 * np.finfo(np.float64).eps


class MomentAccumulator:
    """Running count, mean and central moment sums M2..M4 per pixel."""

    def __init__(self, shape, order: int = 4):
        if order not in (2, 4):
            raise ParameterError("order must be 2 or 4")
        self.shape = tuple(shape)
        self.order = order
        self.n = 0
        self.mean = np.zeros(self.shape)
        self.m2 = np.zeros(self.shape)
        if order == 4:
            self.m3 = np.zeros(self.shape)
            self.m4 = np.zeros(self.shape)

    def update(self, x) -> None:
        """Add one observation per pixel."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.shape:
            raise ParameterError(f"slice shape {x.shape} != accumulator shape {self.shape}")
        n1 = self.n
        self.n += 1
        n = self.n
        delta = x - self.mean
        delta_n = delta / n
        term1 = delta * delta_n * n1
        self.mean += delta_n
        if self.order == 4:
            delta_n2 = delta_n * delta_n
            self.m4 += term1 * delta_n2 * (n * n - 3 * n + 3) + 6 * delta_n2 * self.m2 - 4 * delta_n * self.m3
            self.m3 += term1 * delta_n * (n - 2) - 3 * delta_n * self.m2
        self.m2 += term1

    def update_block(self, block, axis: int = 0) -> None:
        """Add a block of observations stacked along ``axis``.

        The block's own moments are computed exactly (two-pass inside the
        block) and merged pairwise, which keeps the result independent of how
        a stream is chunked up to rounding.
        """
        block = np.moveaxis(np.asarray(block, dtype=np.float64), axis, 0)
        part = MomentAccumulator(self.shape, self.order)
        part.n = block.shape[0]
        if part.n == 0:
            return
        part.mean = block.mean(axis=0)
        d = block - part.mean
        d2 = d * d
        part.m2 = d2.sum(axis=0)
        if self.order == 4:
            part.m3 = (d2 * d).sum(axis=0)
            part.m4 = (d2 * d2).sum(axis=0)
        self.merge(part)

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        """Fold ``other`` into ``self`` (in place) and return ``self``."""
        if other.shape != self.shape:
            raise ParameterError("cannot merge accumulators of different shapes")
        if other.n == 0:
            return self
        if self.n == 0:
            self.n = other.n
            self.mean = other.mean.copy()
            self.m2 = other.m2.copy()
            if self.order == 4:
                self.m3 = other.m3.copy()
                self.m4 = other.m4.copy()
            return self
        na, nb = self.n, other.n
        n = na + nb
        delta = other.mean - self.mean
        delta2 = delta * delta
        if self.order == 4:
            m4 = (self.m4 + other.m4
                  + delta2 * delta2 * na * nb * (na * na - na * nb + nb * nb) / n**3
                  + 6.0 * delta2 * (na * na * other.m2 + nb * nb * self.m2) / n**2
                  + 4.0 * delta * (na * other.m3 - nb * self.m3) / n)
            m3 = (self.m3 + other.m3
                  + delta2 * delta * na * nb * (na - nb) / n**2
                  + 3.0 * delta * (na * other.m2 - nb * self.m2) / n)
            self.m3, self.m4 = m3, m4
        self.m2 = self.m2 + other.m2 + delta2 * na * nb / n
        self.mean = self.mean + delta * (nb / n)
        self.n = n
        return self

    def finalize(self) -> dict:
        if self.n == 0:
            raise EmptyAxisError("no slices accumulated")
        var = np.maximum(self.m2 / self.n, 0.0)
        out = {"mean": self.mean.copy(), "std": np.sqrt(var)}
        if self.order == 4:
            ok = var > (_DEGENERATE_REL * np.abs(self.mean)) ** 2
            if self.n < 2:
                ok[...] = False
            safe = np.where(ok, var, 1.0)
            skew = (self.m3 / self.n) / safe**1.5
            kurt = (self.m4 / self.n) / (safe * safe) - 3.0
            out["skew"] = np.where(ok, skew, 0.0)
            out["kurt"] = np.where(ok, kurt, 0.0)
        return out


def _slices(vol: Volume3D, plane: str):
    axis = PLANE_AXES[plane]
    return np.moveaxis(vol.data, axis, 0)


def project_moments(vol: Volume3D, plane: str) -> dict:
    """Mean, std, skew and excess kurtosis images across slices of ``plane``."""
    if plane not in PLANE_AXES:
        raise ParameterError(f"unknown plane {plane!r}")
    stack = _slices(vol, plane)
    if stack.shape[0] == 0:
        raise EmptyAxisError(f"{plane} axis has no slices")
    acc = MomentAccumulator(stack.shape[1:])
    for s in stack:
        acc.update(s)
    return acc.finalize()


@njit(cache=True, nogil=True)
def _fused_mean_m2(vol):
    # vol is C-contiguous (nz, ny, nx); accumulate in float64
    nz, ny, nx = vol.shape
    sag_m = np.zeros((nz, ny))
    sag_s = np.zeros((nz, ny))
    cor_m = np.zeros((nz, nx))
    cor_s = np.zeros((nz, nx))
    ax_m = np.zeros((ny, nx))
    ax_s = np.zeros((ny, nx))
    for z in range(nz):
        rz = 1.0 / (z + 1)
        for y in range(ny):
            ry = 1.0 / (y + 1)
            m = 0.0
            s = 0.0
            for x in range(nx):
                v = np.float64(vol[z, y, x])
                d = v - m
                m += d / (x + 1)
                s += d * (v - m)
                d = v - cor_m[z, x]
                cor_m[z, x] += d * ry
                cor_s[z, x] += d * (v - cor_m[z, x])
                d = v - ax_m[y, x]
                ax_m[y, x] += d * rz
                ax_s[y, x] += d * (v - ax_m[y, x])
            sag_m[z, y] = m
            sag_s[z, y] = s
    return sag_m, sag_s, cor_m, cor_s, ax_m, ax_s


def project_mean_std(vol: Volume3D) -> dict:
    """Mean and std images for all three planes in one pass over the voxels.

    Returns ``{plane: {"mean": img, "std": img}}`` with image axes in the same
    order as :func:`project_moments`.
    """
    nx, ny, nz = vol.dims
    sag_m, sag_s, cor_m, cor_s, ax_m, ax_s = _fused_mean_m2(vol.data.T)
    return {
        "coronal": {"mean": np.ascontiguousarray(cor_m.T),
                    "std": np.sqrt(np.maximum(cor_s.T / ny, 0.0))},
        "axial": {"mean": np.ascontiguousarray(ax_m.T),
                  "std": np.sqrt(np.maximum(ax_s.T / nz, 0.0))},
        "sagittal": {"mean": np.ascontiguousarray(sag_m.T),
                     "std": np.sqrt(np.maximum(sag_s.T / nx, 0.0))},
    }
