"""Cell-centred and staggered grids, interpolation and deformation helpers.

Conventions
-----------
Images are 2D float arrays of shape ``(n1, n2)``; the pixel ``[i, j]`` sits at
the absolute position ``(i + 1, j + 1)`` and the image domain is
``[1/2, n1 + 1/2] x [1/2, n2 + 1/2]``.  Quadrature is the midpoint rule, so
every integral over the domain is a plain sum over pixels.

A displacement ``v = (v1, v2)`` lives on the staggered grids: ``v1`` on the
interior vertical faces, shape ``(n1 - 1, n2)``, and ``v2`` on the interior
horizontal faces, shape ``(n1, n2 - 1)``.  Normal components on the boundary
faces are zero and are not stored.

Point sets and cell-centred vector fields are arrays of shape ``(2, ...)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from . import _backend

#: lower bound for Jacobian determinants used as weights
JACOBIAN_FLOOR = 1e-3


class LayoutError(ValueError):
    """Array shapes do not match the expected grid layout."""


class SingularMapError(ValueError):
    """A deformation collapses the grid so it cannot be inverted."""


def check_image(img, name="image"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 2:
        raise LayoutError(f"{name} must be 2D with at least 2 pixels per axis, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    return img


@dataclass
class DisplacementField:
    """Staggered displacement ``v = (v1, v2)`` on an ``(n1, n2)`` image grid."""

    v1: np.ndarray
    v2: np.ndarray

    def __post_init__(self):
        self.v1 = np.asarray(self.v1, dtype=np.float64)
        self.v2 = np.asarray(self.v2, dtype=np.float64)
        if self.v1.ndim != 2 or self.v2.ndim != 2:
            raise LayoutError("displacement components must be 2D")
        n1, n2 = self.v1.shape[0] + 1, self.v1.shape[1]
        if self.v2.shape != (n1, n2 - 1):
            raise LayoutError(
                f"staggered components disagree: v1 {self.v1.shape}, v2 {self.v2.shape}")

    @property
    def shape(self):
        return (self.v1.shape[0] + 1, self.v1.shape[1])

    @property
    def size(self):
        return self.v1.size + self.v2.size

    @classmethod
    def zeros(cls, shape):
        n1, n2 = shape
        return cls(np.zeros((n1 - 1, n2)), np.zeros((n1, n2 - 1)))

    @classmethod
    def from_vector(cls, vec, shape):
        n1, n2 = shape
        m = (n1 - 1) * n2
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != m + n1 * (n2 - 1):
            raise LayoutError("vector length does not match the staggered layout")
        return cls(vec[:m].reshape(n1 - 1, n2).copy(), vec[m:].reshape(n1, n2 - 1).copy())

    def to_vector(self):
        return np.concatenate([self.v1.ravel(), self.v2.ravel()])

    def copy(self):
        return DisplacementField(self.v1.copy(), self.v2.copy())

    def __add__(self, other):
        return DisplacementField(self.v1 + other.v1, self.v2 + other.v2)

    def __sub__(self, other):
        return DisplacementField(self.v1 - other.v1, self.v2 - other.v2)

    def __mul__(self, s):
        return DisplacementField(s * self.v1, s * self.v2)

    __rmul__ = __mul__

    def dot(self, other):
        return float(np.vdot(self.v1, other.v1) + np.vdot(self.v2, other.v2))

    def norm(self):
        return float(np.sqrt(self.dot(self)))

    def max_abs(self):
        return float(max(np.abs(self.v1).max(initial=0.0), np.abs(self.v2).max(initial=0.0)))


def _check_field(v, shape=None):
    if not isinstance(v, DisplacementField):
        raise LayoutError("expected a DisplacementField")
    if shape is not None and v.shape != tuple(shape):
        raise LayoutError(f"field is for grid {v.shape}, expected {tuple(shape)}")
    return v


def identity_map(shape):
    """Absolute positions of the pixel centres, shape ``(2, n1, n2)``."""
    n1, n2 = shape
    g1, g2 = np.meshgrid(np.arange(1.0, n1 + 1), np.arange(1.0, n2 + 1), indexing="ij")
    return np.stack([g1, g2])


def stagger_average(v):
    """Average the staggered components onto the cell centres (``Pv``)."""
    _check_field(v)
    n1, n2 = v.shape
    p1 = np.zeros((n1 + 1, n2))
    p1[1:-1] = v.v1
    p2 = np.zeros((n1, n2 + 1))
    p2[:, 1:-1] = v.v2
    return np.stack([0.5 * (p1[:-1] + p1[1:]), 0.5 * (p2[:, :-1] + p2[:, 1:])])


def stagger_average_adjoint(u):
    """Transpose of :func:`stagger_average`: cell-centred field to staggered field."""
    u = np.asarray(u, dtype=np.float64)
    return DisplacementField(0.5 * (u[0, :-1] + u[0, 1:]), 0.5 * (u[1][:, :-1] + u[1][:, 1:]))


# --- interpolation -------------------------------------------------------

def _catmull_rom_weights(f):
    f2 = f * f
    f3 = f2 * f
    return (
        0.5 * (-f3 + 2.0 * f2 - f),
        0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
        0.5 * (-3.0 * f3 + 4.0 * f2 + f),
        0.5 * (f3 - f2),
    )


def _catmull_rom_dweights(f):
    f2 = f * f
    return (
        0.5 * (-3.0 * f2 + 4.0 * f - 1.0),
        0.5 * (9.0 * f2 - 10.0 * f),
        0.5 * (-9.0 * f2 + 8.0 * f + 1.0),
        0.5 * (3.0 * f2 - 2.0 * f),
    )


def _cubic_taps(c, n):
    cc = np.clip(c, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(cc).astype(np.intp), n - 2)
    f = cc - i0
    idx = [np.clip(i0 + o, 0, n - 1) for o in (-1, 0, 1, 2)]
    return idx, f


def _bicubic(img, c0, c1, grad=False):
    n0, n1 = img.shape
    ii, f0 = _cubic_taps(c0, n0)
    jj, f1 = _cubic_taps(c1, n1)
    w0 = _catmull_rom_weights(f0)
    w1 = _catmull_rom_weights(f1)
    val = np.zeros(np.shape(c0))
    if not grad:
        for a in range(4):
            for b in range(4):
                val += w0[a] * w1[b] * img[ii[a], jj[b]]
        return val
    dw0 = _catmull_rom_dweights(f0)
    dw1 = _catmull_rom_dweights(f1)
    d0 = np.zeros_like(val)
    d1 = np.zeros_like(val)
    for a in range(4):
        for b in range(4):
            px = img[ii[a], jj[b]]
            val += w0[a] * w1[b] * px
            d0 += dw0[a] * w1[b] * px
            d1 += w0[a] * dw1[b] * px
    d0 = np.where((c0 >= 0.0) & (c0 <= n0 - 1.0), d0, 0.0)
    d1 = np.where((c1 >= 0.0) & (c1 <= n1 - 1.0), d1, 0.0)
    return val, d0, d1


def _bicubic_scatter(vals, c0, c1, shape):
    n0, n1 = shape
    ii, f0 = _cubic_taps(c0.ravel(), n0)
    jj, f1 = _cubic_taps(c1.ravel(), n1)
    w0 = _catmull_rom_weights(f0)
    w1 = _catmull_rom_weights(f1)
    v = vals.ravel()
    out = np.zeros(n0 * n1)
    for a in range(4):
        for b in range(4):
            out += np.bincount(ii[a] * n1 + jj[b], w0[a] * w1[b] * v, minlength=n0 * n1)
    return out.reshape(shape)


SCHEMES = ("bilinear", "bicubic")


def _check_scheme(scheme):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown interpolation scheme {scheme!r}; expected one of {SCHEMES}")


def sample(img, points, scheme="bilinear"):
    """Interpolate ``img`` at absolute positions ``points`` (shape ``(2, ...)``).

    Queries outside the domain are clamped to the boundary, so the result is
    linear in ``img`` for fixed points.
    """
    _check_scheme(scheme)
    img = np.ascontiguousarray(img, dtype=np.float64)
    c0 = np.asarray(points[0], dtype=np.float64) - 1.0
    c1 = np.asarray(points[1], dtype=np.float64) - 1.0
    if scheme == "bicubic":
        return _bicubic(img, c0, c1)
    return _backend.bilinear_sample(img, c0, c1)


def sample_grad(img, points, scheme="bilinear"):
    """Interpolated values and their derivatives with respect to the query positions."""
    _check_scheme(scheme)
    img = np.ascontiguousarray(img, dtype=np.float64)
    c0 = np.asarray(points[0], dtype=np.float64) - 1.0
    c1 = np.asarray(points[1], dtype=np.float64) - 1.0
    if scheme == "bicubic":
        val, d0, d1 = _bicubic(img, c0, c1, grad=True)
    else:
        val, d0, d1 = _backend.bilinear_sample_grad(img, c0, c1)
    return val, np.stack([d0, d1])


def sample_adjoint(vals, points, shape, scheme="bilinear"):
    """Transpose of :func:`sample` with respect to the image."""
    _check_scheme(scheme)
    c0 = np.ascontiguousarray(points[0], dtype=np.float64) - 1.0
    c1 = np.ascontiguousarray(points[1], dtype=np.float64) - 1.0
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    if scheme == "bicubic":
        return _bicubic_scatter(vals, c0, c1, tuple(shape))
    return _backend.bilinear_scatter(vals, c0, c1, tuple(shape))


def warp_points(v):
    """Positions ``x - Pv(x)`` at which a warped image samples its source."""
    return identity_map(v.shape) - stagger_average(v)


def warp(img, v, scheme="bilinear"):
    """Deform ``img`` by ``v`` using the approximation ``phi^{-1} = id - v``."""
    img = check_image(img)
    _check_field(v, img.shape)
    return sample(img, warp_points(v), scheme)


def warp_adjoint(r, v, scheme="bilinear"):
    """Transpose of ``warp(., v)`` applied to a cell-centred array."""
    return sample_adjoint(r, warp_points(v), v.shape, scheme)


# --- maps built from deformation paths ------------------------------------

def compose_path(path, upto):
    """Cell-centred map ``psi_k = phi_{k-1} o ... o phi_0`` at the pixel centres.

    ``path`` is a sequence of :class:`DisplacementField` and ``phi = id + v``.
    """
    steps = list(path)
    if not steps:
        raise ValueError("deformation path is empty")
    if not 0 <= upto <= len(steps):
        raise IndexError(f"composition index {upto} outside 0..{len(steps)}")
    psi = identity_map(steps[0].shape)
    for v in steps[:upto]:
        pv = stagger_average(v)
        psi = psi + np.stack([sample(pv[0], psi), sample(pv[1], psi)])
    return psi


def compose_all(path):
    """All maps ``psi_0, ..., psi_K`` of a deformation path."""
    steps = list(path)
    psi = identity_map(steps[0].shape)
    maps = [psi]
    for v in steps:
        pv = stagger_average(v)
        psi = psi + np.stack([sample(pv[0], psi), sample(pv[1], psi)])
        maps.append(psi)
    return maps


def jacobian_det(psi, floor=JACOBIAN_FLOOR):
    """Determinant of the finite-difference Jacobian of a map, clamped below."""
    psi = np.asarray(psi, dtype=np.float64)
    d11, d12 = np.gradient(psi[0])
    d21, d22 = np.gradient(psi[1])
    return np.maximum(d11 * d22 - d12 * d21, floor)


def scattered_resample(F, psi):
    """Recover ``I`` on the grid from samples ``F(x) = I(psi(x))``.

    The scattered data ``(psi(x), F(x))`` is interpolated to the pixel centres
    by inverse-distance weighting over the four nearest points.  Nodes hit
    exactly by a scattered point take its value.
    """
    F = check_image(F)
    psi = np.asarray(psi, dtype=np.float64)
    if psi.shape != (2,) + F.shape:
        raise LayoutError("map and image shapes disagree")
    if np.array_equal(psi, identity_map(F.shape)):
        return F.copy()
    if np.ptp(psi[0]) == 0.0 and np.ptp(psi[1]) == 0.0:
        raise SingularMapError("all scattered points coincide")
    return _backend.shepard_resample(psi[0] - 1.0, psi[1] - 1.0, F, F.shape, 4)


# --- resolution changes ---------------------------------------------------

@lru_cache(maxsize=None)
def _gauss_kernel():
    t = np.arange(-2, 3, dtype=np.float64)
    g = np.exp(-0.5 * t * t)
    return g / g.sum()


def _smooth(img):
    g = _gauss_kernel()
    num = ndimage.correlate1d(ndimage.correlate1d(img, g, axis=0, mode="constant"),
                              g, axis=1, mode="constant")
    ones = np.ones_like(img)
    den = ndimage.correlate1d(ndimage.correlate1d(ones, g, axis=0, mode="constant"),
                              g, axis=1, mode="constant")
    return num / den


def _resample_points(src_shape, dst_shape):
    """Positions of ``dst`` pixel centres in ``src`` coordinates (same physical domain)."""
    axes = []
    for ns, nd in zip(src_shape, dst_shape):
        xd = np.arange(1.0, nd + 1)
        axes.append((xd - 0.5) * (ns / nd) + 0.5)
    g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.stack([g1, g2])


def resize_image(img, shape, scheme="bilinear"):
    """Resample an image onto another resolution covering the same domain."""
    img = check_image(img)
    return sample(img, _resample_points(img.shape, shape), scheme)


def gaussian_downsample(img):
    """Smooth with a truncated 5x5 Gaussian (sigma 1) and halve the resolution."""
    img = check_image(img)
    if min(img.shape) < 4:
        raise LayoutError(f"image {img.shape} too small to downsample")
    shape = tuple(-(-n // 2) for n in img.shape)
    return resize_image(_smooth(img), shape)


def _resample_staggered(v, shape):
    n1, n2 = v.shape
    m1, m2 = shape
    s1, s2 = n1 / m1, n2 / m2
    # v1 with its zero boundary faces: positions 1/2 .. n1 + 1/2 along axis 0
    p1 = np.zeros((n1 + 1, n2))
    p1[1:-1] = v.v1
    x1 = np.arange(1.5, m1)  # interior faces of the target grid
    x2 = np.arange(1.0, m2 + 1)
    g1, g2 = np.meshgrid((x1 - 0.5) * s1 + 0.5, (x2 - 0.5) * s2 + 0.5, indexing="ij")
    # padded array index a sits at position a + 1/2, i.e. "pixel" a + 1
    w1 = sample(p1, np.stack([g1 + 0.5, g2]))
    p2 = np.zeros((n1, n2 + 1))
    p2[:, 1:-1] = v.v2
    y1 = np.arange(1.0, m1 + 1)
    y2 = np.arange(1.5, m2)
    h1, h2 = np.meshgrid((y1 - 0.5) * s1 + 0.5, (y2 - 0.5) * s2 + 0.5, indexing="ij")
    w2 = sample(p2, np.stack([h1, h2 + 0.5]))
    return DisplacementField(w1 / s1, w2 / s2)


def upsample_displacement(v, shape):
    """Bilinear prolongation of a displacement to a finer grid, in fine pixel units."""
    _check_field(v)
    shape = tuple(shape)
    if any(m < n for m, n in zip(shape, v.shape)) or any(m > 2 * n for m, n in zip(shape, v.shape)):
        raise LayoutError(f"cannot prolong a {v.shape} field to {shape}")
    return _resample_staggered(v, shape)


def downsample_displacement(v, shape):
    """Bilinear restriction of a displacement to a coarser grid, in coarse pixel units."""
    _check_field(v)
    return _resample_staggered(v, tuple(shape))
