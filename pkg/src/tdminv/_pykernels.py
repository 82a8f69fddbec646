"""Numpy implementations of the interpolation kernels.

These are the reference versions of the routines in ``_ckernels.pyx``; both
take zero-based pixel coordinates and clamp queries to ``[0, n - 1]``.
"""
import numpy as np
from scipy.spatial import cKDTree


def _cell(c, n):
    cc = np.clip(c, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(cc).astype(np.intp), n - 2)
    return i0, cc - i0


def bilinear_sample(img, c0, c1):
    n0, n1 = img.shape
    i0, f0 = _cell(c0, n0)
    j0, f1 = _cell(c1, n1)
    g0 = 1.0 - f0
    g1 = 1.0 - f1
    return (g0 * g1 * img[i0, j0] + f0 * g1 * img[i0 + 1, j0]
            + g0 * f1 * img[i0, j0 + 1] + f0 * f1 * img[i0 + 1, j0 + 1])


def bilinear_sample_grad(img, c0, c1):
    """Value and spatial derivatives of the bilinear interpolant.

    Derivatives vanish where a coordinate was clamped.
    """
    n0, n1 = img.shape
    i0, f0 = _cell(c0, n0)
    j0, f1 = _cell(c1, n1)
    a = img[i0, j0]
    b = img[i0 + 1, j0]
    c = img[i0, j0 + 1]
    d = img[i0 + 1, j0 + 1]
    g0 = 1.0 - f0
    g1 = 1.0 - f1
    val = g0 * g1 * a + f0 * g1 * b + g0 * f1 * c + f0 * f1 * d
    d0 = g1 * (b - a) + f1 * (d - c)
    d1 = g0 * (c - a) + f0 * (d - b)
    d0 = np.where((c0 >= 0.0) & (c0 <= n0 - 1.0), d0, 0.0)
    d1 = np.where((c1 >= 0.0) & (c1 <= n1 - 1.0), d1, 0.0)
    return val, d0, d1


def bilinear_scatter(vals, c0, c1, shape):
    n0, n1 = shape
    i0, f0 = _cell(c0.ravel(), n0)
    j0, f1 = _cell(c1.ravel(), n1)
    v = vals.ravel()
    g0 = 1.0 - f0
    g1 = 1.0 - f1
    base = i0 * n1 + j0
    size = n0 * n1
    out = np.bincount(base, g0 * g1 * v, minlength=size)
    out += np.bincount(base + n1, f0 * g1 * v, minlength=size)
    out += np.bincount(base + 1, g0 * f1 * v, minlength=size)
    out += np.bincount(base + n1 + 1, f0 * f1 * v, minlength=size)
    return out.reshape(shape)


def shepard_resample(p0, p1, vals, shape, k=4):
    """Inverse-distance (power 2) interpolation from scattered points to the grid.

    Grid nodes that coincide with a scattered point take its value exactly.
    """
    n0, n1 = shape
    pts = np.column_stack([p0.ravel(), p1.ravel()])
    v = vals.ravel()
    gi, gj = np.meshgrid(np.arange(n0, dtype=float), np.arange(n1, dtype=float), indexing="ij")
    nodes = np.column_stack([gi.ravel(), gj.ravel()])
    k = min(k, len(v))
    # extra candidates so distance ties at the k-th neighbour resolve by index
    kq = min(k + 4, len(v))
    _, idx = cKDTree(pts).query(nodes, k=kq)
    idx = idx.reshape(len(nodes), kq)
    d2 = (pts[idx, 0] - nodes[:, :1]) ** 2 + (pts[idx, 1] - nodes[:, 1:]) ** 2
    order = np.lexsort((idx, d2), axis=1)[:, :k]
    idx = np.take_along_axis(idx, order, axis=1)
    d2 = np.take_along_axis(d2, order, axis=1)
    exact = d2[:, 0] <= 1e-24
    w = 1.0 / np.where(exact[:, None], 1.0, d2)
    num = np.zeros(len(nodes))
    den = np.zeros(len(nodes))
    for m in range(k):
        num = num + w[:, m] * v[idx[:, m]]
        den = den + w[:, m]
    out = np.where(exact, v[idx[:, 0]], num / den)
    return out.reshape(shape)
