"""Procedural reference/target image pairs.

Shapes are rendered analytically in normalized coordinates ``[-1, 1]^2``
with 2x2 supersampling.  The target is the reference pulled through a
smooth random deformation, with a changed intensity and, for some kinds, a
small structure that the reference lacks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import ssim
from .operators import make_rng

KINDS = ("ellipses", "triangles-to-stars", "brain-like")
MAX_REF_SSIM = 0.95


@dataclass
class Phantom:
    reference: np.ndarray
    target: np.ndarray
    detail_mask: np.ndarray
    amplitude: float


def _grid(size, sub=2):
    """Supersampled normalized coordinates, shape ``(size*sub, size*sub)``."""
    t = (np.arange(size * sub) + 0.5) / (size * sub) * 2.0 - 1.0
    return np.meshgrid(t, t, indexing="ij")


def _bin(img, sub=2):
    n = img.shape[0] // sub
    return img.reshape(n, sub, n, sub).mean(axis=(1, 3))


def _ellipse(y1, y2, c, r, angle):
    ca, sa = np.cos(angle), np.sin(angle)
    d1, d2 = y1 - c[0], y2 - c[1]
    u = (ca * d1 + sa * d2) / r[0]
    w = (-sa * d1 + ca * d2) / r[1]
    return u * u + w * w <= 1.0


def _polygon(y1, y2, verts):
    """Even-odd point-in-polygon test."""
    inside = np.zeros(y1.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        a1, a2 = verts[i]
        b1, b2 = verts[(i + 1) % n]
        crosses = (a2 > y2) != (b2 > y2)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = a1 + (y2 - a2) * (b1 - a1) / (b2 - a2)
        inside ^= crosses & (y1 < x_at)
    return inside


def _star(c, r_out, r_in, points, rot):
    ang = rot + np.arange(2 * points) * np.pi / points
    rad = np.where(np.arange(2 * points) % 2 == 0, r_out, r_in)
    return [(c[0] + q * np.cos(a), c[1] + q * np.sin(a)) for q, a in zip(rad, ang)]


def _shapes(kind, rng):
    """Painter's-order list of ``(reference_shape, target_shape, value, target_value)``."""
    j = lambda s: rng.uniform(-s, s)
    if kind == "ellipses":
        out = [(("e", (0, 0), (0.85, 0.7), 0.0), None, 0.35, 0.35)]
        for c, r, a, val, tv in [
            ((-0.3 + j(0.05), -0.2 + j(0.05)), (0.3, 0.18), 0.4, 0.8, 0.8),
            ((0.35 + j(0.05), 0.1 + j(0.05)), (0.22, 0.3), -0.3, 0.6, 0.75),
            ((0.1 + j(0.05), 0.45 + j(0.05)), (0.12, 0.12), 0.0, 0.1, 0.1),
            ((-0.25 + j(0.05), 0.35 + j(0.05)), (0.08, 0.15), 1.0, 1.0, 1.0),
            # small low-contrast features that sparse data alone cannot resolve
            ((-0.55 + j(0.03), 0.05 + j(0.03)), (0.06, 0.06), 0.0, 0.5, 0.5),
            ((0.0 + j(0.03), -0.5 + j(0.03)), (0.05, 0.05), 0.0, 0.2, 0.2),
            ((0.55 + j(0.03), -0.35 + j(0.03)), (0.07, 0.04), 0.7, 0.5, 0.5),
            ((0.05 + j(0.03), 0.05 + j(0.03)), (0.25, 0.035), 1.2, 0.5, 0.5),
            ((-0.3 + j(0.03), -0.2 + j(0.03)), (0.05, 0.05), 0.0, 0.65, 0.65),
            ((0.35 + j(0.03), 0.1 + j(0.03)), (0.12, 0.03), -0.3, 0.85, 0.95),
        ]:
            out.append((("e", c, r, a), None, val, tv))
        return out
    if kind == "triangles-to-stars":
        out = []
        for c, val in [((-0.45, -0.4), 0.9), ((0.4, -0.35), 0.6), ((0.0, 0.45), 0.75)]:
            c = (c[0] + j(0.05), c[1] + j(0.05))
            rot = rng.uniform(0, 2 * np.pi)
            tri = [(c[0] + 0.3 * np.cos(rot + k * 2 * np.pi / 3),
                    c[1] + 0.3 * np.sin(rot + k * 2 * np.pi / 3)) for k in range(3)]
            out.append((("p", tri), ("p", _star(c, 0.32, 0.14, 5, rot)), val, val))
        return out
    if kind == "brain-like":
        return [
            (("e", (0, 0), (0.9, 0.75), 0.0), None, 0.9, 0.9),
            (("e", (0, 0), (0.8, 0.65), 0.0), None, 0.45, 0.45),
            (("e", (0.05 + j(0.03), 0.0), (0.55, 0.45), 0.0), None, 0.6, 0.6),
            (("e", (-0.1 + j(0.03), -0.15), (0.25, 0.08), 0.5), None, 0.15, 0.15),
            (("e", (-0.1 + j(0.03), 0.15), (0.25, 0.08), -0.5), None, 0.15, 0.25),
            (("e", (0.35, 0.0 + j(0.03)), (0.1, 0.2), 0.0), None, 0.3, 0.3),
        ]
    raise ValueError(f"unknown phantom kind {kind!r}; expected one of {KINDS}")


def _paint(shapes, y1, y2, target):
    img = np.zeros(y1.shape)
    for ref, tgt, val, tval in shapes:
        s = tgt if (target and tgt is not None) else ref
        mask = _ellipse(y1, y2, s[1], s[2], s[3]) if s[0] == "e" else _polygon(y1, y2, s[1])
        img[mask] = tval if target else val
    return img


def _deformation(rng, amp):
    """Smooth displacement built from a few low-frequency modes, in normalized units."""
    modes = [(rng.integers(1, 3), rng.integers(1, 3), rng.uniform(0, 2 * np.pi),
              rng.uniform(0, 2 * np.pi), rng.uniform(0.5, 1.0)) for _ in range(6)]

    def u(y1, y2):
        d = [np.zeros_like(y1), np.zeros_like(y1)]
        for i, (k1, k2, p1, p2, c) in enumerate(modes):
            d[i % 2] += c * np.sin(0.5 * np.pi * k1 * y1 + p1) * np.sin(0.5 * np.pi * k2 * y2 + p2)
        return amp * d[0] / 1.5, amp * d[1] / 1.5

    return u


def make_phantom(kind, size, seed=0, deform=True, detail=None, amplitude=0.06):
    """Reference/target pair with the mask of the structure only the target has."""
    if size < 32:
        raise ValueError("phantom size must be at least 32")
    detail = (kind == "brain-like") if detail is None else bool(detail)
    rng = make_rng(seed)
    shapes = _shapes(kind, rng)
    u = _deformation(rng, 1.0)
    dc = (rng.uniform(0.15, 0.35), rng.uniform(-0.35, -0.15))
    y1, y2 = _grid(size)
    reference = _bin(_paint(shapes, y1, y2, target=False))
    dmask = np.zeros((size, size), dtype=bool)
    if detail:
        fine = _ellipse(y1, y2, dc, (0.07, 0.07), 0.0)
        dmask = _bin(fine.astype(float)) > 0
    amp = amplitude if deform else 0.0
    for _ in range(30):
        if deform:
            d1, d2 = u(y1, y2)
            target = _paint(shapes, y1 - amp * d1, y2 - amp * d2, target=True)
        else:
            target = _paint(shapes, y1, y2, target=False)
        if detail:
            target[fine] = 1.0
        target = _bin(target)
        if not deform or ssim(reference, target) < MAX_REF_SSIM:
            break
        amp *= 1.25
    else:
        raise RuntimeError("could not make the target differ enough from the reference")
    return Phantom(reference, target, dmask, amp)


def gen_phantom(kind, size, seed=0, deform=True, detail=None):
    """Deterministic ``(reference, target)`` pair of ``size x size`` images in ``[0, 1]``."""
    p = make_phantom(kind, size, seed, deform, detail)
    return p.reference, p.target
