"""Gauss-Newton registration of one image pair.

Each iteration solves the Gauss-Newton system with matrix-free conjugate
gradients and takes an Armijo step along the result.  If CG meets a
direction of nonpositive curvature, or returns something that is not a
descent direction, the iteration falls back to the negative gradient.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

from .energy import EnergyParams, registration_energy, registration_value
from .grid import DisplacementField, LayoutError


@dataclass
class RegParams:
    max_outer: int = 20
    cg_iters: int = 50
    cg_tol: float = 1e-3
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    grad_tol: float = 1e-6
    rel_tol: float = 1e-6

    def __post_init__(self):
        if self.max_outer < 1 or self.cg_iters < 1:
            raise ValueError("iteration counts must be positive")
        if self.cg_tol <= 0 or self.grad_tol <= 0 or self.rel_tol < 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.armijo_c <= 0.5:
            raise ValueError("armijo_c must lie in (0, 0.5]")
        if not 0.0 < self.armijo_shrink < 1.0:
            raise ValueError("armijo_shrink must lie in (0, 1)")


_LOG_FIELDS = ("iter", "energy", "grad_norm", "step", "slope", "new_energy", "fallback")


def conjugate_gradient(matvec, rhs, iters, tol):
    """Solve ``M x = rhs`` for symmetric positive definite ``M`` given as a matvec.

    Returns ``(x, ok)``; ``ok`` is False when a direction of nonpositive
    curvature was met before the residual dropped below ``tol * |rhs|``.
    """
    x = rhs * 0.0
    r = rhs.copy()
    p = r.copy()
    rr = r.dot(r)
    stop = (tol * rhs.norm()) ** 2
    for _ in range(iters):
        if rr <= stop:
            break
        mp = matvec(p)
        curv = p.dot(mp)
        if curv <= 0.0:
            return x, False
        a = rr / curv
        x = x + a * p
        r = r - a * mp
        rr_new = r.dot(r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, True


def register(img_a, img_b, v0=None, params=None, reg=None, scheme="bilinear",
             trace=None, log_path=None):
    """Find ``v`` with ``warp(img_a, v) ~ img_b`` by minimizing the registration energy.

    ``params`` is an :class:`~tdminv.energy.EnergyParams`; only the
    deformation weights are used.  ``trace``, if a list, receives one dict
    per iteration.  Iteration stops at a small gradient, at a relative
    decrease below ``reg.rel_tol``, or after ``reg.max_outer`` steps.  The
    energy of the result never exceeds that of ``v0``.
    """
    params = params or EnergyParams()
    reg = reg or RegParams()
    v = DisplacementField.zeros(img_a.shape) if v0 is None else v0.copy()
    if v.shape != img_a.shape:
        raise LayoutError("initial field does not match the images")
    rows = []
    for it in range(reg.max_outer):
        e, g, matvec = registration_energy(v, img_a, img_b, params, scheme)
        gnorm = g.norm()
        if gnorm <= reg.grad_tol * (1.0 + abs(e)):
            rows.append(dict(iter=it, energy=e, grad_norm=gnorm, step=0.0, slope=0.0,
                             new_energy=e, fallback=False))
            break
        d, ok = conjugate_gradient(matvec, -1.0 * g, reg.cg_iters, reg.cg_tol)
        slope = g.dot(d)
        fallback = not ok or slope >= 0.0
        if fallback:
            d = -1.0 * g
            slope = -gnorm * gnorm
            # scale the gradient step to the Gauss-Newton curvature along it
            curv = d.dot(matvec(d))
            if curv > 0.0:
                d = (gnorm * gnorm / curv) * d
                slope = g.dot(d)
        s = 1.0
        accepted = False
        while s > 1e-12:
            trial = v + s * d
            e_trial = registration_value(trial, img_a, img_b, params, scheme)
            if e_trial <= e + reg.armijo_c * s * slope:
                accepted = True
                break
            s *= reg.armijo_shrink
        rows.append(dict(iter=it, energy=e, grad_norm=gnorm, step=s if accepted else 0.0,
                         slope=slope, new_energy=e_trial if accepted else e, fallback=fallback))
        if not accepted:
            break
        v = trial
        if e - e_trial <= reg.rel_tol * abs(e):
            break
    if trace is not None:
        trace.extend(rows)
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(_LOG_FIELDS))
            wr.writeheader()
            wr.writerows(rows)
    return v
