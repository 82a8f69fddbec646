"""Proximal alternating linearized minimization of the reconstruction objective.

The objective splits into ``G(I) = alpha TV(I_0) + 1/2 |A I_0 - B|^2`` and
the smooth coupling ``H(I, v) = beta * path_energy(I, v)``.  Each step takes
a proximal gradient step in the frames and a gradient step in the
deformations.  The step sizes are inverse Lipschitz estimates, verified by
the descent lemma and doubled when it fails.

With ``PalmParams.smooth_data`` the data term moves from ``G`` into ``H``
and the proximal step reduces to TV denoising; this pays off when
``|A^T A|`` is small.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convex import PDParams, solve_l2tv, solve_weighted_step
from .energy import full_objective, path_energy, registration_energy, registration_value
from .grid import LayoutError, warp, warp_adjoint
from .operators import ScalingOp
from .multilevel import Level, RunConfig, RunResult, run_tdm_inv


@dataclass
class PalmParams:
    tau: float | None = None
    sigma: float = 1.0
    backtrack: float = 2.0
    relax: float = 0.8
    max_iters: int = 100
    tol: float = 1e-6
    smooth_data: bool = False
    pd: PDParams = field(default_factory=PDParams)

    def __post_init__(self):
        if (self.tau is not None and self.tau <= 0) or self.sigma <= 0:
            raise ValueError("step parameters must be positive")
        if self.backtrack <= 1.0:
            raise ValueError("backtracking factor must exceed 1")
        if not 0.0 < self.relax <= 1.0:
            raise ValueError("relax must lie in (0, 1]")


@dataclass
class PalmState:
    frames: list
    fields: list
    tau: float
    sigma: float


def grad_H(frames, fields, params, scheme="bilinear", op=None, data=None):
    """Gradients of ``beta * path_energy`` in the frames and in the deformations.

    With ``op`` and ``data`` given, ``1/2 |A I_0 - B|^2`` is part of ``H``.
    The gradient for the last frame, the fixed reference, is zero.
    """
    frames = list(frames)
    fields = list(fields)
    if len(frames) != len(fields) + 1:
        raise LayoutError("path lengths disagree")
    beta = params.beta
    gi = [np.zeros_like(f) for f in frames]
    gv = []
    for k, v in enumerate(fields):
        r = warp(frames[k], v, scheme) - frames[k + 1]
        gi[k] += 2.0 * beta * warp_adjoint(r, v, scheme)
        gi[k + 1] -= 2.0 * beta * r
        _, g, _ = registration_energy(v, frames[k], frames[k + 1], params, scheme)
        gv.append(beta * g)
    if op is not None:
        gi[0] += op.adjoint(op.apply(frames[0]) - data)
    gi[-1] = np.zeros_like(frames[-1])
    return gi, gv


def frame_lipschitz(frames, fields, params, scheme="bilinear", iters=20, op=None):
    """Power-method estimate of the Lipschitz constant of the frame gradient.

    ``H`` is quadratic in the frames, so its frame gradient evaluated at a
    direction with zero last frame is the Hessian applied to that direction.
    """
    rng = np.random.default_rng(0)
    d = [rng.standard_normal(f.shape) for f in frames[:-1]] + [np.zeros_like(frames[-1])]
    est = 0.0
    for _ in range(iters):
        nrm = math.sqrt(sum(float((x * x).sum()) for x in d))
        d = [x / nrm for x in d]
        hd, _ = grad_H(d, fields, params, scheme)
        if op is not None:
            hd[0] = hd[0] + op.adjoint(op.apply(d[0]))
        est = math.sqrt(sum(float((x * x).sum()) for x in hd))
        d = hd
        if est == 0.0:
            break
    return est


def _H(frames, fields, params, scheme, op=None, data=None):
    h = params.beta * path_energy(frames, fields, params, scheme)
    if op is not None:
        h += 0.5 * float(((op.apply(frames[0]) - data) ** 2).sum())
    return h


def _prox_first(z0, x0, op, data, params, tau, pp):
    if pp.smooth_data:
        # tau/2 |x - z_0|^2 + alpha TV(x) as an L2-TV problem with a scaled identity
        c = np.sqrt(tau)
        return solve_l2tv(ScalingOp(z0.shape, c), c * z0, params.alpha, x0=x0, pd=pp.pd)
    # tau/2 |x - z_0|^2 + alpha TV(x) + 1/2 |A x - B|^2
    return solve_weighted_step(op, data, z0, np.ones_like(z0), params.alpha, 0.5 * tau,
                               x0=x0, pd=pp.pd)


def _image_block(frames, fields, op, data, params, tau, pp, scheme):
    hop = (op, data) if pp.smooth_data else (None, None)
    h0 = _H(frames, fields, params, scheme, *hop)
    gi, _ = grad_H(frames, fields, params, scheme, *hop)
    gsq = sum(float((g * g).sum()) for g in gi)
    while True:
        z = [f - g / tau for f, g in zip(frames, gi)]
        new = list(z)
        new[0] = _prox_first(z[0], frames[0], op, data, params, tau, pp)
        new[-1] = frames[-1]
        dif = [a - b for a, b in zip(new, frames)]
        bound = h0 + sum(float((g * d).sum()) for g, d in zip(gi, dif)) \
            + 0.5 * tau * sum(float((d * d).sum()) for d in dif)
        if _H(new, fields, params, scheme, *hop) <= bound + 1e-12 * abs(h0) or gsq == 0.0:
            return new, tau
        tau *= pp.backtrack


def _field_block(frames, fields, params, sigma, pp, scheme):
    beta = params.beta
    out, sigmas = [], []
    for k, v in enumerate(fields):
        e, g, _ = registration_energy(v, frames[k], frames[k + 1], params, scheme)
        h0, g = beta * e, beta * g
        gsq = g.dot(g)
        s = sigma
        while True:
            trial = v - (1.0 / s) * g
            if gsq == 0.0 or beta * registration_value(trial, frames[k], frames[k + 1], params, scheme) \
                    <= h0 - 0.5 * gsq / s + 1e-12 * abs(h0):
                break
            s *= pp.backtrack
        out.append(trial)
        sigmas.append(s)
    return out, max(sigmas, default=sigma)


def palm_step(state, op, data, params, pp, scheme="bilinear"):
    """One PALM iteration: frames first, then each deformation independently."""
    # the frame block is quadratic in the frames, so its step only ever grows
    frames, tau = _image_block(state.frames, state.fields, op, data, params, state.tau, pp, scheme)
    fields, sigma = _field_block(frames, state.fields, params, state.sigma * pp.relax, pp, scheme)
    return PalmState(frames, fields, tau, sigma)


def palm_level(frames, fields, level, params, cfg, log, l, pp=None, scheme=None):
    """Run PALM on one level until the objective stalls."""
    pp = pp or PalmParams()
    scheme = scheme or cfg.scheme
    if pp.tau is None:
        tau = 1.05 * frame_lipschitz(frames, fields, params, scheme,
                                     op=level.op if pp.smooth_data else None)
    else:
        tau = pp.tau
    state = PalmState(list(frames), list(fields), max(tau, 1e-12), pp.sigma)
    J = full_objective(state.frames, state.fields, level.op, level.B, params, scheme)
    for it in range(pp.max_iters):
        state = palm_step(state, level.op, level.B, params, pp, scheme)
        J_new = full_objective(state.frames, state.fields, level.op, level.B, params, scheme)
        if not math.isfinite(J_new):
            raise FloatingPointError(f"non-finite objective at PALM iteration {it}")
        log.append(dict(level=l, iter=it, K=len(state.fields), objective_start=J,
                        objective=J_new, tau=state.tau, sigma=state.sigma))
        done = J - J_new <= pp.tol * abs(J)
        J = J_new
        if done:
            break
    return state.frames, state.fields


def run_palm(R, B, op, cfg=None, pp=None, ground_truth=None, frames=None, fields=None):
    """PALM reconstruction.

    With ``frames`` and ``fields`` given, PALM runs on that single level
    starting from them; otherwise the coarse-to-fine driver is reused with
    PALM as the per-level solver.
    """
    cfg = cfg or RunConfig()
    pp = pp or PalmParams()
    if frames is not None:
        level = Level(np.asarray(R, dtype=np.float64), np.asarray(B, dtype=np.float64), op,
                      truth=ground_truth)
        log = []
        params = cfg.energy
        out_f, out_v = palm_level(frames, fields, level, params, cfg, log, 0, pp)
        return RunResult(out_f, out_v, log, [])

    def solver(fr, fi, level, params, c, log, l):
        return palm_level(fr, fi, level, params, c, log, l, pp)

    return run_tdm_inv(R, B, op, cfg, ground_truth, level_solver=solver)
