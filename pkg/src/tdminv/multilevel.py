"""Coarse-to-fine driver for the path-regularized reconstruction.

Level 0 is the finest grid.  The coarsest level is initialized by an L2-TV
reconstruction and one registration toward the reference; every level then
alternates registrations and the image step, and the result is prolonged to
the next finer level with new frames seeded along each deformation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convex import PDParams, solve_l2tv
from .energy import EnergyParams, full_objective
from .grid import (
    DisplacementField,
    LayoutError,
    check_image,
    gaussian_downsample,
    identity_map,
    resize_image,
    sample,
    stagger_average,
    upsample_displacement,
)
from .metrics import SSIM_WINDOW, psnr, ssim
from .morph import desubstitute, grid_image_step, inner_alternation, substitute
from .registration import RegParams, register

MIN_COARSE_SIZE = 8


class DivergenceError(FloatingPointError):
    """The iteration produced non-finite values."""


def default_ktilde(lev):
    """Frames inserted when prolonging onto level ``l``: 2 at the first prolongation, 1 at the second."""
    k = [0] * lev
    if lev >= 1:
        k[lev - 1] = 2
    if lev >= 2:
        k[lev - 2] = 1
    return tuple(k)


@dataclass
class Level:
    R: np.ndarray
    B: np.ndarray
    op: object
    ktilde: int = 0
    truth: np.ndarray | None = None

    @property
    def shape(self):
        return self.R.shape


@dataclass
class LevelStack:
    levels: list

    @property
    def lev(self):
        return len(self.levels) - 1

    @property
    def coarsest(self):
        return self.levels[-1]

    def __getitem__(self, l):
        return self.levels[l]


def build_stack(R, B, op, lev, ktilde=None, truth=None):
    R = check_image(R, "reference")
    if lev < 0:
        raise ValueError("lev must be nonnegative")
    size = min(R.shape)
    for _ in range(lev):
        size = -(-size // 2)
    if size < MIN_COARSE_SIZE:
        raise LayoutError(f"{R.shape} grid cannot be halved {lev} times "
                          f"(coarsest side {size} < {MIN_COARSE_SIZE})")
    ktilde = default_ktilde(lev) if ktilde is None else tuple(int(k) for k in ktilde)
    if len(ktilde) < lev or any(k < 0 for k in ktilde):
        raise ValueError(f"need {lev} nonnegative frame increments, got {ktilde}")
    B = np.asarray(B, dtype=np.float64)
    levels = [Level(R, B, op, ktilde[0] if lev else 0, truth)]
    for l in range(1, lev + 1):
        prev = levels[-1]
        op_c, B_c = prev.op.coarsen(prev.B)
        t = None if prev.truth is None else gaussian_downsample(prev.truth)
        levels.append(Level(gaussian_downsample(prev.R), B_c, op_c,
                            ktilde[l] if l < lev else 0, t))
    return LevelStack(levels)


@dataclass
class RunConfig:
    lev: int = 3
    energy: EnergyParams = field(default_factory=EnergyParams)
    reg: RegParams = field(default_factory=RegParams)
    pd: PDParams = field(default_factory=PDParams)
    ktilde: tuple | None = None
    outer_iters: int = 5
    outer_tol: float = 1e-4
    anneal: float = 0.7
    max_inner: int = 10
    inner_tol: float = 1e-5
    grid_rounds: int = 2
    seed: int = 0
    scheme: str = "bilinear"

    def __post_init__(self):
        if self.lev < 0 or self.outer_iters < 1:
            raise ValueError("lev must be >= 0 and outer_iters >= 1")
        if not 0.0 < self.anneal <= 1.0:
            raise ValueError("anneal must lie in (0, 1]")

    def level_params(self, l):
        """Energy weights on level ``l``; the deformation scale shrinks toward finer levels."""
        return self.energy.with_reg_scale(self.energy.reg_scale * self.anneal ** (self.lev - l))


@dataclass
class RunResult:
    frames: list
    fields: list
    log: list
    level_metrics: list
    snapshots: list = field(default_factory=list)


def init_coarse(stack, cfg):
    """L2-TV reconstruction on the coarsest level and its registration to the reference."""
    lv = stack.coarsest
    params = cfg.level_params(stack.lev)
    img = solve_l2tv(lv.op, lv.B, params.alpha, pd=cfg.pd)
    v = register(img, lv.R, None, params, cfg.reg, cfg.scheme)
    return img, v


def seed_path(R, v, ktilde):
    """Frames ``R(x + (k / ktilde) Pv(x))`` for ``k = 0..ktilde``."""
    if ktilde < 1:
        raise ValueError("ktilde must be at least 1")
    R = check_image(R, "reference")
    x = identity_map(R.shape)
    pv = stagger_average(v)
    return [R.copy()] + [sample(R, x + (k / ktilde) * pv) for k in range(1, ktilde + 1)]


def prolong(frames, fields, level):
    """Carry a path to ``level``'s grid and insert ``level.ktilde`` frames per step."""
    shape = level.shape
    up_frames = [resize_image(f, shape) for f in frames[:-1]] + [level.R.copy()]
    up_fields = [upsample_displacement(v, shape) for v in fields]
    m = level.ktilde + 1
    if m == 1:
        return up_frames, up_fields
    new_frames, new_fields = [], []
    for k, v in enumerate(up_fields):
        seeded = seed_path(up_frames[k + 1], v, m)
        new_frames.append(up_frames[k])
        new_frames.extend(seeded[j] for j in range(m - 1, 0, -1))
        new_fields.extend(v * (1.0 / m) for _ in range(m))
    new_frames.append(up_frames[-1])
    return new_frames, new_fields


def _check_finite(frames, fields, where):
    ok = all(np.all(np.isfinite(f)) for f in frames)
    ok = ok and all(np.all(np.isfinite(v.v1)) and np.all(np.isfinite(v.v2)) for v in fields)
    if not ok:
        raise DivergenceError(f"non-finite values after {where}")


def image_step(frames, fields, level, params, cfg):
    """Update the frames for fixed deformations without increasing the objective.

    The pulled-back problem is solved first.  Pushing its frames forward by
    scattered interpolation can raise the objective, in which case shorter
    steps toward them are tried before the old frames are kept.  The result
    is then refined by ``cfg.grid_rounds`` rounds of block descent on the grid.
    Returns the frames, the objective and the accepted fraction of the
    pulled-back step.
    """
    J0 = full_objective(frames, fields, level.op, level.B, params, cfg.scheme)
    sub = substitute(frames, fields)
    sub = inner_alternation(sub, level.op, level.B, params.alpha, params.beta, cfg.pd,
                            cfg.max_inner, cfg.inner_tol)
    new = desubstitute(sub, level.R)
    out, J, frac = frames, J0, 0.0
    for s in (1.0, 0.5, 0.25):
        trial = new if s == 1.0 else [(1.0 - s) * a + s * b for a, b in zip(frames, new)]
        trial[-1] = level.R
        Jt = full_objective(trial, fields, level.op, level.B, params, cfg.scheme)
        if Jt <= J0:
            out, J, frac = trial, Jt, s
            break
    if cfg.grid_rounds:
        refined = grid_image_step(out, fields, level.op, level.B, params.alpha, params.beta,
                                  cfg.pd, cfg.grid_rounds, scheme=cfg.scheme)
        Jr = full_objective(refined, fields, level.op, level.B, params, cfg.scheme)
        if Jr <= J:
            out, J = refined, Jr
    return out, J, frac


def alternating_level(frames, fields, level, params, cfg, log, l):
    J = full_objective(frames, fields, level.op, level.B, params, cfg.scheme)
    for outer in range(cfg.outer_iters):
        J_start = J
        fields = [register(frames[k], frames[k + 1], fields[k], params, cfg.reg, cfg.scheme)
                  for k in range(len(fields))]
        _check_finite(frames, fields, f"registration (level {l}, iteration {outer})")
        J_reg = full_objective(frames, fields, level.op, level.B, params, cfg.scheme)
        frames, J, s = image_step(frames, fields, level, params, cfg)
        _check_finite(frames, fields, f"image step (level {l}, iteration {outer})")
        log.append(dict(level=l, iter=outer, K=len(fields), objective_start=J_start,
                        objective_reg=J_reg, objective=J, image_step=s))
        if J_start - J < cfg.outer_tol * abs(J_start):
            break
    return frames, fields


def _quality(img, truth):
    if truth is None or min(img.shape) < SSIM_WINDOW:
        return math.nan, math.nan
    return ssim(img, truth), psnr(img, truth)


def run_tdm_inv(R, B, op, cfg=None, ground_truth=None, level_solver=None):
    """Reconstruct from data ``B`` of ``op`` with a path toward the reference ``R``.

    ``level_solver(frames, fields, level, params, cfg, log, l)`` replaces the
    alternating scheme on each level when given.
    """
    cfg = cfg or RunConfig()
    solve = level_solver or alternating_level
    stack = build_stack(R, B, op, cfg.lev, cfg.ktilde, ground_truth)
    img, v = init_coarse(stack, cfg)
    frames = [img, stack.coarsest.R.copy()]
    fields = [v]
    _check_finite(frames, fields, "initialization")
    log, metrics, snaps = [], [], []
    for l in range(cfg.lev, -1, -1):
        level = stack[l]
        if l < cfg.lev:
            frames, fields = prolong(frames, fields, level)
        params = cfg.level_params(l)
        frames, fields = solve(frames, fields, level, params, cfg, log, l)
        s, p = _quality(frames[0], level.truth)
        metrics.append(dict(level=l, K=len(fields), ssim=s, psnr=p,
                            objective=full_objective(frames, fields, level.op, level.B,
                                                     params, cfg.scheme)))
        snaps.append(frames[0].copy())
    return RunResult(frames, fields, log, metrics, snaps)


def zero_path(shape, K):
    return [DisplacementField.zeros(shape) for _ in range(K)]
