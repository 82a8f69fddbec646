"""Experiment specifications, end-to-end runs and the parameter grid search.

A specification is a flat text file with one ``key = value`` pair per line;
``#`` starts a comment.  Every key is a field of :class:`ExperimentSpec` and
unknown keys are rejected.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .convex import PDParams, solve_l2tv
from .energy import EnergyParams
from .grid import check_image, resize_image
from .imageio import read_image, write_pfm, write_pgm, write_sinogram
from .metrics import psnr, ssim
from .multilevel import RunConfig, run_tdm_inv
from .operators import (
    DownsampleOp,
    IdentityOp,
    RadonOp,
    add_gaussian_noise,
    equispaced_angles,
    limited_angles,
)
from .palm import PalmParams, run_palm
from .phantoms import KINDS, make_phantom
from .registration import RegParams

TASKS = ("ct", "superres", "denoise")
METHODS = ("alternating", "palm")
OUTPUT_ROOT_ENV = "TDMINV_OUTPUT_ROOT"


class SpecError(ValueError):
    """Malformed or inconsistent experiment specification."""


@dataclass
class ExperimentSpec:
    task: str = "ct"
    phantom: str = "ellipses"
    size: int = 64
    phantom_seed: int = 1
    deform: bool = True
    detail: str = "auto"
    # a file pair replaces the generated phantom when both are set
    reference_file: str = ""
    target_file: str = ""
    angles: int = 20
    angle_mode: str = "equispaced"
    angle_step: float = 9.0
    rays: int = 0
    factor: int = 4
    noise: float = 0.05
    noise_seed: int = 7
    method: str = "alternating"
    alpha: float = 4.0
    beta: float = 50.0
    reg_scale: float = 0.05
    lev: int = 1
    ktilde: str = ""
    outer_iters: int = 5
    anneal: float = 0.7
    max_inner: int = 10
    grid_rounds: int = 2
    scheme: str = "bilinear"
    seed: int = 0
    palm_iters: int = 100
    l2tv: bool = True
    l2tv_alpha: float = 0.0
    bicubic: bool = True
    output: str = "out"

    def __post_init__(self):
        if self.task not in TASKS:
            raise SpecError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.phantom not in KINDS:
            raise SpecError(f"phantom must be one of {KINDS}, got {self.phantom!r}")
        if self.method not in METHODS:
            raise SpecError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.angle_mode not in ("equispaced", "limited"):
            raise SpecError("angle_mode must be 'equispaced' or 'limited'")
        if self.detail not in ("auto", "yes", "no"):
            raise SpecError("detail must be 'auto', 'yes' or 'no'")
        if bool(self.reference_file) != bool(self.target_file):
            raise SpecError("reference_file and target_file must be given together")
        if self.noise < 0 or self.angles < 1 or self.factor < 1:
            raise SpecError("noise must be nonnegative; angles and factor positive")

    def energy(self):
        return EnergyParams.from_reg_scale(self.alpha, self.beta, self.reg_scale)

    def run_config(self):
        kt = tuple(int(k) for k in self.ktilde.split(",") if k.strip()) or None
        return RunConfig(lev=self.lev, energy=self.energy(), reg=RegParams(), pd=PDParams(),
                         ktilde=kt, outer_iters=self.outer_iters, anneal=self.anneal,
                         max_inner=self.max_inner, grid_rounds=self.grid_rounds,
                         seed=self.seed, scheme=self.scheme)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentSpec)}


def _coerce(key, text):
    kind = _FIELDS[key].type
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise SpecError(f"bad value for {key}: {text!r} (expected {kind})") from None
    return text


def spec_from_mapping(values, base=None):
    """Build a spec from string values; unknown keys raise :class:`SpecError`."""
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise SpecError(f"unknown key(s): {', '.join(unknown)}")
    typed = {k: _coerce(k, str(v)) if isinstance(v, str) else v for k, v in values.items()}
    return dataclasses.replace(base or ExperimentSpec(), **typed)


def parse_spec(text, base=None):
    values = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise SpecError(f"line {no}: expected 'key = value', got {raw.strip()!r}")
        key = key.strip()
        if key in values:
            raise SpecError(f"line {no}: duplicate key {key!r}")
        values[key] = value
    return spec_from_mapping(values, base)


def load_spec(path):
    return parse_spec(Path(path).read_text())


def spec_text(spec):
    """Canonical echo: every key in declaration order."""
    lines = []
    for name in _FIELDS:
        v = getattr(spec, name)
        lines.append(f"{name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def config_hash(spec):
    """Short digest of everything but the output location."""
    text = spec_text(spec.replace(output=""))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def output_dir(spec):
    out = Path(spec.output)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


# --- problem setup ----------------------------------------------------------

@dataclass
class Problem:
    reference: np.ndarray
    target: np.ndarray
    op: object
    data: np.ndarray
    detail_mask: np.ndarray | None


def make_operator(spec, n):
    if spec.task == "ct":
        if spec.angle_mode == "equispaced":
            angles = equispaced_angles(spec.angles)
        else:
            angles = limited_angles(spec.angles, spec.angle_step)
        return RadonOp(n, angles, spec.rays or None)
    if spec.task == "superres":
        return DownsampleOp(n, spec.factor)
    return IdentityOp((n, n))


def make_problem(spec):
    mask = None
    if spec.reference_file:
        reference = check_image(read_image(spec.reference_file), "reference")
        target = check_image(read_image(spec.target_file), "target")
        if reference.shape != target.shape or reference.shape[0] != reference.shape[1]:
            raise SpecError("reference and target must be square images of the same size")
    else:
        detail = None if spec.detail == "auto" else spec.detail == "yes"
        ph = make_phantom(spec.phantom, spec.size, spec.phantom_seed, spec.deform, detail)
        reference, target = ph.reference, ph.target
        mask = ph.detail_mask if ph.detail_mask.any() else None
    op = make_operator(spec, reference.shape[0])
    data = add_gaussian_noise(op.apply(target), spec.noise, spec.noise_seed)
    return Problem(reference, target, op, data, mask)


# --- running ----------------------------------------------------------------

@dataclass
class MethodResult:
    method: str
    image: np.ndarray
    ssim: float
    psnr: float
    runtime: float
    detail_mse: float


@dataclass
class Report:
    spec: ExperimentSpec
    config_hash: str
    rows: list
    frames: list
    log: list
    snapshots: list
    out_dir: Path | None

    def row(self, method):
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def _score(method, img, problem, runtime):
    mse = float("nan")
    if problem.detail_mask is not None:
        m = problem.detail_mask
        mse = float(((img[m] - problem.target[m]) ** 2).mean())
    return MethodResult(method, img, ssim(img, problem.target), psnr(img, problem.target),
                        runtime, mse)


def run_tdm(spec, problem):
    cfg = spec.run_config()
    if spec.method == "palm":
        return run_palm(problem.reference, problem.data, problem.op, cfg,
                        PalmParams(max_iters=spec.palm_iters), ground_truth=problem.target)
    return run_tdm_inv(problem.reference, problem.data, problem.op, cfg,
                       ground_truth=problem.target)


def run_baselines(spec, problem):
    rows = []
    if spec.l2tv:
        t = time.perf_counter()
        img = solve_l2tv(problem.op, problem.data, spec.l2tv_alpha or spec.alpha)
        rows.append(_score("l2tv", img, problem, time.perf_counter() - t))
    if spec.bicubic and spec.task == "superres":
        t = time.perf_counter()
        img = resize_image(problem.data, problem.target.shape, "bicubic")
        rows.append(_score("bicubic", img, problem, time.perf_counter() - t))
    return rows


def run_experiment(spec, write=True, tdm=True):
    """Simulate data, reconstruct and score; optionally write all artifacts."""
    problem = make_problem(spec)
    rows, frames, log, snaps = [], [], [], []
    if tdm:
        t = time.perf_counter()
        res = run_tdm(spec, problem)
        rows.append(_score("tdm-inv", res.frames[0], problem, time.perf_counter() - t))
        frames, log, snaps = res.frames, res.log, res.snapshots
    rows += run_baselines(spec, problem)
    report = Report(spec, config_hash(spec), rows, frames, log, snaps, None)
    if write:
        report.out_dir = write_report(report, problem)
    return report


def _write_image(base, img):
    write_pgm(base.with_suffix(".pgm"), img)
    write_pfm(base.with_suffix(".pfm"), img)


def write_results_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "ssim", "psnr", "runtime", "config_hash", "detail_mse"])
        for r in report.rows:
            w.writerow([r.method, repr(r.ssim), repr(r.psnr), f"{r.runtime:.3f}",
                        report.config_hash, "" if np.isnan(r.detail_mse) else repr(r.detail_mse)])


def write_log_csv(path, log):
    keys = []
    for row in log:
        keys += [k for k in row if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in log:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_report(report, problem):
    out = output_dir(report.spec)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(spec_text(report.spec))
    _write_image(out / "reference", problem.reference)
    _write_image(out / "target", problem.target)
    if report.spec.task == "ct":
        write_sinogram(out / "data.pfm", problem.data, problem.op)
    else:
        _write_image(out / "data", problem.data)
    for r in report.rows:
        _write_image(out / r.method, r.image)
    if report.frames:
        fdir = out / "frames"
        fdir.mkdir(exist_ok=True)
        for k, f in enumerate(report.frames):
            write_pfm(fdir / f"frame_{k:02d}.pfm", f)
        sdir = out / "levels"
        sdir.mkdir(exist_ok=True)
        lev = len(report.snapshots) - 1
        for i, img in enumerate(report.snapshots):
            write_pfm(sdir / f"level_{lev - i}.pfm", img)
        write_log_csv(out / "objective_log.csv", report.log)
    write_results_csv(out / "results.csv", report)
    return out


# --- grid search ------------------------------------------------------------

@dataclass
class GridResult:
    best: ExperimentSpec
    table: list


def grid_search(spec, alphas, betas, reg_scales, write=True):
    """Evaluate TDM-INV on every ``(alpha, beta, reg_scale)`` and pick the best SSIM.

    Ties go to the higher PSNR, then to the lexicographically smallest triple.
    """
    alphas, betas, reg_scales = list(alphas), list(betas), list(reg_scales)
    if not (alphas and betas and reg_scales):
        raise SpecError("grid search needs nonempty grids")
    problem = make_problem(spec)
    table = []
    for a, b, r in itertools.product(alphas, betas, reg_scales):
        cell = spec.replace(alpha=float(a), beta=float(b), reg_scale=float(r))
        t = time.perf_counter()
        res = run_tdm(cell, problem)
        s = _score("tdm-inv", res.frames[0], problem, time.perf_counter() - t)
        table.append(dict(alpha=cell.alpha, beta=cell.beta, reg_scale=cell.reg_scale,
                          ssim=s.ssim, psnr=s.psnr, runtime=s.runtime))
    top = min(table, key=lambda c: (-c["ssim"], -c["psnr"], c["alpha"], c["beta"], c["reg_scale"]))
    best = spec.replace(alpha=top["alpha"], beta=top["beta"], reg_scale=top["reg_scale"])
    if write:
        out = output_dir(spec)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "gridsearch.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "beta", "reg_scale", "ssim", "psnr", "runtime"])
            for c in table:
                w.writerow([repr(c["alpha"]), repr(c["beta"]), repr(c["reg_scale"]),
                            repr(c["ssim"]), repr(c["psnr"]), f"{c['runtime']:.3f}"])
        (out / "best_config.txt").write_text(spec_text(best))
    return GridResult(best, table)
