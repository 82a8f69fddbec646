"""Linear measurement operators, their coarsening rules and noise simulation."""
from __future__ import annotations

import math

import numpy as np
from scipy import sparse

from .grid import check_image, gaussian_downsample, warp, warp_adjoint


class OperatorError(ValueError):
    pass


def make_rng(seed):
    """Counter-based 64-bit generator so noise is reproducible across platforms."""
    return np.random.Generator(np.random.Philox(int(seed)))


class MeasurementOp:
    """Linear map from images of ``input_shape`` to data of ``output_shape``."""

    input_shape: tuple
    output_shape: tuple

    def apply(self, x):
        raise NotImplementedError

    def adjoint(self, y):
        raise NotImplementedError

    def coarsen(self, data):
        """Operator and data for the grid of half the resolution."""
        raise NotImplementedError

    def geometry(self):
        raise NotImplementedError

    def __call__(self, x):
        return self.apply(x)

    def _check_in(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.input_shape:
            raise OperatorError(f"expected image of shape {self.input_shape}, got {x.shape}")
        return x

    def _check_out(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != self.output_shape:
            raise OperatorError(f"expected data of shape {self.output_shape}, got {y.shape}")
        return y


class MatrixOp(MeasurementOp):
    """Operator backed by an explicit sparse matrix; the adjoint is its transpose."""

    def __init__(self, matrix, input_shape, output_shape):
        self.matrix = sparse.csr_matrix(matrix)
        self.matrix_t = self.matrix.T.tocsr()
        self.input_shape = tuple(input_shape)
        self.output_shape = tuple(output_shape)

    def apply(self, x):
        return (self.matrix @ self._check_in(x).ravel()).reshape(self.output_shape)

    def adjoint(self, y):
        return (self.matrix_t @ self._check_out(y).ravel()).reshape(self.input_shape)


def _joseph_matrix(n, angles_deg, rays):
    """Parallel-beam projector by Joseph's method.

    For each ray, the image is interpolated linearly across the secondary
    axis at every pixel centre along the dominant axis and weighted by the
    path length per step.  Detectors span the image diagonal, centred.
    """
    c = (n - 1) / 2.0
    spacing = n * math.sqrt(2.0) / rays
    s = (np.arange(rays) - (rays - 1) / 2.0) * spacing
    idx = np.arange(n, dtype=np.float64)
    rows, cols, vals = [], [], []
    for a, theta in enumerate(np.deg2rad(np.asarray(angles_deg, dtype=np.float64))):
        nv = (math.cos(theta), math.sin(theta))
        dv = (-math.sin(theta), math.cos(theta))
        major = 0 if abs(dv[0]) >= abs(dv[1]) else 1
        minor = 1 - major
        t = (idx[None, :] - c - s[:, None] * nv[major]) / dv[major]
        pos = c + s[:, None] * nv[minor] + t * dv[minor]
        k0 = np.floor(pos).astype(np.intp)
        f = pos - k0
        w = 1.0 / abs(dv[major])
        ray = np.broadcast_to(a * rays + np.arange(rays)[:, None], pos.shape)
        step = np.broadcast_to(np.arange(n)[None, :], pos.shape)
        for kk, ww in ((k0, (1.0 - f) * w), (k0 + 1, f * w)):
            ok = (kk >= 0) & (kk < n) & (ww != 0.0)
            pix = np.where(major == 0, step * n + kk, kk * n + step)
            rows.append(ray[ok])
            cols.append(pix[ok])
            vals.append(ww[ok])
    m = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(angles_deg) * rays, n * n),
    )
    return m.tocsr()


class RadonOp(MatrixOp):
    """Discrete parallel-beam Radon transform on an ``n x n`` grid.

    Data has shape ``(len(angles), rays)``; angles are in degrees.
    """

    def __init__(self, n, angles, rays=None):
        angles = [float(a) for a in angles]
        if not angles:
            raise OperatorError("need at least one projection angle")
        if rays is None:
            rays = math.ceil(1.5 * n)
        if rays < 2:
            raise OperatorError("need at least two rays")
        self.n = int(n)
        self.angles = angles
        self.rays = int(rays)
        super().__init__(_joseph_matrix(self.n, angles, self.rays), (n, n), (len(angles), self.rays))

    def coarsen(self, data):
        return radon_coarsen(self, data)

    def geometry(self):
        return {
            "operator": "radon",
            "n": self.n,
            "rays": self.rays,
            "angles": ",".join(f"{a:g}" for a in self.angles),
        }


class DownsampleOp(MeasurementOp):
    """Block averaging ``B = P I P^T`` where ``P`` averages ``factor`` samples."""

    def __init__(self, shape, factor):
        if isinstance(shape, int):
            shape = (shape, shape)
        factor = int(factor)
        if factor < 1 or any(n % factor for n in shape):
            raise OperatorError(f"grid {tuple(shape)} not divisible by factor {factor}")
        self.factor = factor
        self.input_shape = tuple(shape)
        self.output_shape = tuple(n // factor for n in shape)

    def apply(self, x):
        x = self._check_in(x)
        f = self.factor
        if f == 1:
            return x.copy()
        m1, m2 = self.output_shape
        return x.reshape(m1, f, m2, f).mean(axis=(1, 3))

    def adjoint(self, y):
        y = self._check_out(y)
        f = self.factor
        if f == 1:
            return y.copy()
        return np.repeat(np.repeat(y, f, axis=0), f, axis=1) / (f * f)

    def coarsen(self, data):
        return p4_coarsen(self, data)

    def geometry(self):
        return {"operator": "downsample", "shape": "%d,%d" % self.input_shape, "factor": self.factor}


class IdentityOp(DownsampleOp):
    def __init__(self, shape):
        super().__init__(shape, 1)

    def geometry(self):
        return {"operator": "identity", "shape": "%d,%d" % self.input_shape}


class ScalingOp(MeasurementOp):
    """Multiplication by a constant; used for diagnostics."""

    def __init__(self, shape, scale):
        self.input_shape = self.output_shape = tuple(shape)
        self.scale = float(scale)

    def apply(self, x):
        return self.scale * self._check_in(x)

    def adjoint(self, y):
        return self.scale * self._check_out(y)

    def coarsen(self, data):
        return ScalingOp(tuple(-(-n // 2) for n in self.input_shape), self.scale), gaussian_downsample(data)

    def geometry(self):
        return {"operator": "scaling", "shape": "%d,%d" % self.input_shape, "scale": self.scale}


class WarpOp(MeasurementOp):
    """``x -> scale * warp(x, v)`` for a fixed displacement."""

    def __init__(self, field, scale=1.0, scheme="bilinear"):
        self.field = field
        self.scale = float(scale)
        self.scheme = scheme
        self.input_shape = self.output_shape = tuple(field.shape)

    def apply(self, x):
        return self.scale * warp(self._check_in(x), self.field, self.scheme)

    def adjoint(self, y):
        return self.scale * warp_adjoint(self._check_out(y), self.field, self.scheme)


class StackedOp(MeasurementOp):
    """Several operators on the same images, outputs concatenated into one vector."""

    def __init__(self, ops):
        ops = list(ops)
        if not ops or len({op.input_shape for op in ops}) != 1:
            raise OperatorError("stacked operators need one common input shape")
        self.ops = ops
        self.input_shape = ops[0].input_shape
        self._sizes = [int(np.prod(op.output_shape)) for op in ops]
        self.output_shape = (sum(self._sizes),)

    def stack(self, parts):
        return np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in parts])

    def apply(self, x):
        x = self._check_in(x)
        return self.stack([op.apply(x) for op in self.ops])

    def adjoint(self, y):
        y = self._check_out(y)
        out = np.zeros(self.input_shape)
        start = 0
        for op, n in zip(self.ops, self._sizes):
            out += op.adjoint(y[start:start + n].reshape(op.output_shape))
            start += n
        return out


def radon_make(n, angles, rays=None):
    return RadonOp(n, angles, rays)


def limited_angles(count=10, step=9.0):
    """Angles ``0, step, ..., (count - 1) * step`` in degrees."""
    return [i * step for i in range(count)]


def equispaced_angles(count=20):
    """``count`` angles equally spaced over ``[0, 180)``."""
    return [180.0 * i / count for i in range(count)]


def radon_coarsen(op, data):
    """Half-resolution Radon operator and data.

    Neighbouring rays are averaged and scaled by 1/2 because line integrals
    measured in coarse pixel units are half as long.
    """
    data = op._check_out(data)
    if op.rays % 2:
        raise OperatorError(f"cannot coarsen an odd ray count ({op.rays})")
    if op.n % 2:
        raise OperatorError(f"cannot coarsen an odd grid size ({op.n})")
    coarse = RadonOp(op.n // 2, op.angles, op.rays // 2)
    return coarse, 0.25 * (data[:, 0::2] + data[:, 1::2])


def p4_make(n, factor=4):
    return DownsampleOp(n, factor)


def p4_coarsen(op, data):
    """Halve the averaging factor and keep the data.

    Once the factor reaches 1 the operator is the identity, and further
    coarsening downsamples the data together with the grid.
    """
    data = op._check_out(data)
    half = tuple(n // 2 for n in op.input_shape)
    if op.factor >= 2:
        f = op.factor // 2
        return (DownsampleOp(half, f) if f > 1 else IdentityOp(half)), data
    half = tuple(-(-n // 2) for n in op.input_shape)
    return IdentityOp(half), gaussian_downsample(data)


def op_from_geometry(meta):
    """Rebuild an operator from a geometry mapping (sidecar or config)."""
    kind = meta["operator"]
    if kind == "radon":
        angles = [float(a) for a in str(meta["angles"]).split(",") if a]
        return RadonOp(int(meta["n"]), angles, int(meta["rays"]))
    shape = tuple(int(s) for s in str(meta["shape"]).split(","))
    if kind == "downsample":
        return DownsampleOp(shape, int(meta["factor"]))
    if kind == "identity":
        return IdentityOp(shape)
    if kind == "scaling":
        return ScalingOp(shape, float(meta["scale"]))
    raise OperatorError(f"unknown operator {kind!r}")


def add_gaussian_noise(data, level, seed):
    """Add i.i.d. Gaussian noise with standard deviation ``level * RMS(data)``."""
    if level < 0:
        raise ValueError("noise level must be nonnegative")
    data = np.asarray(data, dtype=np.float64)
    if level == 0:
        return data.copy()
    sigma = level * np.linalg.norm(data) / math.sqrt(data.size)
    return data + sigma * make_rng(seed).standard_normal(data.shape)


def adjoint_check(op, trials=10, seed=0):
    """Largest relative mismatch ``|<Ax, y> - <x, A^T y>| / (|Ax| |y|)`` over random pairs."""
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.input_shape)
        y = rng.standard_normal(op.output_shape)
        ax = op.apply(x)
        lhs = float(np.vdot(ax, y))
        rhs = float(np.vdot(x, op.adjoint(y)))
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(ax) * np.linalg.norm(y) + 1e-300))
    return worst


def op_norm_estimate(op, iters=50, seed=0):
    """Power-method estimate of the spectral norm; nondecreasing in ``iters``."""
    if iters < 1:
        raise ValueError("iters must be at least 1")
    x = make_rng(seed).standard_normal(op.input_shape)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        y = op.apply(x)
        est = float(np.linalg.norm(y))
        x = op.adjoint(y)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            break
        x /= nx
    return est
