"""Discrete energies of the reconstruction model and their derivatives.

All energies are sums over the pixel grid (midpoint rule, unit spacing).
Quadratic regularizers return ``(value, gradient)``; because they are
quadratic, their gradient evaluated at a direction is also their Hessian
applied to that direction.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .grid import (
    DisplacementField,
    LayoutError,
    check_image,
    sample_grad,
    stagger_average,
    stagger_average_adjoint,
    warp,
    warp_points,
)


@dataclass
class EnergyParams:
    """Weights of the objective.

    ``mu`` and ``lam`` weight the linearized elastic potential, ``nu`` the
    third-order smoothness term and ``eta`` the zero-order term inside it.
    """

    alpha: float = 0.05
    beta: float = 0.1
    mu: float = 0.07
    lam: float = 0.07
    nu: float = 0.07
    eta: float = 0.0007

    def __post_init__(self):
        vals = [self.alpha, self.beta, self.mu, self.lam, self.nu, self.eta]
        if not all(np.isfinite(vals)):
            raise ValueError("energy weights must be finite")
        if self.alpha <= 0 or self.beta <= 0 or self.nu <= 0:
            raise ValueError("alpha, beta and nu must be positive")
        if self.mu < 0 or self.lam < 0 or self.eta < 0:
            raise ValueError("mu, lam and eta must be nonnegative")

    @classmethod
    def from_reg_scale(cls, alpha, beta, reg_scale):
        """Tie the deformation weights as ``lam = mu = nu = 100 * eta = reg_scale``."""
        return cls(alpha, beta, reg_scale, reg_scale, reg_scale, reg_scale / 100.0)

    def with_reg_scale(self, reg_scale):
        return EnergyParams.from_reg_scale(self.alpha, self.beta, reg_scale)

    @property
    def reg_scale(self):
        return self.mu


# --- image gradient and TV ------------------------------------------------

def image_gradient(img):
    """Forward differences with a zero difference on the last row/column."""
    g = np.zeros((2,) + img.shape)
    g[0, :-1] = img[1:] - img[:-1]
    g[1, :, :-1] = img[:, 1:] - img[:, :-1]
    return g


def image_divergence(p):
    """Negative transpose of :func:`image_gradient`."""
    d = np.zeros(p.shape[1:])
    d[:-1] += p[0, :-1]
    d[1:] -= p[0, :-1]
    d[:, :-1] += p[1, :, :-1]
    d[:, 1:] -= p[1, :, :-1]
    return d


def tv_value(img):
    """Isotropic total variation with forward differences."""
    g = image_gradient(np.asarray(img, dtype=np.float64))
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())


# --- 1D difference matrices ------------------------------------------------

@lru_cache(maxsize=None)
def _diff_padded(m):
    """Forward differences of ``m`` interior face values with zero boundary faces: (m+1) x m."""
    e = np.ones(m + 1)
    return sparse.diags([e[:m], -e[:m]], [0, -1], shape=(m + 1, m), format="csr")


@lru_cache(maxsize=None)
def _diff_operator(m, order):
    """Difference of the given order along an axis of length ``m``.

    Order 1 is a forward difference dropping the last sample; orders 2 and 3
    are central differences with zero padding.
    """
    if order == 0:
        return sparse.identity(m, format="csr")
    if order == 1:
        e = np.ones(m)
        return sparse.diags([-e[: m - 1], e[: m - 1]], [0, 1], shape=(m - 1, m), format="csr")
    if order == 2:
        e = np.ones(m)
        return sparse.diags([e[: m - 1], -2.0 * e, e[: m - 1]], [-1, 0, 1], shape=(m, m), format="csr")
    if order == 3:
        e = np.ones(m)
        return sparse.diags(
            [-0.5 * e[: m - 2], e[: m - 1], -e[: m - 1], 0.5 * e[: m - 2]],
            [-2, -1, 1, 2], shape=(m, m), format="csr")
    raise ValueError("order must be 0..3")


def _apply2(a, b, f):
    """``a @ f @ b.T`` for sparse ``a``, ``b``."""
    return np.asarray((b @ np.asarray(a @ f).T).T)


def _apply2_t(a, b, g):
    """Adjoint of :func:`_apply2`: ``a.T @ g @ b``."""
    return np.asarray((b.T @ np.asarray(a.T @ g).T).T)


# --- elastic potential -----------------------------------------------------

def _strains(v):
    n1, n2 = v.shape
    a = _diff_padded(n1 - 1) @ v.v1                          # d1 v1 on cells
    d = (_diff_padded(n2 - 1) @ v.v2.T).T                    # d2 v2 on cells
    b = v.v1[:, 1:] - v.v1[:, :-1]                           # d2 v1 on nodes
    c = v.v2[1:] - v.v2[:-1]                                 # d1 v2 on nodes
    return a, d, b, c


def elastic_value_grad(v, mu, lam):
    """Linearized elastic potential of a staggered displacement and its gradient."""
    n1, n2 = v.shape
    a, d, b, c = _strains(v)
    s = b + c
    div = a + d
    value = mu * ((a ** 2).sum() + (d ** 2).sum() + 0.5 * (s ** 2).sum()) + 0.5 * lam * (div ** 2).sum()
    ga = 2.0 * mu * a + lam * div
    gd = 2.0 * mu * d + lam * div
    gs = mu * s
    g1 = _diff_padded(n1 - 1).T @ ga
    g1[:, 1:] += gs
    g1[:, :-1] -= gs
    g2 = (_diff_padded(n2 - 1).T @ gd.T).T
    g2[1:] += gs
    g2[:-1] -= gs
    return float(value), DisplacementField(g1, g2)


# --- third-order smoothness -------------------------------------------------

D3_MIN_GRID = 7


def d3_value_grad(v, nu, eta):
    """Weighted third-order term ``nu * D3(v)`` and its gradient.

    ``D3`` sums the squared mixed third differences of both components plus
    ``eta`` times their squared norms.
    """
    n1, n2 = v.shape
    if min(n1, n2) < D3_MIN_GRID:
        raise LayoutError(f"third-order term needs at least {D3_MIN_GRID} pixels per axis, got {v.shape}")
    value = eta * ((v.v1 ** 2).sum() + (v.v2 ** 2).sum())
    grads = []
    for comp in (v.v1, v.v2):
        m1, m2 = comp.shape
        g = 2.0 * eta * comp
        for i in range(4):
            a = _diff_operator(m1, i)
            b = _diff_operator(m2, 3 - i)
            r = _apply2(a, b, comp)
            value += (r ** 2).sum()
            g = g + 2.0 * _apply2_t(a, b, r)
        grads.append(g)
    return float(nu * value), DisplacementField(nu * grads[0], nu * grads[1])


@lru_cache(maxsize=16)
def _regularizer_parts(shape):
    """Sparse Hessians of the unit-weight quadratic terms on the stacked ``(v1, v2)`` vector.

    Returns ``(mu_part, lam_part, d3_part)``; the regularizer with weights
    ``mu, lam, nu, eta`` has Hessian
    ``mu * mu_part + lam * lam_part + nu * (d3_part + 2 eta I)``.
    """
    n1, n2 = shape
    kron = sparse.kron
    eye = lambda m: sparse.identity(m, format="csr")
    fwd = lambda m: _diff_operator(m, 1)
    m1, m2 = (n1 - 1) * n2, n1 * (n2 - 1)
    ea = sparse.hstack([kron(_diff_padded(n1 - 1), eye(n2)), sparse.csr_matrix((n1 * n2, m2))])
    ed = sparse.hstack([sparse.csr_matrix((n1 * n2, m1)), kron(eye(n1), _diff_padded(n2 - 1))])
    es = sparse.hstack([kron(eye(n1 - 1), fwd(n2)), kron(fwd(n1), eye(n2 - 1))])
    mu_part = 2.0 * (ea.T @ ea + ed.T @ ed) + es.T @ es
    div = ea + ed
    lam_part = div.T @ div
    blocks = []
    for c1, c2 in ((n1 - 1, n2), (n1, n2 - 1)):
        h = sparse.csr_matrix((c1 * c2, c1 * c2))
        for i in range(4):
            m = kron(_diff_operator(c1, i), _diff_operator(c2, 3 - i))
            h = h + 2.0 * (m.T @ m)
        blocks.append(h)
    d3_part = sparse.block_diag(blocks)
    return tuple(sparse.csr_matrix(x) for x in (mu_part, lam_part, d3_part))


@lru_cache(maxsize=16)
def _regularizer_hessian(shape, mu, lam, nu, eta):
    mu_part, lam_part, d3_part = _regularizer_parts(shape)
    size = mu_part.shape[0]
    q = mu * mu_part + lam * lam_part + nu * (d3_part + 2.0 * eta * sparse.identity(size))
    return sparse.csr_matrix(q)


def regularizer_hessian(shape, params):
    """Hessian of the elastic plus third-order regularizer as a sparse matrix."""
    if min(shape) < D3_MIN_GRID:
        raise LayoutError(f"third-order term needs at least {D3_MIN_GRID} pixels per axis, got {shape}")
    return _regularizer_hessian(tuple(shape), params.mu, params.lam, params.nu, params.eta)


def regularizer_value_grad(v, params):
    """Elastic plus third-order regularizer; evaluated through its cached Hessian."""
    x = v.to_vector()
    g = regularizer_hessian(v.shape, params) @ x
    return 0.5 * float(x @ g), DisplacementField.from_vector(g, v.shape)


# --- registration energy -----------------------------------------------------

def registration_energy(v, img_a, img_b, params, scheme="bilinear"):
    """Energy of deforming ``img_a`` onto ``img_b`` by ``v``.

    Returns ``(value, gradient, gn_matvec)`` where ``gn_matvec`` applies the
    Gauss-Newton Hessian ``2 J^T J + Q`` to a :class:`DisplacementField`;
    ``J`` is the Jacobian of the warped image and ``Q`` the exact Hessian of
    the quadratic regularizers.
    """
    img_a = check_image(img_a, "img_a")
    img_b = check_image(img_b, "img_b")
    if img_a.shape != img_b.shape or v.shape != img_a.shape:
        raise LayoutError("registration inputs have different shapes")
    val, gimg = sample_grad(img_a, warp_points(v), scheme)
    r = val - img_b
    data = float((r ** 2).sum())
    reg, greg = regularizer_value_grad(v, params)
    grad = greg + stagger_average_adjoint(-2.0 * r * gimg)

    q = regularizer_hessian(v.shape, params)

    def gn_matvec(d):
        pd = stagger_average(d)
        jd = gimg[0] * pd[0] + gimg[1] * pd[1]
        return stagger_average_adjoint(2.0 * gimg * jd) + DisplacementField.from_vector(
            q @ d.to_vector(), d.shape)

    return reg + data, grad, gn_matvec


def registration_value(v, img_a, img_b, params, scheme="bilinear"):
    r = warp(img_a, v, scheme) - img_b
    reg, _ = regularizer_value_grad(v, params)
    return reg + float((r ** 2).sum())


# --- path energy and full objective ----------------------------------------

def _check_lengths(frames, fields):
    if len(frames) != len(fields) + 1:
        raise LayoutError(f"{len(fields)} deformations need {len(fields) + 1} frames, got {len(frames)}")


def path_terms(frames, fields, params, scheme="bilinear"):
    """Per-step registration energies of an image path."""
    frames = list(frames)
    fields = list(fields)
    _check_lengths(frames, fields)
    return [registration_value(fields[k], frames[k], frames[k + 1], params, scheme)
            for k in range(len(fields))]


def path_energy(frames, fields, params, scheme="bilinear"):
    """Time-discrete path energy: summed registration energies of consecutive frames."""
    return float(sum(path_terms(frames, fields, params, scheme)))


def l2tv_value(img, op, data, alpha):
    r = op.apply(img) - data
    return 0.5 * float((r ** 2).sum()) + alpha * tv_value(img)


def full_objective(frames, fields, op, data, params, scheme="bilinear"):
    """Data fit plus TV of the first frame plus ``beta`` times the path energy."""
    frames = list(frames)
    return l2tv_value(frames[0], op, data, params.alpha) + params.beta * path_energy(
        frames, fields, params, scheme)
