import numpy as np
import pytest

from _util import fd_gradient, rand_field, rel_err, smooth_image
from tdminv.energy import (
    EnergyParams,
    d3_value_grad,
    elastic_value_grad,
    full_objective,
    l2tv_value,
    path_energy,
    path_terms,
    registration_energy,
    registration_value,
    regularizer_hessian,
    regularizer_value_grad,
    tv_value,
)
from tdminv.grid import DisplacementField, LayoutError
from tdminv.operators import IdentityOp, RadonOp, make_rng


# --- loop-based reference implementations ------------------------------------

def elastic_loops(v, mu, lam):
    n1, n2 = v.shape
    p1 = np.zeros((n1 + 1, n2))
    p1[1:-1] = v.v1
    p2 = np.zeros((n1, n2 + 1))
    p2[:, 1:-1] = v.v2
    val = 0.0
    for i in range(n1):
        for j in range(n2):
            a = p1[i + 1, j] - p1[i, j]
            d = p2[i, j + 1] - p2[i, j]
            val += mu * (a * a + d * d) + 0.5 * lam * (a + d) ** 2
    for i in range(n1 - 1):
        for j in range(n2 - 1):
            s = (v.v1[i, j + 1] - v.v1[i, j]) + (v.v2[i + 1, j] - v.v2[i, j])
            val += 0.5 * mu * s * s
    return val


def _diff1d(x, order):
    m = x.size
    if order == 0:
        return x.copy()
    if order == 1:
        return np.array([x[k + 1] - x[k] for k in range(m - 1)])
    xp = np.concatenate([[0.0, 0.0], x, [0.0, 0.0]])
    if order == 2:
        return np.array([xp[k + 1] - 2 * xp[k + 2] + xp[k + 3] for k in range(m)])
    return np.array([-0.5 * xp[k] + xp[k + 1] - xp[k + 3] + 0.5 * xp[k + 4] for k in range(m)])


def d3_loops(v, eta):
    val = 0.0
    for comp in (v.v1, v.v2):
        for i in range(4):
            cols = np.array([_diff1d(comp[:, j], i) for j in range(comp.shape[1])]).T
            both = np.array([_diff1d(cols[r], 3 - i) for r in range(cols.shape[0])])
            val += (both ** 2).sum()
        val += eta * (comp ** 2).sum()
    return val


# --- TV -------------------------------------------------------------------------

def test_tv_constant_and_hand_case():
    assert tv_value(np.full((5, 4), 0.7)) == 0.0
    assert tv_value(np.array([[0.0, 1.0], [0.0, 1.0]])) == 2.0


def test_tv_homogeneous_and_positive():
    img = make_rng(0).random((9, 7))
    assert abs(tv_value(-2.5 * img) - 2.5 * tv_value(img)) <= 1e-12 * tv_value(img)
    assert tv_value(img) > 0


# --- elastic and third-order terms ---------------------------------------------

def test_elastic_matches_loop_oracle():
    rng = make_rng(1)
    for shape in [(4, 5), (8, 8), (6, 3)]:
        v = rand_field(rng, shape)
        val, _ = elastic_value_grad(v, 0.3, 0.7)
        assert abs(val - elastic_loops(v, 0.3, 0.7)) <= 1e-12 * max(1.0, val)


def test_elastic_zero_and_constant_field():
    assert elastic_value_grad(DisplacementField.zeros((5, 5)), 1.0, 1.0)[0] == 0.0
    # a constant interior field only strains the boundary faces
    n1, n2 = 6, 6
    v = DisplacementField(np.ones((n1 - 1, n2)), np.zeros((n1, n2 - 1)))
    val, _ = elastic_value_grad(v, 1.0, 0.0)
    assert val == pytest.approx(elastic_loops(v, 1.0, 0.0), abs=1e-12)
    assert val == pytest.approx(2.0 * n2, abs=1e-12)


def test_elastic_gradient_fd():
    rng = make_rng(2)
    shape = (8, 8)
    v = rand_field(rng, shape)
    _, g = elastic_value_grad(v, 0.4, 0.9)
    f = lambda x: elastic_value_grad(DisplacementField.from_vector(x, shape), 0.4, 0.9)[0]
    assert rel_err(fd_gradient(f, v.to_vector(), 1e-5), g.to_vector()) <= 1e-6


def test_d3_matches_loop_oracle():
    v = rand_field(make_rng(3), (9, 8))
    val, _ = d3_value_grad(v, 1.0, 0.01)
    assert abs(val - d3_loops(v, 0.01)) <= 1e-11 * val


def test_d3_gradient_fd():
    shape = (10, 10)
    v = rand_field(make_rng(4), shape)
    _, g = d3_value_grad(v, 0.5, 0.02)
    f = lambda x: d3_value_grad(DisplacementField.from_vector(x, shape), 0.5, 0.02)[0]
    assert rel_err(fd_gradient(f, v.to_vector(), 1e-5), g.to_vector()) <= 1e-6


def test_d3_coercive_and_zero():
    assert d3_value_grad(DisplacementField.zeros((8, 8)), 1.0, 0.1)[0] == 0.0
    rng = make_rng(5)
    for _ in range(5):
        v = rand_field(rng, (8, 8))
        assert d3_value_grad(v, 1.0, 0.1)[0] >= 0.1 * v.dot(v)


def test_d3_small_grid_rejected():
    with pytest.raises(LayoutError):
        d3_value_grad(DisplacementField.zeros((6, 9)), 1.0, 0.1)
    with pytest.raises(LayoutError):
        regularizer_hessian((6, 9), EnergyParams())


def test_quadratic_scaling():
    v = rand_field(make_rng(6), (8, 9))
    for fn in (lambda w: elastic_value_grad(w, 0.2, 0.5), lambda w: d3_value_grad(w, 0.3, 0.01)):
        val, g = fn(v)
        val3, g3 = fn(3.0 * v)
        assert abs(val3 - 9.0 * val) <= 1e-12 * val3
        assert np.allclose(g3.to_vector(), 3.0 * g.to_vector(), rtol=1e-12, atol=1e-12)


def test_regularizer_hessian_matches_terms():
    p = EnergyParams.from_reg_scale(1.0, 1.0, 0.3)
    v = rand_field(make_rng(7), (8, 8))
    e, ge = elastic_value_grad(v, p.mu, p.lam)
    d, gd = d3_value_grad(v, p.nu, p.eta)
    r, gr = regularizer_value_grad(v, p)
    assert abs(r - (e + d)) <= 1e-12 * r
    assert rel_err(gr.to_vector(), (ge + gd).to_vector()) <= 1e-12


# --- registration ------------------------------------------------------------

def test_registration_trivial_cases():
    p = EnergyParams()
    img = smooth_image((10, 10))
    zero = DisplacementField.zeros((10, 10))
    val, g, _ = registration_energy(zero, img, img, p)
    assert val == 0.0 and g.norm() == 0.0
    other = smooth_image((10, 10), 1.0)
    val, _, _ = registration_energy(zero, img, other, p)
    assert val == pytest.approx(((img - other) ** 2).sum(), rel=1e-14)


def test_registration_gradient_fd():
    shape = (16, 16)
    p = EnergyParams.from_reg_scale(1.0, 1.0, 0.1)
    a, b = smooth_image(shape), smooth_image(shape, 1.3, -0.7)
    v = rand_field(make_rng(8), shape, 0.3)
    _, g, _ = registration_energy(v, a, b, p)
    f = lambda x: registration_value(DisplacementField.from_vector(x, shape), a, b, p)
    assert rel_err(fd_gradient(f, v.to_vector(), 1e-4), g.to_vector()) <= 1e-4


def test_registration_shape_mismatch():
    with pytest.raises(LayoutError):
        registration_energy(DisplacementField.zeros((8, 8)), np.zeros((8, 8)), np.zeros((9, 8)),
                            EnergyParams())


def test_gauss_newton_symmetric_and_coercive():
    shape = (12, 12)
    p = EnergyParams.from_reg_scale(1.0, 1.0, 0.05)
    a, b = smooth_image(shape), smooth_image(shape, 0.5)
    rng = make_rng(9)
    _, _, hv = registration_energy(rand_field(rng, shape, 0.2), a, b, p)
    for _ in range(5):
        x, y = rand_field(rng, shape), rand_field(rng, shape)
        assert abs(x.dot(hv(y)) - hv(x).dot(y)) <= 1e-10 * abs(x.dot(hv(y))) + 1e-12
        # the zero-order part of the third-order term bounds the Hessian below
        assert x.dot(hv(x)) >= 2.0 * p.nu * p.eta * x.dot(x)


# --- path energy and objective -------------------------------------------------

def test_path_energy_cases():
    p = EnergyParams.from_reg_scale(1.0, 1.0, 0.1)
    shape = (8, 8)
    img = smooth_image(shape)
    zeros = [DisplacementField.zeros(shape) for _ in range(3)]
    assert path_energy([img] * 4, zeros, p) == 0.0
    rng = make_rng(10)
    frames = [rng.random(shape) for _ in range(4)]
    fields = [rand_field(rng, shape, 0.3) for _ in range(3)]
    assert path_energy(frames[:2], fields[:1], p) == registration_value(fields[0], frames[0],
                                                                         frames[1], p)
    terms = path_terms(frames, fields, p)
    assert abs(path_energy(frames, fields, p) - sum(terms)) <= 1e-12 * sum(terms)
    with pytest.raises(LayoutError):
        path_energy(frames, fields[:2], p)


def test_full_objective_cases():
    shape = (8, 8)
    op = RadonOp(8, [0, 45, 90])
    img = np.full(shape, 0.4)
    zeros = [DisplacementField.zeros(shape)] * 2
    p = EnergyParams.from_reg_scale(0.1, 2.0, 0.1)
    assert full_objective([img] * 3, zeros, op, op.apply(img), p) == 0.0
    rng = make_rng(11)
    frames = [rng.random(shape) for _ in range(3)]
    data = rng.random(op.output_shape)
    base = l2tv_value(frames[0], op, data, 0.1)
    val = full_objective(frames, zeros, op, data, p)
    assert val == pytest.approx(base + 2.0 * path_energy(frames, zeros, p), rel=1e-14)
    assert val >= base >= 0.0


def test_objective_with_identity_operator():
    shape = (8, 8)
    img = make_rng(12).random(shape)
    p = EnergyParams()
    val = full_objective([img, img], [DisplacementField.zeros(shape)], IdentityOp(shape), img, p)
    assert val == pytest.approx(p.alpha * tv_value(img), rel=1e-14)
