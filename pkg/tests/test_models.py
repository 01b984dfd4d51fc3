import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughevolve.controlled import CRPParams, ParameterError
from roughevolve.models import (SKTParameters, dealias_samples, llg_GG, llg_G, llg_make,
                                llg_matrix, polynomial_model, skt_B, skt_constant_rhs,
                                skt_make)
from roughevolve.scale import ScaleSpec

vec3 = st.lists(st.floats(-2, 2), min_size=3, max_size=3).map(np.array)


def fields(spec, *samples):
    return spec.from_samples(np.stack(samples)).reshape(-1)


@given(vec3, vec3)
def test_llg_matrix_columns(y, w):
    np.testing.assert_allclose(llg_matrix(y, 0.7) @ w, 0.7 * np.cross(y, w), atol=1e-12)
    damped = llg_matrix(y, 1.0, 1) @ w - np.cross(y, w)
    np.testing.assert_allclose(damped, -np.cross(y, np.cross(y, w)), atol=1e-10)


def test_llg_damping_pattern_at_north_pole():
    got = llg_matrix([0.0, 0.0, 1.0], 1.0, 1)
    expect = np.array([[1.0, -1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    np.testing.assert_allclose(got, expect)


@given(vec3, st.lists(st.floats(-1, 1), min_size=9, max_size=9).map(
    lambda v: np.array(v).reshape(3, 3)))
def test_llg_second_order_term(v, WW):
    # sum_ij DF^i[F^j](v) WW^{ji} with F^i(v) = phi v x e_i
    E = np.eye(3)
    ref = sum(np.cross(np.cross(v, E[j]), E[i]) * WW[j, i] for i in range(3) for j in range(3))
    np.testing.assert_allclose(llg_GG(v, WW, 0.5), 0.25 * ref, atol=1e-12)
    np.testing.assert_allclose(llg_G(v, WW[0], 2.0), 2 * np.cross(v, WW[0]))


@pytest.mark.parametrize("shift", [False, True])
def test_helix_is_stationary_for_llg(shift):
    # u = (cos pi k x, sin pi k x, 0) is a harmonic map: every drift term cancels
    spec = ScaleSpec(6, 3)
    x = spec.sample_points(spec.min_samples)
    k = 2
    u = fields(spec, np.cos(np.pi * k * x), np.sin(np.pi * k * x), 0 * x)
    model = llg_make(spec, shift=shift)
    rhs = model.L(0.0, u).apply(u) + model.N(0.0, u)
    assert np.abs(rhs).max() <= 1e-10


def test_llg_noise_matches_pointwise_cross_product():
    spec = ScaleSpec(5, 3)
    x = spec.sample_points(spec.min_samples)
    u = fields(spec, np.cos(np.pi * x), np.sin(np.pi * x), 0.3 + 0 * x)
    model = llg_make(spec, phi=0.8, damping=1)
    F = model.F(u)
    us = np.stack([np.cos(np.pi * x), np.sin(np.pi * x), 0.3 + 0 * x])
    for i in range(3):
        pts = np.array([llg_matrix(us[:, j], 0.8, 1)[:, i] for j in range(x.size)]).T
        np.testing.assert_allclose(spec.to_samples(F[i].reshape(3, -1), x.size), pts, atol=1e-10)


def test_llg_noise_derivative_is_linearisation():
    spec = ScaleSpec(3, 3)
    rng = np.random.default_rng(0)
    y, h = rng.standard_normal((2, spec.dim)) * 0.3
    model = llg_make(spec, damping=1)
    eps = 1e-6
    fd = (model.F(y + eps * h) - model.F(y - eps * h)) / (2 * eps)
    np.testing.assert_allclose(model.DF(y, h), fd, atol=1e-8)


def test_llg_parameter_checks():
    with pytest.raises(ParameterError, match="n1 = 3"):
        llg_make(ScaleSpec(3, 2))
    with pytest.raises(ParameterError, match="alpha"):
        llg_make(ScaleSpec(3, 3), params=CRPParams())


@given(st.floats(0.05, 3), st.floats(0.05, 3))
def test_skt_constant_state_reduces_to_ode(c1, c2):
    spec = ScaleSpec(3, 2)
    p = SKTParameters()
    y = fields(spec, np.full(spec.min_samples, c1), np.full(spec.min_samples, c2))
    model = skt_make(spec, p)
    rhs = model.L(0.0, y).apply(y) + model.N(0.0, y)
    got = spec.to_samples(rhs.reshape(2, -1))[:, 0]
    np.testing.assert_allclose(got, skt_constant_rhs(p, (c1, c2)), atol=1e-10)


def test_skt_divergence_form_on_one_mode():
    # L(u) v for constant u is a constant-coefficient operator: B(u) v_xx - Gamma v
    spec = ScaleSpec(4, 2)
    p = SKTParameters()
    c = (0.4, 0.9)
    n = spec.min_samples
    x = spec.sample_points(n)
    y = fields(spec, np.full(n, c[0]), np.full(n, c[1]))
    v = fields(spec, np.sin(np.pi * x), np.cos(2 * np.pi * x))
    out = spec.to_samples(skt_make(spec, p).L(0.0, y).apply(v).reshape(2, -1), n)
    B = skt_B(p, *c)
    vxx = np.stack([-np.pi**2 * np.sin(np.pi * x), -4 * np.pi**2 * np.cos(2 * np.pi * x)])
    vs = np.stack([np.sin(np.pi * x), np.cos(2 * np.pi * x)])
    np.testing.assert_allclose(out, B @ vxx - np.array(p.delta)[:, None] * vs, atol=1e-9)


def test_skt_guard_and_parameters():
    spec = ScaleSpec(3, 2)
    n = spec.min_samples
    x = spec.sample_points(n)
    model = skt_make(spec)
    assert model.guard(fields(spec, 1 + 0 * x, 1 + 0.5 * np.cos(np.pi * x)))
    assert not model.guard(fields(spec, 1 + 0 * x, -0.1 + np.cos(np.pi * x)))
    with pytest.raises(ParameterError, match="gamma1"):
        skt_make(spec, SKTParameters(gamma=(3.0, 0.5)))
    with pytest.raises(ParameterError, match="3/4"):
        skt_make(spec, params=CRPParams())


def test_skt_B_broadcasts():
    B = skt_B(SKTParameters(), np.zeros(5), 1.0)
    assert B.shape == (2, 2, 5)


def test_dealias_sample_count():
    spec = ScaleSpec(7)
    for deg in (1, 2, 3, 4):
        assert dealias_samples(spec, deg) >= (deg + 1) * spec.N + 1


def test_polynomial_square_is_exact():
    spec = ScaleSpec(4)
    x = spec.sample_points(spec.min_samples)
    u = spec.from_samples(np.cos(np.pi * x) + 0.5 * np.sin(3 * np.pi * x))
    model = polynomial_model(spec, CRPParams(), drift_terms=[(0, 2.0, 0, 2, 0, 0)])
    # 64 samples resolve the square (modes up to 6) without aliasing
    dense = spec.sample_points(64)
    ref = spec.from_samples(2 * (np.cos(np.pi * dense) + 0.5 * np.sin(3 * np.pi * dense)) ** 2)
    np.testing.assert_allclose(model.N(0.0, u), ref, atol=1e-12)


def test_polynomial_undersampling_rejected():
    spec = ScaleSpec(4)
    with pytest.raises(ParameterError, match="dealiasing"):
        polynomial_model(spec, CRPParams(), drift_terms=[(0, 1.0, 0, 4, 0, 0)], samples=19)
