import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughevolve.controlled import CRPParams
from roughevolve.propagator import EvolutionFamily, Generator, GeneratorFamily
from roughevolve.roughpath import brownian_lift, dyadic_grid
from roughevolve.scale import ScaleSpec
from roughevolve.sewing import (Germ, GermTerm, SewingError, cell_germs, convolution_germ,
                                grid_convolution, integral_remainder, perturbed_convolution,
                                remainder_rate_check, richardson, rough_convolution, sew)

from conftest import random_packed


def heat_family(spec, times, c=1.0):
    gen = GeneratorFamily.constant(spec, Generator(diag=-c * np.tile(spec.packed_lam, spec.n1)))
    return EvolutionFamily(gen, times)


@given(st.floats(-2, 2), st.floats(0.1, 3))
def test_additive_germ_is_exact_at_every_level(a, b):
    f = lambda x: np.sin(a * x) + x**3
    res = sew(lambda u, v: f(v) - f(u), 0.0, b, n_max=6, extrapolate=1)
    assert np.all(res.increments <= 1e-13 * max(1.0, abs(f(b) - f(0))))
    assert res.value == pytest.approx(f(b) - f(0), abs=1e-13)


def test_riemann_germ_matches_predicted_slope():
    g = Germ(lambda u, v: np.exp(u) * (v - u), [GermTerm(A=1.0, mu=2.0)])
    res = sew(g, 0.0, 1.0, n_max=12, extrapolate=5)
    assert g.predicted_slope() == pytest.approx(-1.0)
    assert res.level_slope() == pytest.approx(-1.0, abs=0.05)
    assert res.extrapolated == pytest.approx(np.e - 1, abs=1e-10)
    assert not res.diverged


def test_rough_germ_flags_divergence():
    res = sew(lambda u, v: np.sqrt(v - u), 0.0, 1.0, n_max=8)
    assert res.diverged


def test_richardson_kills_polynomial_error():
    levels = [1.0 + 0.5 * h + 0.25 * h**2 for h in (1.0, 0.5, 0.25)]
    assert richardson(levels) == pytest.approx(1.0, abs=1e-14)


def test_sew_interval_checked():
    with pytest.raises(SewingError):
        sew(lambda u, v: 0.0, 1.0, 1.0)


def test_smooth_convolution_against_closed_form():
    spec = ScaleSpec(3)
    a = -spec.packed_lam
    f = np.random.default_rng(0).standard_normal(spec.dim)
    t = 1.0
    exact = f * (np.sin(t) - a * np.cos(t) + a * np.exp(a * t)) / (a**2 + 1)
    germ = convolution_germ(
        lambda t_, u, w: np.exp((t_ - u) * a) * w,
        lambda r: f[None], lambda r: np.zeros((1, 1, spec.dim)),
        lambda u, v: np.array([np.sin(v) - np.sin(u)]),
        lambda u, v: np.array([[0.5 * (np.sin(v) - np.sin(u)) ** 2]]), t)
    res = sew(germ, 0.0, t, n_max=10, extrapolate=4)
    assert np.abs(res.extrapolated - exact).max() <= 1e-8


def test_left_and_right_germs_share_the_limit():
    rp = brownian_lift(2, 1, dyadic_grid(1.0, 12))
    X = rp.X[:, 0]
    zeta = np.cos(X)[:, None, None]
    zetap = -np.sin(X)[:, None, None, None]
    right = cell_germs(zeta, zetap, rp).sum()
    left = cell_germs(zeta, zetap, rp, "left").sum()
    # Stratonovich chain rule: int cos(X) o dX = sin(X_1)
    assert right == pytest.approx(np.sin(X[-1]), abs=5e-3)
    assert left == pytest.approx(np.sin(X[-1]), abs=5e-3)


def _integrand(spec, rp, seed=0):
    f = random_packed(spec, np.random.default_rng(seed))
    zeta = (1 + rp.X[:, :1])[:, :, None] * f
    zetap = np.broadcast_to(f, (rp.M + 1, 1, 1, spec.dim)).copy()
    return zeta, zetap


def test_chasles_identity():
    spec = ScaleSpec(6)
    rp = brownian_lift(4, 1, dyadic_grid(1.0, 8))
    S = heat_family(spec, rp.times)
    zeta, zetap = _integrand(spec, rp)
    whole = rough_convolution(S, zeta, zetap, rp, 0, 200)
    split = S.apply(200, 77, rough_convolution(S, zeta, zetap, rp, 0, 77)) \
        + rough_convolution(S, zeta, zetap, rp, 77, 200)
    assert np.abs(whole - split).max() <= 1e-12
    np.testing.assert_allclose(grid_convolution(S, zeta, zetap, rp)[200], whole, atol=1e-14)


def test_remainder_vanishes_on_single_cell():
    spec = ScaleSpec(4)
    rp = brownian_lift(5, 1, dyadic_grid(1.0, 5))
    S = heat_family(spec, rp.times)
    zeta, zetap = _integrand(spec, rp)
    assert np.abs(integral_remainder(S, zeta, zetap, rp, 3, 4)).max() <= 1e-15


def test_perturbed_convolution_two_routes():
    spec = ScaleSpec(5)
    rp = brownian_lift(6, 1, dyadic_grid(1.0, 6))
    S1, S2 = heat_family(spec, rp.times), heat_family(spec, rp.times, 1.2)
    zeta, zetap = _integrand(spec, rp)
    out = perturbed_convolution(S1, S2, zeta, zetap, rp, 5, 60)
    assert out["gap"] <= 1e-13 * max(1.0, np.abs(out["value"]).max())
    assert np.abs(out["value"]).max() > 1e-6


def test_rate_window_rejected():
    spec = ScaleSpec(2)
    rp = brownian_lift(1, 1, dyadic_grid(1.0, 4))
    S = heat_family(spec, rp.times)
    zeta, zetap = _integrand(spec, rp)
    with pytest.raises(SewingError, match="kappa"):
        remainder_rate_check(S, zeta, zetap, rp, CRPParams(), 0.0, kappa=1.0)


def test_zero_integrand_skips_rate_check():
    spec = ScaleSpec(2)
    rp = brownian_lift(1, 1, dyadic_grid(1.0, 4))
    S = heat_family(spec, rp.times)
    z = np.zeros((rp.M + 1, 1, spec.dim))
    out = remainder_rate_check(S, z, z[:, :, None], rp, CRPParams(), 0.0)
    assert out["skipped"]
