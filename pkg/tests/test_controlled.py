import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughevolve.controlled import (ControlledPath, CRPParams, ParameterError, crp_norm,
                                    dyadic_lags, holder_slope, interpolation_estimates_check,
                                    weighted_seminorm, weighted_sup)
from roughevolve.roughpath import brownian_lift, dyadic_grid
from roughevolve.scale import ScaleSpec

from conftest import random_packed


@pytest.mark.parametrize("kw, needle", [
    ({"gamma0": 0.3}, "gamma0"),
    ({"gamma": 0.46}, "gamma <= gamma0"),
    ({"gammap": 0.1}, "gamma'"),
    ({"sigma": 0.5}, "sigma"),
    ({"alpha": 0.9}, "alpha"),
])
def test_parameter_errors_name_the_inequality(kw, needle):
    with pytest.raises(ParameterError, match=needle):
        CRPParams(**kw)


def test_eps_defaults_to_gamma_minus_sigma():
    p = CRPParams(sigma=0.1, alpha=0.6)
    assert p.eps == pytest.approx(0.3)
    assert p.base_prime == pytest.approx(0.2)


def test_dyadic_lags():
    assert dyadic_lags(64, 2, 16) == [2, 4, 8, 16]


def test_linear_path_seminorm_exact():
    t = np.linspace(0, 1, 33)
    R = 3.0 * (t[:, None] - t[None, :])
    assert weighted_seminorm(R, t, 1.0, 0.0, 0.0) == pytest.approx(3.0)
    assert weighted_seminorm(R, t, 0.5, 0.0, 0.0) == pytest.approx(3.0)


def test_weighted_sup_skips_origin():
    t = np.linspace(0, 1, 5)
    assert weighted_sup(np.array([100.0, 1, 1, 1, 1]), t, 0.5) == pytest.approx(1.0)


def _scalar_times_field(rp, spec, f):
    y = rp.X[:, :1] * f[None]
    yp = np.broadcast_to(f, (rp.M + 1, 1, spec.dim))
    return y, yp


def test_controlled_by_driver_has_zero_remainder():
    spec = ScaleSpec(6)
    rp = brownian_lift(3, 1, dyadic_grid(1.0, 7))
    f = random_packed(spec, np.random.default_rng(0))
    cp = ControlledPath(CRPParams(), spec, rp, *_scalar_times_field(rp, spec, f))
    nb = crp_norm(cp)
    assert nb.remainder <= 1e-13 and nb.holder_yprime == 0.0
    assert nb.total == pytest.approx(sum(v for k, v in nb.as_dict().items() if k != "total"))


def test_norm_is_homogeneous():
    spec = ScaleSpec(4)
    rp = brownian_lift(5, 1, dyadic_grid(1.0, 6))
    rng = np.random.default_rng(1)
    y = np.cumsum(rng.standard_normal((rp.M + 1, spec.dim)), 0) * 0.1
    yp = rng.standard_normal((rp.M + 1, 1, spec.dim))
    a = crp_norm(ControlledPath(CRPParams(), spec, rp, y, yp)).total
    b = crp_norm(ControlledPath(CRPParams(), spec, rp, 2.5 * y, 2.5 * yp)).total
    assert b == pytest.approx(2.5 * a, rel=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_brownian_slope_near_half(seed):
    rp = brownian_lift(seed, 1, dyadic_grid(1.0, 12), refine=1)
    fit = holder_slope(rp.X[:, 0], rp.times, min_lag=4, max_lag=256)
    assert 0.3 < fit.slope < 0.7


def test_linear_slope_is_one():
    t = np.linspace(0, 1, 257)
    assert holder_slope(2 * t, t).slope == pytest.approx(1.0, abs=1e-12)


def test_constant_path_fit_is_degenerate():
    t = np.linspace(0, 1, 65)
    assert holder_slope(np.ones(65), t).degenerate


def test_interpolation_estimates_bounded():
    spec = ScaleSpec(5)
    rp = brownian_lift(9, 1, dyadic_grid(1.0, 6))
    f = random_packed(spec, np.random.default_rng(2))
    cp = ControlledPath(CRPParams(sigma=0.2, alpha=0.8), spec, rp,
                        *_scalar_times_field(rp, spec, f))
    for theta in (0.0, 0.5, 1.0):
        ratios = interpolation_estimates_check(cp, theta)["ratios"]
        assert max(ratios.values()) <= 3.0
    with pytest.raises(ValueError):
        interpolation_estimates_check(cp, 1.5)
