import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughevolve.roughpath import (RoughPath, RoughPathError, brownian_lift, chen_defect,
                                   dyadic_grid, hoelder_seminorms, lift_piecewise_linear,
                                   lift_smooth, load_roughpath, rho, rough_metric,
                                   roughpath_to_csv, save_roughpath, shift)


def test_smooth_lift_of_t_t2():
    fine = dyadic_grid(1.0, 12)
    rp = lift_smooth(np.stack([fine, fine**2], 1), fine, dyadic_grid(1.0, 4))
    XX = rp.level2(0, rp.M)
    assert XX[0, 1] == pytest.approx(2 / 3, abs=1e-6)
    assert XX[1, 0] == pytest.approx(1 / 3, abs=1e-6)


def test_linear_path_lift_is_exact():
    t = dyadic_grid(2.0, 5)
    v = np.array([1.0, -2.0])
    rp = lift_piecewise_linear(t, np.outer(t, v))
    np.testing.assert_allclose(rp.level2(3, 29), 0.5 * np.outer(v, v) * (t[29] - t[3]) ** 2,
                               atol=1e-13)


@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_chen_holds_for_brownian_lifts(seed, d):
    rp = brownian_lift(seed, d, dyadic_grid(1.0, 6))
    assert chen_defect(rp) <= 1e-10


def test_chen_detects_corruption():
    rp = brownian_lift(1, 2, dyadic_grid(1.0, 6))
    XX = rp.XX.copy()
    XX[5, 0, 1] += 1.0
    bad = RoughPath(rp.times, rp.X, XX, levels=rp.levels[1:])
    assert chen_defect(bad) >= 0.5


def test_ito_stratonovich_gap():
    t = dyadic_grid(1.0, 7)
    ito = brownian_lift(3, 2, t, "ito")
    st_ = brownian_lift(3, 2, t, "stratonovich")
    np.testing.assert_array_equal(ito.X, st_.X)
    gap = st_.XX - ito.XX
    np.testing.assert_allclose(gap, np.broadcast_to(0.5 * (t[1] - t[0]) * np.eye(2), gap.shape),
                               atol=1e-15)


def test_shift_flow_property():
    rp = brownian_lift(4, 2, dyadic_grid(1.0, 6))
    a, b = shift(shift(rp, 0.25), 0.125), shift(rp, 0.375)
    for k in (1, 7, 20):
        np.testing.assert_array_equal(a.increment(0, k), b.increment(0, k))
        np.testing.assert_allclose(a.level2(0, k), rp.level2(24, 24 + k), atol=1e-15)


def test_shift_must_hit_node():
    rp = brownian_lift(4, 1, dyadic_grid(1.0, 4))
    with pytest.raises(RoughPathError):
        shift(rp, 0.1)


def test_seeded_lift_is_reproducible():
    t = dyadic_grid(1.0, 8)
    a, b = brownian_lift(11, 2, t), brownian_lift(11, 2, t)
    assert a.X.tobytes() == b.X.tobytes() and a.XX.tobytes() == b.XX.tobytes()


def test_metric_zero_on_identical_and_scales():
    rp = brownian_lift(5, 1, dyadic_grid(1.0, 6))
    assert rough_metric(rp, rp) == 0.0
    s1, s2 = hoelder_seminorms(rp)
    t1, t2 = hoelder_seminorms(rp.scaled(2.0))
    assert t1 == pytest.approx(2 * s1) and t2 == pytest.approx(4 * s2)
    assert rho(rp) == pytest.approx(s1 + s2)


def test_gamma0_window():
    with pytest.raises(RoughPathError):
        brownian_lift(1, 1, dyadic_grid(1.0, 3), gamma0=0.6)


def test_non_dyadic_grid_rejected():
    with pytest.raises(RoughPathError):
        brownian_lift(1, 1, np.linspace(0, 1, 7))


def test_restrict_matches_level2():
    rp = brownian_lift(8, 2, dyadic_grid(1.0, 6))
    r = rp.restrict(10, 40)
    np.testing.assert_allclose(r.level2(0, 30), rp.level2(10, 40), atol=1e-14)


def test_io_round_trip(tmp_path):
    rp = brownian_lift(2, 3, dyadic_grid(0.5, 5))
    save_roughpath(rp, tmp_path / "p.rghp")
    q = load_roughpath(tmp_path / "p.rghp")
    np.testing.assert_array_equal(rp.X, q.X)
    np.testing.assert_array_equal(rp.XX, q.XX)
    np.testing.assert_allclose(rp.times, q.times, atol=1e-15)
    roughpath_to_csv(rp, tmp_path / "p.csv", "seed = 2")
    text = (tmp_path / "p.csv").read_text()
    assert text.startswith("# seed = 2") and "t,X1,X2,X3" in text
