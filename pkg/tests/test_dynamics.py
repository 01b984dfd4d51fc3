import numpy as np
import pytest

from roughevolve.controlled import CRPParams
from roughevolve.dynamics import (CocycleProbe, cocycle_residual, driver_shift_defect,
                                  initial_data_ladder, monotone_violations,
                                  piecewise_linear_smoothing, shift_statistics, table_to_csv)
from roughevolve.models import linear_model
from roughevolve.roughpath import brownian_lift, dyadic_grid, rough_metric
from roughevolve.scale import ScaleSpec
from roughevolve.solver import SolverConfig


def bump(spec):
    return spec.from_samples(1 + 0.5 * np.cos(np.pi * spec.sample_points()))


def test_shift_reproduces_restricted_increments(bm):
    for s in (1, 100, 255):
        assert driver_shift_defect(bm, s) == 0.0


def test_smoothing_at_full_resolution_keeps_level_one(bm):
    sm = piecewise_linear_smoothing(bm, 8)
    np.testing.assert_array_equal(sm.X, bm.X)
    with pytest.raises(ValueError):
        piecewise_linear_smoothing(bm, 9)


def test_smoothing_distance_shrinks(bm):
    dists = [rough_metric(piecewise_linear_smoothing(bm, j), bm) for j in range(2, 8)]
    assert monotone_violations(dists, 0.0) == 0


def test_monotone_violations_counts_growth():
    assert monotone_violations([4, 3, 3.2, 1, 2]) == 1
    assert monotone_violations([4, 3, 3.2, 1, 2], slack=0.0) == 2


def test_linear_cocycle_is_exact():
    spec = ScaleSpec(6)
    model = linear_model(spec, CRPParams(), noise=[0.6])
    rp = brownian_lift(2, 1, dyadic_grid(0.5, 7))
    # the scheme is exact; only the Picard stopping rule leaves a trace
    tight = SolverConfig(picard_tol=1e-13)
    rows = cocycle_residual(CocycleProbe(model, bump(spec), rp, [17, 64, 100], tight))
    assert [r["status"] for r in rows] == ["completed"] * 3
    assert max(r["sup_residual"] for r in rows) <= 1e-12


def test_probe_rejects_boundary_split(bm):
    with pytest.raises(ValueError):
        CocycleProbe(linear_model(ScaleSpec(2), CRPParams()), np.zeros(5), bm, [0])


def test_linear_ladder_has_constant_ratio():
    spec = ScaleSpec(5)
    model = linear_model(spec, CRPParams(), noise=[0.3])
    rp = brownian_lift(3, 1, dyadic_grid(0.5, 6))
    e = spec.from_samples(np.sin(np.pi * spec.sample_points()))
    rows = initial_data_ladder(model, bump(spec), e, rp)
    ratios = np.array([r["ratio"] for r in rows])
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-6)


def test_shift_preserves_increment_law():
    st = shift_statistics(5, paths=100)
    for a in st["mean"]:
        assert abs(a) <= 4 * st["mean_se"]
    for v in st["var"]:
        assert abs(v - st["h"]) <= 4 * st["var_se"]


def test_table_csv_format(tmp_path):
    table_to_csv([{"j": 4, "x": 0.1}, {"j": 5, "x": 1 / 3}], tmp_path / "t.csv", "a = 1\nb = 2")
    raw = (tmp_path / "t.csv").read_bytes()
    assert raw.startswith(b"# a = 1\r\n# b = 2\r\nj,x\r\n4,0.10000000000000001\r\n")
    assert float(raw.split(b"\r\n")[4].split(b",")[1]) == 1 / 3
