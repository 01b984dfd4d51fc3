"""Random-dynamical-system checks: cocycle identity, Wong-Zakai ladders.

The metric dynamical system is the shift on driver increments; the
solution operator phi(t, omega, x) is a grid solve.  A cocycle split at
node s compares one solve over [0, T] against two chained solves, the
second driven by the shifted rough path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .roughpath import (RoughPath, brownian_lift, dyadic_grid, lift_piecewise_linear,
                        make_rng, rough_metric, shift)
from .solver import QuasilinearModel, SolverConfig, solve

__all__ = [
    "CocycleProbe",
    "cocycle_residual",
    "driver_shift_defect",
    "piecewise_linear_smoothing",
    "wong_zakai",
    "ito_stratonovich_gap",
    "monotone_violations",
    "initial_data_ladder",
    "shift_statistics",
    "table_to_csv",
]


@dataclass
class CocycleProbe:
    model: QuasilinearModel
    x0: np.ndarray
    rp: RoughPath
    splits: list = field(default_factory=list)
    config: SolverConfig | None = None

    def __post_init__(self):
        if not self.splits:
            self.splits = [self.rp.M // 2]
        for s in self.splits:
            if not 0 < s < self.rp.M:
                raise ValueError(f"split {s} is not an interior grid node")


def cocycle_residual(probe: CocycleProbe) -> list[dict]:
    """|phi(T, rp, x) - phi(T - s, theta_s rp, phi(s, rp, x))|_alpha per split."""
    m, rp = probe.model, probe.rp
    a = m.params.alpha
    full = solve(m, probe.x0, rp, probe.config)
    rows = []
    for s in probe.splits:
        row = {"split": int(s), "time": float(rp.times[s])}
        first = solve(m, probe.x0, rp.restrict(0, s), probe.config)
        if first.status != "completed" or full.status != "completed":
            row.update(residual=float("nan"), status=f"{full.status}/{first.status}")
            rows.append(row)
            continue
        second = solve(m, first.final, shift(rp, rp.times[s]).as_roughpath(), probe.config)
        if second.status != "completed":
            row.update(residual=float("nan"), status=second.status)
            rows.append(row)
            continue
        diff = second.u - full.u[s:]
        res = m.spec.packed_norm(diff, a)
        scale = float(m.spec.packed_norm(full.u, a).max())
        row.update(residual=float(res[-1]), sup_residual=float(res.max()),
                   scale=scale, status="completed")
        rows.append(row)
    return rows


def driver_shift_defect(rp: RoughPath, s_node: int) -> float:
    """Max gap between the shifted lift and the Chen-reconstructed restriction."""
    view = shift(rp, rp.times[s_node])
    worst = 0.0
    for t in range(1, view.M + 1):
        worst = max(worst,
                    float(np.abs(view.increment(0, t) - rp.increment(s_node, s_node + t)).max()),
                    float(np.abs(view.level2(0, t) - rp.level2(s_node, s_node + t)).max()))
    return worst


def piecewise_linear_smoothing(rp: RoughPath, j: int) -> RoughPath:
    """Interpolate level 1 linearly between nodes of mesh 2^-j T; exact lift on rp's grid."""
    M = rp.M
    step = M >> j
    if step < 1 or step << j != M:
        raise ValueError(f"mesh 2^-{j} T does not align with M = {M}")
    coarse = np.arange(0, M + 1, step)
    X = np.empty_like(rp.X)
    for k in range(rp.d):
        X[:, k] = np.interp(np.arange(M + 1), coarse, rp.X[coarse, k])
    return lift_piecewise_linear(rp.times, X, rp.gamma0)


def wong_zakai(model: QuasilinearModel, x0, seed: int, js=range(4, 9), T: float = 0.25,
               m: int = 9, config: SolverConfig | None = None, refine: int = 16) -> list[dict]:
    """Rows (j, rho(lift of W^(j), Stratonovich lift), sup |u^(j) - u^strat|_{alpha - sigma})."""
    times = dyadic_grid(T, m)
    strat = brownian_lift(seed, model.d, times, "stratonovich", refine=refine)
    ref = solve(model, x0, strat, config)
    beta = model.params.alpha - model.params.sigma
    rows = []
    for j in js:
        smooth = piecewise_linear_smoothing(strat, j)
        res = solve(model, x0, smooth, config)
        n = min(res.u.shape[0], ref.u.shape[0])
        row = {"j": int(j), "rho": rough_metric(smooth, strat), "status": res.status,
               "distance": float(model.spec.packed_norm(res.u[:n] - ref.u[:n], beta).max())}
        rows.append(row)
        if res.status != "completed":
            break
    return rows


def ito_stratonovich_gap(model: QuasilinearModel, x0, seed: int, T: float = 0.25, m: int = 9,
                         config: SolverConfig | None = None, refine: int = 16) -> dict:
    """Terminal gap between the Ito-lift and Stratonovich-lift solutions."""
    times = dyadic_grid(T, m)
    out = {}
    for kind in ("ito", "stratonovich"):
        rp = brownian_lift(seed, model.d, times, kind, refine=refine)
        out[kind] = solve(model, x0, rp, config)
    gap = out["ito"].final - out["stratonovich"].final
    return {"gap": float(model.spec.packed_norm(gap, 0.0)),
            "ito": out["ito"], "stratonovich": out["stratonovich"]}


def initial_data_ladder(model: QuasilinearModel, x0, direction, rp: RoughPath,
                        hs=(1e-1, 1e-2, 1e-3, 1e-4), config: SolverConfig | None = None):
    """Rows (h, input distance, solution distance) for x0 + h e against x0."""
    base = solve(model, x0, rp, config)
    a = model.params.alpha
    rows = []
    for h in hs:
        x = np.asarray(x0) + h * np.asarray(direction)
        res = solve(model, x, rp, config)
        n = min(res.u.shape[0], base.u.shape[0])
        din = float(model.spec.packed_norm(x - x0, a))
        dout = float(model.spec.packed_norm(res.u[:n] - base.u[:n], a).max())
        rows.append({"h": h, "input_distance": din, "distance": dout,
                     "ratio": dout / din, "status": res.status})
    return rows


def monotone_violations(values, slack: float = 0.10) -> int:
    """Number of steps where a sequence meant to decrease grows by more than ``slack``."""
    v = np.asarray(values, dtype=float)
    return int(np.sum(v[1:] > (1 + slack) * v[:-1]))


def shift_statistics(seed: int, d: int = 1, m: int = 10, T: float = 1.0,
                     s_frac: float = 0.5, paths: int = 200) -> dict:
    """Mean and variance of unit-lag increments before and after a shift.

    A proxy for shift invariance of Wiener measure: both samples should
    match N(0, h) within Monte-Carlo error.
    """
    times = dyadic_grid(T, m)
    rng = make_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=paths)
    base, shifted = [], []
    for sd in seeds:
        rp = brownian_lift(int(sd), d, times, "stratonovich", refine=1)
        view = shift(rp, T * s_frac)
        base.append(np.diff(rp.X[: view.M + 1], axis=0).ravel())
        shifted.append(np.array([view.increment(i, i + 1) for i in range(view.M)]).ravel())
    base, shifted = np.concatenate(base), np.concatenate(shifted)
    h = times[1] - times[0]
    n = base.size
    return {"h": h, "mean": (float(base.mean()), float(shifted.mean())),
            "var": (float(base.var()), float(shifted.var())),
            "mean_se": float(np.sqrt(h / n)), "var_se": float(h * np.sqrt(2.0 / n))}


def table_to_csv(rows: list[dict], path, header_comment: str = "") -> None:
    """RFC-4180 CSV of homogeneous dict rows; floats with 17 significant digits."""
    keys = list(rows[0].keys()) if rows else []

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.17g}"
        return str(v)

    with open(path, "w", newline="") as fh:
        for line in header_comment.splitlines():
            fh.write(f"# {line}\r\n")
        fh.write(",".join(keys) + "\r\n")
        for r in rows:
            fh.write(",".join(fmt(r.get(k, "")) for k in keys) + "\r\n")
