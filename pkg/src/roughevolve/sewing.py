"""Dyadic sewing and rough convolution against evolution families.

Two flavours are provided.

* ``sew`` works on an arbitrary germ callback J(u, v) and sums it over
  dyadic (or triadic) partitions of [s, t].  It records per-level
  increments, flags divergence, and offers a Richardson-extrapolated
  limit for smooth germs.
* Grid convolutions use the finest partition the grid offers.  With
  xi_i the compensated germ on cell [t_i, t_{i+1}], the convolution obeys
  the exact recursion z_{i+1} = S_{i+1,i}(z_i + xi_i), which is the
  finest-level sewing sum and satisfies the Chasles identity exactly.

Index convention for the Gubinelli derivative: ``zetap[..., i, j, :]`` is
the derivative of the integrand component i in the direction X^j; it is
paired with XX^{ji} (X^j the inner increment, X^i the integrator).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .controlled import CRPParams, ControlledPath, SlopeFit, crp_norm, dyadic_lags
from .propagator import EvolutionFamily, PropagatorError
from .roughpath import RoughPath
from .scale import ScaleSpec

__all__ = [
    "SewingError",
    "GermTerm",
    "Germ",
    "SewResult",
    "sew",
    "richardson",
    "cell_germs",
    "compensated_germ",
    "convolution_germ",
    "grid_convolution",
    "rough_convolution",
    "integral_remainder",
    "remainder_table",
    "remainder_rate_check",
    "tuple_path",
    "convolution_as_controlled",
    "perturbed_convolution",
    "perturbation_rate_check",
    "rates_to_csv",
]


class SewingError(ValueError):
    """Invalid sewing request or parameter window violation."""


@dataclass(frozen=True)
class GermTerm:
    """One term A |t-s|^mu s^-eps ... of a defect bound on delta J."""

    A: float
    mu: float
    lam: float = 0.0
    nu: float = 0.0
    eps: float = 0.0


@dataclass
class Germ:
    eval: Callable[[float, float], np.ndarray]
    terms: list[GermTerm] = field(default_factory=list)
    omega: float | None = None

    def __post_init__(self):
        if self.omega is None:
            self.omega = min((t.eps for t in self.terms), default=0.0)

    def __call__(self, u, v):
        return self.eval(u, v)

    def predicted_slope(self) -> float | None:
        """Expected per-level log2 decay -(mu - 1 - kappa) of the worst term."""
        if not self.terms:
            return None
        return -min(t.mu - 1 - t.lam - max(t.eps - self.omega, 0.0) for t in self.terms)


@dataclass
class SewResult:
    value: np.ndarray
    levels: list
    increments: np.ndarray
    diverged: bool
    extrapolated: np.ndarray | None = None

    def level_slope(self, start: int = 2) -> float:
        """Least-squares slope of log2 increments against the level."""
        inc = self.increments[start:]
        n = np.arange(start + 1, start + 1 + inc.size)
        keep = inc > 0
        if keep.sum() < 2:
            return float("-inf")
        return float(np.polyfit(n[keep], np.log2(inc[keep]), 1)[0])


def _norm(v) -> float:
    return float(np.linalg.norm(np.ravel(v)))


def richardson(levels: Sequence, base: int = 2, orders: int | None = None):
    """Richardson table assuming errors in integer powers of the mesh."""
    T = [np.asarray(v, dtype=float) for v in levels]
    orders = len(T) - 1 if orders is None else min(orders, len(T) - 1)
    for p in range(1, orders + 1):
        f = float(base) ** p
        T = [(f * T[i + 1] - T[i]) / (f - 1) for i in range(len(T) - 1)]
    return T[-1]


def sew(germ, s: float, t: float, n_max: int = 12, tol: float = 1e-12,
        base: int = 2, extrapolate: int = 0, n_min: int = 0) -> SewResult:
    """Sum the germ over partitions of [s, t] into base**n equal cells.

    Stops at ``n_max`` or when a level increment falls below
    tol * scale.  ``diverged`` is set when the last three increment
    ratios are all >= 0.98.  With ``extrapolate > 0`` that many Richardson
    orders are applied to the trailing levels.
    """
    if not t > s:
        raise SewingError("sew needs s < t")
    J = germ.eval if isinstance(germ, Germ) else germ
    level_vals = [np.asarray(J(s, t), dtype=float)]
    incs = []
    for n in range(1, n_max + 1):
        pts = np.linspace(s, t, base**n + 1)
        acc = 0.0
        for u, v in zip(pts[:-1], pts[1:]):
            acc = acc + np.asarray(J(u, v), dtype=float)
        level_vals.append(np.asarray(acc))
        inc = _norm(level_vals[-1] - level_vals[-2])
        incs.append(inc)
        scale = max(_norm(level_vals[-1]), _norm(level_vals[0]), 1e-300)
        if n >= max(n_min, 1) and inc < tol * scale and not extrapolate:
            break
    incs = np.array(incs)
    diverged = False
    if incs.size >= 4:
        r = incs[-3:] / np.maximum(incs[-4:-1], 1e-300)
        diverged = bool(np.all(r >= 0.98) and incs[-1] > tol * max(_norm(level_vals[-1]), 1e-300))
    ext = None
    if extrapolate:
        k = min(extrapolate, len(level_vals) - 1)
        ext = richardson(level_vals[-(k + 1):], base)
    return SewResult(level_vals[-1], level_vals, incs, diverged, ext)


# --------------------------------------------------------- germs
def compensated_germ(zeta_v, zetap_v, dX, XX):
    """zeta_v . dX + zeta'_v : (XX - dX (x) dX) for one interval."""
    C = XX - np.outer(dX, dX)
    return np.einsum("i,in->n", dX, zeta_v) + np.einsum("ji,ijn->n", C, zetap_v)


def cell_germs(zeta: np.ndarray, zetap: np.ndarray, rp: RoughPath,
               endpoint: str = "right") -> np.ndarray:
    """Per-cell germ values xi_i on [t_i, t_{i+1}] for integrands on nodes.

    ``endpoint='right'`` is the compensated right-point germ;
    ``'left'`` is the uncompensated left-point germ zeta_u dX + zeta'_u : XX.
    """
    dX = np.diff(rp.X, axis=0)
    XX = rp.XX
    if endpoint == "right":
        C = XX - dX[:, :, None] * dX[:, None, :]
        return (np.einsum("mi,min->mn", dX, zeta[1:])
                + np.einsum("mji,mijn->mn", C, zetap[1:]))
    if endpoint == "left":
        return (np.einsum("mi,min->mn", dX, zeta[:-1])
                + np.einsum("mji,mijn->mn", XX, zetap[:-1]))
    raise SewingError(f"unknown endpoint {endpoint!r}")


def convolution_germ(S: Callable, zeta: Callable, zetap: Callable, dX: Callable,
                     XX: Callable, t: float, endpoint: str = "right") -> Germ:
    """Continuous-time germ (u, v) -> S(t, u) applied to the local expansion.

    ``S(t, u, w)`` applies the propagator to ``w``; ``dX(u, v)``/``XX(u, v)``
    give the driver increments; ``zeta(r)``/``zetap(r)`` the integrand pair.
    """
    def J(u, v):
        if endpoint == "right":
            w = compensated_germ(zeta(v), zetap(v), dX(u, v), XX(u, v))
        else:
            w = (np.einsum("i,in->n", dX(u, v), zeta(u))
                 + np.einsum("ji,ijn->n", XX(u, v), zetap(u)))
        return S(t, u, w)
    return Germ(J)


def grid_convolution(S: EvolutionFamily, zeta, zetap, rp: RoughPath, start: int = 0,
                     xi: np.ndarray | None = None) -> np.ndarray:
    """z_t = int_{t_start}^t S_{t,r} zeta_r . dX_r at every node (zero before start)."""
    if xi is None:
        xi = cell_germs(zeta, zetap, rp)
    z = np.zeros((rp.M + 1, xi.shape[1]))
    for i in range(start, rp.M):
        z[i + 1] = S.step_apply(i, z[i] + xi[i])
    return z


def rough_convolution(S: EvolutionFamily, zeta, zetap, rp: RoughPath, s: int, t: int,
                      xi: np.ndarray | None = None) -> np.ndarray:
    """Convolution over nodes [s, t] on the finest (cell) partition."""
    if t < s:
        raise SewingError("rough_convolution needs s <= t")
    if xi is None:
        xi = cell_germs(zeta, zetap, rp)
    z = np.zeros(xi.shape[1])
    for i in range(s, t):
        z = S.step_apply(i, z + xi[i])
    return z


def _apply_pair(S: EvolutionFamily, b: int, a: int, w: np.ndarray, logs=None):
    if logs is not None:
        return np.exp(logs[b] - logs[a]) * w
    return S.apply(b, a, w)


def _log_steps(S: EvolutionFamily):
    """Cumulative logs of diagonal steps, so S_{t,s} = exp(L_t - L_s)."""
    if S.mode != "diag":
        return None
    out = np.zeros((S.M + 1, S.spec.dim))
    for i in range(S.M):
        hs = S.h[i] / S.substeps
        out[i + 1] = out[i] + hs * sum(g.diag for g in S.mids[i])
    return out


def integral_remainder(S: EvolutionFamily, zeta, zetap, rp: RoughPath, s: int, t: int,
                       value: np.ndarray | None = None) -> np.ndarray:
    """R_{t,s} = conv over [s,t] - S_{t,s}(zeta_t dX + zeta'_t : (XX - dX dX))."""
    if value is None:
        value = rough_convolution(S, zeta, zetap, rp, s, t)
    w = compensated_germ(zeta[t], zetap[t], rp.increment(s, t), rp.level2(s, t))
    return value - S.apply(t, s, w)


def remainder_table(S: EvolutionFamily, zeta, zetap, rp: RoughPath, lags=None,
                    max_anchors: int = 64) -> dict:
    """Integral remainders R_{s+lag, s} for dyadic lags and evenly spaced anchors.

    Returns {lag: (anchor indices, remainders)}; one convolution sweep per
    anchor serves every lag.
    """
    M = rp.M
    lags = dyadic_lags(M) if lags is None else list(lags)
    step = max(1, M // max_anchors)
    anchors = list(range(0, M, step))
    xi = cell_germs(zeta, zetap, rp)
    logs = _log_steps(S)
    C = rp.level2_from_origin()
    out = {lag: ([], []) for lag in lags}
    for a in anchors:
        z = np.zeros(xi.shape[1])
        ends = {a + L: L for L in lags if a + L <= M}
        if not ends:
            continue
        for i in range(a, max(ends)):
            z = S.step_apply(i, z + xi[i])
            b = i + 1
            if b in ends:
                dX = rp.X[b] - rp.X[a]
                Y = rp.X[a] - rp.X[0]
                XX = C[b] - C[a] - np.outer(Y, dX)
                w = compensated_germ(zeta[b], zetap[b], dX, XX)
                R = z - _apply_pair(S, b, a, w, logs)
                out[ends[b]][0].append(a)
                out[ends[b]][1].append(R)
    return {L: (np.array(a), np.array(r)) for L, (a, r) in out.items() if a}


def _rate_window(params: CRPParams, kappa: float, iota: float):
    g0, g, s, eps = params.gamma0, params.gamma, params.sigma, params.eps
    if not (-s <= kappa + iota < g0 + g - s):
        raise SewingError(
            f"-sigma <= kappa + iota < gamma0 + gamma - sigma violated "
            f"(kappa + iota = {kappa + iota:.6g})")
    if not (0 <= iota <= 2 * eps):
        raise SewingError(f"0 <= iota <= 2 eps violated (iota={iota}, eps={eps})")


def remainder_rate_check(S: EvolutionFamily, zeta, zetap, rp: RoughPath,
                         params: CRPParams, beta: float, kappa: float = 0.0,
                         iota: float = 0.0, lags=None, max_anchors: int = 64,
                         min_lag: int = 2, table=None, max_lag: int | None = None) -> dict:
    """Log-log slope of the weighted remainder sup s^(2eps - iota)|R|_{beta+kappa}.

    Returns the fit, the theoretical floor gamma0 + gamma - sigma - kappa - iota
    and the per-lag sups.  A vanishing integrand skips the check.
    """
    _rate_window(params, kappa, iota)
    floor = params.gamma0 + params.gamma - params.sigma - kappa - iota
    if not np.any(zeta) and not np.any(zetap):
        return {"skipped": True, "floor": floor, "fit": None}
    M = rp.M
    # the estimate is a small-scale statement; large lags saturate
    max_lag = max(M // 16, 8 * min_lag) if max_lag is None else max_lag
    lags = dyadic_lags(M, min_lag, max_lag) if lags is None else lags
    if table is None:
        table = remainder_table(S, zeta, zetap, rp, lags, max_anchors)
    w_exp = 2 * params.eps - iota
    sups, used = [], []
    for L in lags:
        if L not in table:
            continue
        a, R = table[L]
        s = rp.times[a]
        n = S.spec.packed_norm(R, beta + kappa)
        if w_exp > 0:
            keep = s > 0
            n, s = n[keep] * s[keep] ** w_exp, s[keep]
        elif w_exp < 0:
            keep = s > 0
            n = n[keep] * s[keep] ** w_exp
        if n.size and n.max() > 0:
            sups.append(float(n.max()))
            used.append(L)
    sups, used = np.array(sups), np.array(used)
    if used.size < 4:
        fit = SlopeFit(float("nan"), float("nan"), float("nan"), used, sups, True)
    else:
        x, y = np.log(used * rp.h), np.log(sups)
        coef = np.polyfit(x, y, 1)
        res = float(np.sqrt(np.mean((np.polyval(coef, x) - y) ** 2)))
        fit = SlopeFit(float(coef[0]), float(coef[1]), res, used, sups)
    return {"skipped": False, "floor": floor, "fit": fit, "lags": used, "sups": sups}


# ------------------------------------------- controlled convolutions
def tuple_path(zeta, zetap, spec: ScaleSpec, rp: RoughPath, params: CRPParams) -> ControlledPath:
    """View a d-tuple integrand pair as one controlled path on a wider scale."""
    M1, d, dim = zeta.shape
    wide = ScaleSpec(spec.N, spec.n1 * d, spec.period)
    y = zeta.reshape(M1, d * dim)
    yp = np.transpose(zetap, (0, 2, 1, 3)).reshape(M1, d, d * dim)
    return ControlledPath(params, wide, rp, y, yp)


def convolution_as_controlled(S: EvolutionFamily, zeta, zetap, rp: RoughPath,
                              params: CRPParams, integrand_params: CRPParams | None = None,
                              mode: str | None = None) -> dict:
    """(z, z') = (int S zeta dX, zeta) with its norm and the integrand's norm."""
    z = grid_convolution(S, zeta, zetap, rp)
    cp = ControlledPath(params, S.spec, rp, z, zeta)
    ip = params if integrand_params is None else integrand_params
    norm_z = crp_norm(cp, mode)
    norm_zeta = crp_norm(tuple_path(zeta, zetap, S.spec, rp, ip), mode)
    eps = params.eps
    sup_smooth = float(np.max(rp.times[1:] ** eps
                              * S.spec.packed_norm(z[1:], params.alpha + eps), initial=0.0))
    ratio = norm_z.total / norm_zeta.total if norm_zeta.total > 0 else 0.0
    return {"path": cp, "norm": norm_z, "integrand_norm": norm_zeta,
            "ratio": ratio, "weighted_sup_alpha_eps": sup_smooth}


def perturbed_convolution(S1: EvolutionFamily, S2: EvolutionFamily, zeta, zetap,
                          rp: RoughPath, s: int, t: int) -> dict:
    """int (S1 - S2) zeta dX over [s, t] computed two independent ways."""
    if S1.M != S2.M:
        raise PropagatorError("families live on different grids")
    xi = cell_germs(zeta, zetap, rp)
    diff = (rough_convolution(S1, zeta, zetap, rp, s, t, xi)
            - rough_convolution(S2, zeta, zetap, rp, s, t, xi))
    direct = np.zeros(xi.shape[1])
    for i in range(s, t):
        direct += S1.apply(t, i + 1, S1.step_apply(i, xi[i])) - S2.apply(
            t, i + 1, S2.step_apply(i, xi[i]))
    return {"value": diff, "germ_sum": direct, "gap": float(np.abs(diff - direct).max())}


def perturbation_rate_check(make_S: Callable[[float], EvolutionFamily], cs, zeta, zetap,
                            rp: RoughPath, params: CRPParams, beta: float,
                            kappa: float = 0.0, iota: float = 0.0,
                            max_anchors: int = 16) -> dict:
    """sup of weighted |R^{S(0)} - R^{S(c)}| for each c, and ratios between consecutive c."""
    _rate_window(params, kappa, iota)
    lags = dyadic_lags(rp.M)
    base = remainder_table(make_S(0.0), zeta, zetap, rp, lags, max_anchors)
    w_exp = 2 * params.eps - iota
    spec = make_S(0.0).spec
    values = []
    for c in cs:
        tab = remainder_table(make_S(c), zeta, zetap, rp, lags, max_anchors)
        best = 0.0
        for L, (a, R) in tab.items():
            D = R - base[L][1]
            s = rp.times[a]
            n = spec.packed_norm(D, beta + kappa)
            if w_exp != 0:
                keep = s > 0
                n = n[keep] * s[keep] ** w_exp
            dt = rp.times[L] - rp.times[0]
            expo = params.gamma0 + params.gamma - params.sigma - kappa - iota
            if n.size:
                best = max(best, float(n.max()) / dt**expo)
        values.append(best)
    values = np.array(values)
    ratios = values[1:] / values[:-1]
    return {"c": np.asarray(cs), "values": values, "ratios": ratios}


def rates_to_csv(report: dict, path, header_comment: str = "") -> None:
    fit = report["fit"]
    with open(path, "w", newline="") as fh:
        for line in header_comment.splitlines():
            fh.write(f"# {line}\r\n")
        fh.write("lag,weighted_remainder_sup,fitted_slope\r\n")
        for L, v in zip(report["lags"], report["sups"]):
            fh.write(f"{int(L)},{v:.17g},{fit.slope:.17g}\r\n")
