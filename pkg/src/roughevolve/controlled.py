"""Controlled rough paths over the Fourier scale and their weighted norms.

A controlled path is stored as packed real arrays on the driver's grid:
``y`` has shape (M+1, dim) and ``yprime`` shape (M+1, d, dim), where
``dim`` is the flattened packed length of the scale.  Two-parameter
quantities are never materialised; they are produced one lag at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .roughpath import RoughPath, rho
from .scale import ScaleError, ScaleSpec, SpectralField

__all__ = [
    "ParameterError",
    "CRPParams",
    "ControlledPath",
    "NormBreakdown",
    "SlopeFit",
    "dyadic_lags",
    "pair_lags",
    "weighted_seminorm",
    "weighted_sup",
    "crp_norm",
    "holder_slope",
    "lag_sups",
    "interpolation_estimates_check",
    "trajectory_to_csv",
]

EXACT_LIMIT = 1024


class ParameterError(ValueError):
    """A parameter inequality is violated; the message names it."""


@dataclass(frozen=True)
class CRPParams:
    gamma0: float = 0.45
    gamma: float = 0.4
    gammap: float = 0.3
    sigma: float = 0.0
    alpha: float = 0.5
    eps: float | None = None

    def __post_init__(self):
        if self.eps is None:
            object.__setattr__(self, "eps", max(self.gamma - self.sigma, 0.0))
        for msg in self.violations():
            raise ParameterError(msg)

    def violations(self) -> list[str]:
        g0, g, gp, s, a = self.gamma0, self.gamma, self.gammap, self.sigma, self.alpha
        out = []
        if not (1 / 3 < g0 < 0.5):
            out.append(f"1/3 < gamma0 < 1/2 violated (gamma0={g0})")
        if not (1 / 3 < g <= g0):
            out.append(f"1/3 < gamma <= gamma0 violated (gamma={g}, gamma0={g0})")
        if not (0 <= s <= g):
            out.append(f"0 <= sigma <= gamma violated (sigma={s}, gamma={g})")
        if not (1 - g0 - g < gp <= g):
            out.append(f"1 - gamma0 - gamma < gamma' <= gamma violated "
                       f"(gamma'={gp}, bounds ({1 - g0 - g:.6g}, {g}])")
        lo, hi = 1 - g - g0 + 2 * s, 1 - g + s
        if not (lo < a <= hi):
            out.append(f"1 - gamma - gamma0 + 2 sigma < alpha <= 1 - gamma + sigma "
                       f"violated (alpha={a}, bounds ({lo:.6g}, {hi:.6g}])")
        if not (0 <= a <= 1):
            out.append(f"0 <= alpha <= 1 violated (alpha={a})")
        if self.eps < 0:
            out.append(f"eps >= 0 violated (eps={self.eps})")
        return out

    @property
    def base_prime(self) -> float:
        """Index alpha - sigma - gamma' of the derivative and remainder seminorms."""
        return self.alpha - self.sigma - self.gammap


def dyadic_lags(M: int, min_lag: int = 1, max_lag: int | None = None) -> list[int]:
    max_lag = M if max_lag is None else max_lag
    lags, lag = [], 1
    while lag <= max_lag:
        if lag >= min_lag:
            lags.append(lag)
        lag *= 2
    return lags


def pair_lags(M: int, mode: str | None = None) -> list[int]:
    """All lags in exact mode, dyadic lags in strided mode.

    The default is exact up to M = 1024 cells and strided beyond.
    """
    if mode is None:
        mode = "exact" if M <= EXACT_LIMIT else "strided"
    if mode == "exact":
        return list(range(1, M + 1))
    if mode == "strided":
        return dyadic_lags(M)
    raise ValueError(f"unknown pair mode {mode!r}")


def weighted_sup(values: np.ndarray, times: np.ndarray, eps: float) -> float:
    """sup over t of t**eps |values_t|; t = 0 is excluded when eps > 0."""
    v = np.asarray(values, dtype=float)
    if eps > 0:
        return float(np.max(times[1:] ** eps * v[1:], initial=0.0))
    return float(np.max(v, initial=0.0))


def weighted_seminorm(R, times, gexp: float, beta: float, eps: float,
                      spec: ScaleSpec | None = None, mode: str | None = None) -> float:
    """sup over pairs s < t of s**eps |R_{t,s}|_beta / (t - s)**gexp.

    ``R`` is either an array indexed ``R[t, s, ...]`` (packed trailing axis
    when ``spec`` is given, scalar or vector otherwise) or a callable
    ``lag -> array`` returning the values for the pairs (i, i + lag).
    Pairs with s = 0 are excluded when eps > 0.
    """
    times = np.asarray(times, dtype=float)
    M = times.size - 1
    if callable(R):
        fn = R
    else:
        arr = np.asarray(R)
        idx = np.arange(M + 1)

        def fn(lag):
            return arr[idx[lag:], idx[:-lag]]

    def norms(v):
        v = np.asarray(v, dtype=float)
        if spec is not None:
            return spec.packed_norm(v.reshape(v.shape[0], -1), beta)
        if beta < 0:
            raise ScaleError(f"scale index must be >= 0, got {beta!r}")
        return np.abs(v) if v.ndim == 1 else np.linalg.norm(v.reshape(v.shape[0], -1), axis=1)

    best = 0.0
    for lag in pair_lags(M, mode):
        n = norms(fn(lag))
        s = times[: M + 1 - lag]
        dt = times[lag] - times[0]
        w = s**eps if eps > 0 else np.ones_like(s)
        if eps > 0:
            n, w = n[1:], w[1:]
        if n.size:
            best = max(best, float((w * n).max()) / dt**gexp)
    return best


@dataclass
class ControlledPath:
    """Pair (y, y') of packed arrays controlled by ``driver``."""

    params: CRPParams
    spec: ScaleSpec
    driver: RoughPath
    y: np.ndarray
    yprime: np.ndarray

    def __post_init__(self):
        M, d, dim = self.driver.M, self.driver.d, self.spec.dim
        self.y = np.asarray(self.y, dtype=float).reshape(M + 1, dim)
        self.yprime = np.asarray(self.yprime, dtype=float).reshape(M + 1, d, dim)

    @property
    def times(self) -> np.ndarray:
        return self.driver.times

    @property
    def M(self) -> int:
        return self.driver.M

    def field(self, i: int) -> SpectralField:
        return SpectralField.from_packed(self.spec, self.y[i])

    def derivative_fields(self, i: int) -> list[SpectralField]:
        return [SpectralField.from_packed(self.spec, v) for v in self.yprime[i]]

    def delta(self, lag: int) -> np.ndarray:
        return self.y[lag:] - self.y[:-lag]

    def delta_prime(self, lag: int) -> np.ndarray:
        return self.yprime[lag:] - self.yprime[:-lag]

    def remainder(self, lag: int) -> np.ndarray:
        """R_{t,s} = delta y_{t,s} - y'_t . delta X_{t,s} for pairs (i, i+lag)."""
        dX = self.driver.X[lag:] - self.driver.X[:-lag]
        return self.delta(lag) - np.einsum("ti,tin->tn", dX, self.yprime[lag:])


@dataclass
class NormBreakdown:
    sup_y: float
    holder_y: float
    sup_yprime: float
    holder_yprime: float
    remainder: float
    extras: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return (self.sup_y + self.holder_y + self.sup_yprime
                + self.holder_yprime + self.remainder)

    def as_dict(self) -> dict:
        return {"sup_y": self.sup_y, "holder_y": self.holder_y,
                "sup_yprime": self.sup_yprime, "holder_yprime": self.holder_yprime,
                "remainder": self.remainder, "total": self.total}


def _tuple_norm(spec: ScaleSpec, v: np.ndarray, beta: float) -> np.ndarray:
    """Norm of d-tuples (trailing axes (d, dim)) as the l2 over the tuple."""
    return np.sqrt((spec.packed_norm(v, beta) ** 2).sum(axis=-1))


def crp_norm(cp: ControlledPath, mode: str | None = None) -> NormBreakdown:
    """The five summands of the controlled-path norm and their sum."""
    p, spec, t = cp.params, cp.spec, cp.times
    lo = p.base_prime
    if lo < 0:
        raise ScaleError(f"alpha - sigma - gamma' >= 0 violated (value {lo:.6g})")
    a, s, eps = p.alpha, p.sigma, p.eps
    sup_y = float(spec.packed_norm(cp.y, a).max())
    holder_y = weighted_seminorm(cp.delta, t, p.gamma, a - s, eps, spec, mode)
    sup_yp = weighted_sup(_tuple_norm(spec, cp.yprime, a - s), t, eps)
    holder_yp = weighted_seminorm(
        lambda lag: np.sqrt((spec.packed_norm(cp.delta_prime(lag), lo) ** 2).sum(-1)),
        t, p.gammap, 0.0, 2 * eps, None, mode)
    rem = weighted_seminorm(cp.remainder, t, p.gamma + p.gammap, lo, 2 * eps, spec, mode)
    return NormBreakdown(sup_y, holder_y, sup_yp, holder_yp, rem)


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    residual: float
    lags: np.ndarray
    values: np.ndarray
    degenerate: bool = False


def lag_sups(fn: Callable[[int], np.ndarray], times, lags, eps: float = 0.0) -> np.ndarray:
    """Per-lag sup of s**eps * fn(lag) (fn returns nonnegative values per s)."""
    times = np.asarray(times, dtype=float)
    M = times.size - 1
    out = []
    for lag in lags:
        v = np.asarray(fn(lag), dtype=float)
        s = times[: M + 1 - lag]
        if eps > 0:
            v, s = v[1:], s[1:]
            v = v * s**eps
        out.append(float(v.max()) if v.size else 0.0)
    return np.array(out)


def holder_slope(data, times=None, beta: float = 0.0, spec: ScaleSpec | None = None,
                 eps: float = 0.0, lags=None, min_lag: int = 1,
                 max_lag: int | None = None) -> SlopeFit:
    """Log-log regression of the per-lag sup of increments against the lag.

    ``data`` is a one-parameter path (values per node, packed if ``spec``
    is given) or a callable ``lag -> nonnegative values`` describing a
    two-parameter quantity.  Lags with zero sup are dropped; fewer than
    four remaining lags flags the fit as degenerate.
    """
    if times is None:
        n = len(data) - 1 if not callable(data) else None
        if n is None:
            raise ValueError("times are required for two-parameter data")
        times = np.linspace(0.0, 1.0, n + 1)
    times = np.asarray(times, dtype=float)
    M = times.size - 1
    if lags is None:
        lags = dyadic_lags(M, min_lag, max_lag)
    lags = np.asarray(lags)
    if callable(data):
        fn = data
    else:
        y = np.asarray(data, dtype=float)
        if y.ndim == 1:
            y = y[:, None]

        def fn(lag):
            inc = y[lag:] - y[:-lag]
            if spec is not None:
                return spec.packed_norm(inc, beta)
            return np.linalg.norm(inc, axis=1)

    sups = lag_sups(fn, times, lags, eps)
    keep = sups > 0
    h = times[1] - times[0]
    if keep.sum() < 4:
        return SlopeFit(float("nan"), float("nan"), float("nan"), lags, sups, True)
    x, v = np.log(lags[keep] * h), np.log(sups[keep])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, v, rcond=None)
    res = float(np.sqrt(np.mean((A @ coef - v) ** 2)))
    return SlopeFit(float(coef[0]), float(coef[1]), res, lags, sups)


def interpolation_estimates_check(cp: ControlledPath, theta: float,
                                  mode: str | None = None) -> dict:
    """Ratios of the three interpolated seminorms to (1 v rho) * norm.

    Returns the seminorms, the normalising factor and the ratios, keyed
    ``"delta_y"``, ``"remainder"`` and ``"delta_yprime"``.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    p, spec, t = cp.params, cp.spec, cp.times
    eps, a, s, g, gp = p.eps, p.alpha, p.sigma, p.gamma, p.gammap
    total = crp_norm(cp, mode).total
    scale = max(1.0, rho(cp.driver, g)) * total
    lower = a - (1 + theta) * s - gp
    semis = {
        "delta_y": weighted_seminorm(cp.delta, t, theta * g, a - theta * s,
                                     theta * eps, spec, mode),
        "remainder": weighted_seminorm(cp.remainder, t, g + theta * gp, lower,
                                       eps * (1 + theta), spec, mode),
        "delta_yprime": weighted_seminorm(
            lambda lag: np.sqrt((spec.packed_norm(cp.delta_prime(lag), lower) ** 2).sum(-1)),
            t, theta * gp, 0.0, eps * (1 + theta), None, mode),
    }
    ratios = {k: (v / scale if scale > 0 else 0.0) for k, v in semis.items()}
    return {"seminorms": semis, "scale": scale, "ratios": ratios}


def trajectory_to_csv(cp: ControlledPath, path, header_comment: str = "") -> None:
    p, spec = cp.params, cp.spec
    na = spec.packed_norm(cp.y, p.alpha)
    ns = spec.packed_norm(cp.y, p.alpha - p.sigma)
    nd = _tuple_norm(spec, cp.yprime, p.alpha - p.sigma)
    with open(path, "w", newline="") as fh:
        for line in header_comment.splitlines():
            fh.write(f"# {line}\r\n")
        fh.write("t,norm_alpha,norm_alpha_minus_sigma,norm_prime\r\n")
        for row in zip(cp.times, na, ns, nd):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\r\n")
