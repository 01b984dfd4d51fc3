"""Concrete quasilinear models on the 1-D torus.

Nemytskii terms are evaluated by collocation with enough samples that the
truncated product is exact (no aliasing into retained modes); linear
multiplications use Galerkin matrices, which agree with dealiased
collocation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controlled import CRPParams, ParameterError, holder_slope
from .propagator import Generator
from .roughpath import RoughPath
from .scale import ScaleSpec, SpectralField
from .solver import QuasilinearModel, SolveResult

__all__ = [
    "LEVI_CIVITA",
    "dealias_samples",
    "linear_model",
    "llg_make",
    "llg_matrix",
    "llg_G",
    "llg_GG",
    "llg_davie_check",
    "SKTParameters",
    "skt_make",
    "skt_B",
    "skt_constant_rhs",
    "polynomial_model",
]

LEVI_CIVITA = np.zeros((3, 3, 3))
for _a, _b, _c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI_CIVITA[_a, _b, _c], LEVI_CIVITA[_a, _c, _b] = 1.0, -1.0


def dealias_samples(spec: ScaleSpec, degree: int) -> int:
    """Smallest even sample count making degree-``degree`` products exact."""
    n = max(spec.min_samples, (degree + 1) * spec.N + 1)
    return n + (n % 2)


def _field_samples(spec: ScaleSpec, f, n: int) -> np.ndarray:
    """Scalar coefficient (number or packed scalar field) sampled at n points."""
    if np.isscalar(f):
        return np.full(n, float(f))
    f = np.asarray(f.packed() if hasattr(f, "packed") else f, dtype=float).reshape(-1)
    return ScaleSpec(spec.N, 1, spec.period).to_samples(f, n)


def _is_constant(f) -> bool:
    if np.isscalar(f):
        return True
    f = np.asarray(f.packed() if hasattr(f, "packed") else f, dtype=float).reshape(-1)
    return bool(np.all(f[1:] == 0.0))


def _laplacian(spec: ScaleSpec, shift: float) -> np.ndarray:
    """Packed diagonal of Delta - shift, one block per component."""
    return np.tile(-(spec.packed_lam - 1.0) - shift, spec.n1)


# ---------------------------------------------------------------- linear
def linear_model(spec: ScaleSpec, params: CRPParams, symbol=None, noise=(),
                 drift=None, name: str = "linear") -> QuasilinearModel:
    """L = diag(symbol) (default Delta - 1), F^i(u) = B_i u, N = drift(t, u).

    ``noise`` is a sequence of dim x dim matrices (or scalars, meaning a
    multiple of the identity).
    """
    diag = _laplacian(spec, 1.0) if symbol is None else np.asarray(symbol, dtype=float)
    gen = Generator(diag=diag)
    Bs = [b * np.eye(spec.dim) if np.isscalar(b) else np.asarray(b, dtype=float)
          for b in noise]
    d = max(len(Bs), 1)
    F = DF = None
    if Bs:
        stack = np.stack(Bs)
        F = lambda y: stack @ y
        DF = lambda y, h: stack @ h
    return QuasilinearModel(spec, d, params, lambda t, y: gen, drift, F, DF,
                            name=name, meta={"noise": Bs, "symbol": diag})


# ------------------------------------------------------------------- LLG
def llg_matrix(y, phi: float = 1.0, damping: int = 0) -> np.ndarray:
    """f_phi(x, y) at one point: column i is F^i, the coefficient of dW^i.

    The damping block is |y|^2 I - y y^T, the expansion of
    -y x (y x w); it agrees with the displayed pattern at (0, 0, 1).
    """
    y = np.asarray(y, dtype=float)
    skew = np.array([[0.0, -y[2], y[1]], [y[2], 0.0, -y[0]], [-y[1], y[0], 0.0]])
    out = phi * skew
    if damping:
        out = out + damping * phi * (np.dot(y, y) * np.eye(3) - np.outer(y, y))
    return out


def llg_G(v, dW, phi: float = 1.0) -> np.ndarray:
    """First-order Davie term f(v) dW = phi v x dW."""
    return phi * np.cross(v, dW)


def llg_GG(v, WW, phi: float = 1.0) -> np.ndarray:
    """Second-order term sum_ij DF^i[F^j](v) WW^{ji} = phi^2 (WW - tr WW) v."""
    WW = np.asarray(WW, dtype=float)
    return phi**2 * (WW @ v - np.trace(WW) * np.asarray(v))


def llg_make(spec: ScaleSpec, phi=1.0, damping: int = 0,
             params: CRPParams | None = None, shift: bool = False,
             cutoff: float | None = None) -> QuasilinearModel:
    """Stochastic LLG: du = (Delta u + u x Delta u + u |u_x|^2) dt + f_phi(u) dW.

    With ``shift`` the generator uses Delta - 1 with the identity moved
    into the drift; without it the generator is Delta + u x Delta.
    """
    if spec.n1 != 3:
        raise ParameterError("LLG needs n1 = 3 components")
    if damping not in (0, 1):
        raise ParameterError("damping flag must be 0 or 1")
    params = CRPParams(gamma0=0.45, gamma=0.4, gammap=0.3, sigma=0.0, alpha=0.55) \
        if params is None else params
    if not 0.5 < params.alpha <= 1.0:
        raise ParameterError(f"1/2 < alpha <= 1 violated (alpha={params.alpha})")
    n, m = spec.n_modes, spec.dim
    c = 1.0 if shift else 0.0
    lap = _laplacian(spec, c)
    D1 = spec.packed_derivative
    const_phi = _is_constant(phi)
    phi0 = float(phi if np.isscalar(phi) else np.asarray(
        phi.packed() if hasattr(phi, "packed") else phi).reshape(-1)[0])
    Mphi = np.eye(n) * phi0 if const_phi else ScaleSpec(spec.N, 1, spec.period) \
        .multiplication_operator(np.asarray(phi.packed() if hasattr(phi, "packed")
                                            else phi).reshape(-1))
    deg = 3 if const_phi else 4
    ns = dealias_samples(spec, deg)
    phis = _field_samples(spec, phi, ns)
    scalar = ScaleSpec(spec.N, 1, spec.period)

    def comps(y):
        return y.reshape(3, n)

    def generator(t, y):
        Y = comps(y)
        Ms = [scalar.multiplication_operator(Y[b]) for b in range(3)]
        C = np.zeros((m, m))
        for a in range(3):
            for b in range(3):
                for k in range(3):
                    e = LEVI_CIVITA[a, b, k]
                    if e != 0.0:
                        C[a * n:(a + 1) * n, k * n:(k + 1) * n] += e * Ms[b]
        return Generator(matrix=np.diag(lap) + C * lap[None, :])

    def drift(t, y):
        Y = comps(y)
        us = spec.to_samples(Y, ns)
        gs = spec.to_samples(Y @ D1.T, ns)
        out = spec.from_samples(us * (gs**2).sum(0)).reshape(-1)
        return out + c * y

    # skew part is linear: F^i(u) = Mphi (u x e_i)
    skew = np.zeros((3, m, m))
    for i in range(3):
        for a in range(3):
            for b in range(3):
                e = LEVI_CIVITA[a, b, i]
                if e != 0.0:
                    skew[i, a * n:(a + 1) * n, b * n:(b + 1) * n] = e * Mphi

    def noise(y):
        out = skew @ y
        if damping:
            us = spec.to_samples(comps(y), ns)
            sq = (us**2).sum(0)
            for i in range(3):
                s = -us * us[i]
                s[i] += sq
                out[i] += spec.from_samples(phis * s).reshape(-1)
        return out

    def noise_derivative(y, h):
        out = skew @ h
        if damping:
            us = spec.to_samples(comps(y), ns)
            hs = spec.to_samples(comps(h), ns)
            uh = (us * hs).sum(0)
            for i in range(3):
                s = -hs * us[i] - us * hs[i]
                s[i] += 2.0 * uh
                out[i] += spec.from_samples(phis * s).reshape(-1)
        return out

    return QuasilinearModel(
        spec, 3, params, generator, drift, noise, noise_derivative, None,
        eta=params.alpha, cutoff=cutoff, name="llg",
        meta={"phi": phi, "damping": damping, "shift": shift, "skew": skew})


def llg_davie_check(result: SolveResult, rp: RoughPath | None = None,
                    lags=None, max_lag: int | None = None) -> dict:
    """Hoelder slope of the Davie remainder u_natural in L^2.

    u_natural_{s,t} = delta u - int (u_xx + u |u_x|^2 + u x u_xx) dr
                      - G_{t,s} u_s - GG_{t,s} u_s,
    with the drift integral by the trapezoidal product rule on the grid.
    """
    model = result.model
    if model.name != "llg":
        raise ParameterError("Davie check applies to LLG results")
    if model.meta["damping"]:
        raise ParameterError("Davie check needs damping = 0")
    rp = result.driver if rp is None else rp
    spec = model.spec
    u, times = result.u, rp.times
    M = rp.M
    n = spec.n_modes
    lap = -(spec.packed_lam - 1.0)
    D1 = spec.packed_derivative
    ns = dealias_samples(spec, 3)

    def physical_drift(y):
        Y = y.reshape(3, n)
        L = Y * lap
        us = spec.to_samples(Y, ns)
        gs = spec.to_samples(Y @ D1.T, ns)
        ls = spec.to_samples(L, ns)
        s = us * (gs**2).sum(0) + np.cross(us.T, ls.T).T
        return (L + spec.from_samples(s)).reshape(-1)

    drifts = np.array([physical_drift(v) for v in u])
    cum = np.zeros_like(u)
    cum[1:] = np.cumsum(0.5 * np.diff(times)[:, None] * (drifts[1:] + drifts[:-1]), axis=0)
    skew = model.meta["skew"]
    # the constant-weight case uses the matrix form of G and GG
    C = rp.level2_from_origin()

    def natural(lag):
        dX, XX = rp.lag_increments(lag, C)
        us = u[:-lag]
        G = np.einsum("tj,jmn,tn->tm", dX, skew, us)
        Fu = np.einsum("jmn,tn->tjm", skew, us)
        GG = np.einsum("tij,imn,tjn->tm", XX.transpose(0, 2, 1), skew, Fu)
        return u[lag:] - us - (cum[lag:] - cum[:-lag]) - G - GG

    if lags is None:
        top = max_lag if max_lag is not None else max(4, M // 16)
        lags = [2**k for k in range(int(np.log2(top)) + 1)]
    fit = holder_slope(lambda lag: spec.packed_norm(natural(lag), 0.0), times, lags=lags)
    return {"slope": fit.slope, "fit": fit, "natural": natural}


# ------------------------------------------------------------------- SKT
@dataclass(frozen=True)
class SKTParameters:
    alpha: tuple = (1.0, 1.0)
    beta: tuple = (0.5, 0.5)
    gamma: tuple = (0.5, 0.5)
    delta: tuple = (1.0, 1.0)
    theta: tuple = ((1.0, 0.5), (0.5, 1.0))
    noise: tuple = (0.5, 0.5)

    def violations(self) -> list[str]:
        out = []
        for i in range(2):
            a, b, g = self.alpha[i], self.beta[i], self.gamma[i]
            if not g**2 < 8 * a * b:
                out.append(f"gamma{i + 1}^2 < 8 alpha{i + 1} beta{i + 1} violated "
                           f"({g**2:.6g} >= {8 * a * b:.6g})")
            if min(a, b, g) < 0:
                out.append(f"alpha{i + 1}, beta{i + 1}, gamma{i + 1} >= 0 violated")
            if self.delta[i] <= 0:
                out.append(f"delta{i + 1}1 > 0 violated (delta={self.delta[i]})")
        if min(min(r) for r in self.theta) <= 0:
            out.append("theta_ij > 0 violated")
        return out


def skt_B(p: SKTParameters, u1, u2):
    """Cross-diffusion matrix entries (pointwise or on sample arrays)."""
    a, b, g = p.alpha, p.beta, p.gamma
    u1, u2 = np.broadcast_arrays(np.asarray(u1, dtype=float), np.asarray(u2, dtype=float))
    return np.array([[a[0] + 2 * b[0] * u1 + g[0] * u2, g[0] * u1],
                     [g[1] * u2, a[1] + 2 * b[1] * u2 + g[1] * u1]])


def skt_constant_rhs(p: SKTParameters, c) -> np.ndarray:
    """Right side of the ODE solved by spatially constant SKT data."""
    u1, u2 = c
    th = p.theta
    return np.array([p.delta[0] * u1 - th[0][0] * u1**2 - th[0][1] * u1 * u2,
                     p.delta[1] * u2 - th[1][0] * u1 * u2 - th[1][1] * u2**2])


def skt_make(spec: ScaleSpec, p: SKTParameters | None = None,
             params: CRPParams | None = None, eta: float = 0.55,
             cutoff: float | None = None, exact_positivity: bool = False) -> QuasilinearModel:
    """SKT: L(u)v = div(B(u) grad v) - Gamma v, Lotka-Volterra drift, F^i = s_i u_i e_i."""
    p = SKTParameters() if p is None else p
    for msg in p.violations():
        raise ParameterError(msg)
    if spec.n1 != 2:
        raise ParameterError("SKT needs n1 = 2 components")
    params = CRPParams(gamma0=0.45, gamma=0.4, gammap=0.3, sigma=0.2, alpha=0.8) \
        if params is None else params
    if not 0.75 < params.alpha <= 1.0:
        raise ParameterError(f"3/4 < alpha <= 1 violated (alpha={params.alpha})")
    n, m = spec.n_modes, spec.dim
    D1 = spec.packed_derivative
    scalar = ScaleSpec(spec.N, 1, spec.period)
    e0 = np.zeros(n)
    e0[0] = 1.0
    Gam = np.repeat(np.asarray(p.delta, dtype=float), n)
    ns = dealias_samples(spec, 2)
    th = np.asarray(p.theta, dtype=float)
    dl = np.asarray(p.delta, dtype=float)

    a_, b_, g_ = p.alpha, p.beta, p.gamma

    def generator(t, y):
        U1, U2 = y.reshape(2, n)
        # entries of B(u) as packed fields; constants live in mode 0
        B = ((a_[0] * e0 + 2 * b_[0] * U1 + g_[0] * U2, g_[0] * U1),
             (g_[1] * U2, a_[1] * e0 + 2 * b_[1] * U2 + g_[1] * U1))
        A = np.zeros((m, m))
        for a in range(2):
            for b in range(2):
                A[a * n:(a + 1) * n, b * n:(b + 1) * n] = \
                    D1 @ scalar.multiplication_operator(B[a][b]) @ D1
        return Generator(matrix=A - np.diag(Gam))

    def drift(t, y):
        us = spec.to_samples(y.reshape(2, n), ns)
        lv = np.stack([2 * dl[0] * us[0] - th[0, 0] * us[0]**2 - th[0, 1] * us[0] * us[1],
                       2 * dl[1] * us[1] - th[1, 0] * us[0] * us[1] - th[1, 1] * us[1]**2])
        return spec.from_samples(lv).reshape(-1)

    s = np.asarray(p.noise, dtype=float)
    sel = np.zeros((2, m, m))
    for i in range(2):
        sel[i, i * n:(i + 1) * n, i * n:(i + 1) * n] = s[i] * np.eye(n)

    def noise(y):
        return sel @ y

    def noise_derivative(y, h):
        return sel @ h

    guard_n = spec.min_samples

    def guard(y):
        us = spec.to_samples(y.reshape(2, n), guard_n)
        scale = max(float(np.abs(us).max()), 1e-300)
        floor = 0.0 if exact_positivity else -1e-6 * scale
        return bool(us.min() > floor)

    return QuasilinearModel(
        spec, 2, params, generator, drift, noise if s.any() else None,
        noise_derivative if s.any() else None, guard, eta=eta, cutoff=cutoff,
        name="skt", meta={"skt": p})


# ------------------------------------------------------------ polynomial
def polynomial_model(spec: ScaleSpec, params: CRPParams, drift_terms=(), noise_terms=(),
                     d: int = 1, diffusion: float = 1.0, samples: int | None = None,
                     name: str = "polynomial") -> QuasilinearModel:
    """Reaction-diffusion template with polynomial Nemytskii terms.

    drift_terms: (out, coef, i, mu, j, nu)  ->  g_out += coef u_i^mu (D u_j)^nu
    noise_terms: (channel, out, coef, i, q) ->  F^channel_out += coef u_i^q
    ``coef`` is a number or a packed scalar field.  L = diffusion (Delta - 1).
    """
    n = spec.n_modes
    D1 = spec.packed_derivative

    def degree(coef, *powers):
        return sum(powers) + (0 if _is_constant(coef) else 1)

    degs = [degree(t[1], t[3], t[5]) for t in drift_terms]
    degs += [degree(t[2], t[4]) + 1 for t in noise_terms]  # times h in DF
    need = max([1] + degs)
    ns = dealias_samples(spec, need) if samples is None else int(samples)
    if ns < (need + 1) * spec.N + 1 or ns < spec.min_samples:
        raise ParameterError(
            f"dealiasing needs at least {(need + 1) * spec.N + 1} samples for total "
            f"degree {need}, got {ns}")
    dterms = [(o, _field_samples(spec, c, ns), i, mu, j, nu)
              for (o, c, i, mu, j, nu) in drift_terms]
    nterms = [(l, o, _field_samples(spec, c, ns), i, q) for (l, o, c, i, q) in noise_terms]
    gen = Generator(diag=diffusion * _laplacian(spec, 1.0))

    def drift(t, y):
        Y = y.reshape(spec.n1, n)
        us = spec.to_samples(Y, ns)
        ds = spec.to_samples(Y @ D1.T, ns)
        out = np.zeros((spec.n1, ns))
        for o, c, i, mu, j, nu in dterms:
            out[o] += c * us[i] ** mu * ds[j] ** nu
        return spec.from_samples(out).reshape(-1)

    def noise(y):
        us = spec.to_samples(y.reshape(spec.n1, n), ns)
        out = np.zeros((d, spec.n1, ns))
        for l, o, c, i, q in nterms:
            out[l, o] += c * us[i] ** q
        return spec.from_samples(out).reshape(d, -1)

    def noise_derivative(y, h):
        us = spec.to_samples(y.reshape(spec.n1, n), ns)
        hs = spec.to_samples(h.reshape(spec.n1, n), ns)
        out = np.zeros((d, spec.n1, ns))
        for l, o, c, i, q in nterms:
            if q > 0:
                out[l, o] += c * q * us[i] ** (q - 1) * hs[i]
        return spec.from_samples(out).reshape(d, -1)

    return QuasilinearModel(
        spec, d, params, lambda t, y: gen, drift if dterms else None,
        noise if nterms else None, noise_derivative if nterms else None,
        name=name, meta={"samples": ns})
