"""Non-autonomous parabolic evolution families by frozen-coefficient steps.

Generators act on packed real vectors of a ``ScaleSpec``.  A generator
snapshot is either diagonal (a symbol per packed entry) or a dense real
matrix.  On each grid cell the family uses exp(h L(t_mid)), optionally
split into substeps, and two-parameter operators are compositions of the
cached cell steps, so S_{t,u} S_{u,s} = S_{t,s} holds by construction.

Dense exponentials come from ``scipy.linalg.expm`` (Pade scaling and
squaring) or, when only actions are needed, ``expm_multiply``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply
from scipy.special import beta as euler_beta

from .controlled import ControlledPath, dyadic_lags, lag_sups, weighted_sup
from .scale import ScaleSpec

__all__ = [
    "PropagatorError",
    "Generator",
    "GeneratorFamily",
    "EvolutionFamily",
    "make_family",
    "phi_functions",
    "step_action",
    "operator_norm",
    "measure_smoothing",
    "measure_anti_smoothing",
    "family_difference_norm",
    "gamma_perturbation",
    "lemma_bound",
    "reduced_increment_equivalence_check",
    "reference_solution",
    "probe_pairs",
]

DENSE_ACTION_MIN = 96  # below this size full exponentials are cheaper


class PropagatorError(ValueError):
    """Invalid propagator request or non-parabolic generator."""


@dataclass
class Generator:
    """Frozen generator in packed coordinates: ``diag`` or ``matrix``."""

    diag: np.ndarray | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if (self.diag is None) == (self.matrix is None):
            raise PropagatorError("give exactly one of diag or matrix")

    @property
    def dim(self) -> int:
        return len(self.diag) if self.diag is not None else self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) if self.diag is not None else self.matrix

    def apply(self, v: np.ndarray) -> np.ndarray:
        if self.diag is not None:
            return (self.diag * v.T).T
        return self.matrix @ v

    def __sub__(self, other: "Generator") -> "Generator":
        if self.diag is not None and other.diag is not None:
            return Generator(diag=self.diag - other.diag)
        return Generator(matrix=self.dense() - other.dense())

    def numerical_abscissa(self) -> float:
        """max Re of the field of values (largest eigenvalue of Sym)."""
        if self.diag is not None:
            return float(self.diag.max())
        A = self.matrix
        return float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])

    def spectral_abscissa(self) -> float:
        if self.diag is not None:
            return float(self.diag.max())
        return float(np.linalg.eigvals(self.matrix).real.max())


@dataclass
class GeneratorFamily:
    """t -> L_t with time-Hoelder exponent and optional admissibility bound."""

    spec: ScaleSpec
    eval: Callable[[float], Generator]
    hoelder: float = 1.0
    lipschitz: float | None = None
    abscissa_bound: float | None = None

    def __call__(self, t: float) -> Generator:
        return self.eval(t)

    @classmethod
    def constant(cls, spec: ScaleSpec, gen: Generator, **kw) -> "GeneratorFamily":
        return cls(spec, lambda t: gen, **kw)

    def resolvent_constant(self, t: float, angles=(0.6, 0.8, 0.95), radii=None) -> float:
        """Sampled sup of |mu - w| * |(mu - L_t)^-1| on rays arg(mu - w) = angle * pi.

        ``w`` is the numerical abscissa; the result is a proxy for the
        sectorial constant on the sampled rays.
        """
        G = self.eval(t)
        w = G.numerical_abscissa()
        A = G.dense()
        radii = np.logspace(-2, 5, 8) if radii is None else radii
        best = 0.0
        for ang in angles:
            for r in radii:
                mu = w + r * np.exp(1j * np.pi * ang)
                res = np.linalg.inv(mu * np.eye(A.shape[0]) - A)
                best = max(best, abs(mu - w) * np.linalg.norm(res, 2))
        return float(best)


def phi_functions(z: np.ndarray):
    """(exp(z), phi1(z), phi2(z)) elementwise with small-z series."""
    z = np.asarray(z, dtype=float)
    e = np.exp(z)
    em1 = np.expm1(z)
    small = np.abs(z) < 0.1
    zs = np.where(small, 1.0, z)
    p1 = np.where(z == 0.0, 1.0, em1 / np.where(z == 0.0, 1.0, z))
    p2 = (em1 - zs) / zs**2
    ser = 0.5 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720 + z**5 / 5040 + z**6 / 40320
    p2 = np.where(small, ser, p2)
    return e, p1, p2


def step_action(G: Generator, h: float, v: np.ndarray, w1=None, w2=None) -> np.ndarray:
    """exp(hA) v + h phi1(hA) w1 + h phi2(hA) w2 for one frozen generator."""
    if G.diag is not None:
        e, p1, p2 = phi_functions(h * G.diag)
        out = e * v
        if w1 is not None:
            out = out + h * p1 * w1
        if w2 is not None:
            out = out + h * p2 * w2
        return out
    n = G.dim
    if w1 is None and w2 is None:
        if n < DENSE_ACTION_MIN:
            return expm(h * G.matrix) @ v
        return expm_multiply(h * G.matrix, v)
    Z = np.zeros((n + 2, n + 2))
    Z[:n, :n] = h * G.matrix
    if w2 is not None:
        Z[:n, n] = h * w2
    if w1 is not None:
        Z[:n, n + 1] = h * w1
    Z[n, n + 1] = 1.0
    rhs = np.concatenate([v, [0.0, 1.0]])
    if n < DENSE_ACTION_MIN:
        return (expm(Z) @ rhs)[:n]
    return expm_multiply(Z, rhs)[:n]


class EvolutionFamily:
    """Cached composition of frozen-coefficient steps on a uniform grid."""

    def __init__(self, gen: GeneratorFamily, times, substeps: int = 1,
                 mode: str = "auto", check: bool = True):
        if substeps < 1:
            raise PropagatorError("substeps must be positive")
        self.gen = gen
        self.spec = gen.spec
        self.times = np.asarray(times, dtype=float)
        self.substeps = int(substeps)
        self.M = self.times.size - 1
        q = self.substeps
        self.mids: list[list[Generator]] = []
        for i in range(self.M):
            t0, t1 = self.times[i], self.times[i + 1]
            hs = (t1 - t0) / q
            self.mids.append([gen(t0 + (j + 0.5) * hs) for j in range(q)])
        self.h = np.diff(self.times)
        self.diagonal = all(g.diag is not None for cell in self.mids for g in cell)
        if mode == "auto":
            mode = "diag" if self.diagonal else (
                "action" if self.spec.dim >= DENSE_ACTION_MIN else "matrix")
        self.mode = mode
        self.M_const = 1.0
        self.lam = None
        if check:
            self.lam = max(g.numerical_abscissa() for cell in self.mids for g in cell)
            if gen.abscissa_bound is not None:
                worst = max(g.spectral_abscissa() for cell in self.mids for g in cell)
                if worst > gen.abscissa_bound:
                    raise PropagatorError(
                        f"spectral abscissa {worst:.6g} exceeds bound {gen.abscissa_bound}")
        self._steps: list = [None] * self.M

    # ----------------------------------------------------------- cells
    def step(self, i: int):
        """Cell operator on [t_i, t_{i+1}]: a diagonal array or a matrix."""
        if self._steps[i] is None:
            hs = self.h[i] / self.substeps
            if self.mode == "diag":
                self._steps[i] = np.exp(hs * sum(g.diag for g in self.mids[i]))
            elif self.mode == "matrix":
                E = np.eye(self.spec.dim)
                for g in self.mids[i]:
                    E = expm(hs * g.dense()) @ E
                self._steps[i] = E
            else:
                self._steps[i] = "action"
        return self._steps[i]

    def step_apply(self, i: int, v: np.ndarray) -> np.ndarray:
        st = self.step(i)
        if isinstance(st, str):
            hs = self.h[i] / self.substeps
            for g in self.mids[i]:
                v = expm_multiply(hs * g.dense(), v)
            return v
        if st.ndim == 1:
            return (st * v.T).T
        return st @ v

    # ---------------------------------------------------------- queries
    def apply(self, b: int, a: int, x: np.ndarray) -> np.ndarray:
        """S_{t_b, t_a} x for node indices a <= b."""
        if b < a:
            raise PropagatorError("apply needs t >= s")
        v = np.array(x, dtype=float)
        for i in range(a, b):
            v = self.step_apply(i, v)
        return v

    def operator(self, b: int, a: int) -> np.ndarray:
        """Explicit S_{t_b, t_a}: a vector for diagonal families, else a matrix."""
        if self.mode == "diag":
            out = np.ones(self.spec.dim)
            for i in range(a, b):
                out = out * self.step(i)
            return out
        return self.apply(b, a, np.eye(self.spec.dim))

    def bound_check(self, b: int, a: int, x: np.ndarray) -> bool:
        """|S x|_0 <= M exp(lam (t - s)) |x|_0 with the stored constants."""
        lam = self.lam if self.lam is not None else 0.0
        y = self.apply(b, a, x)
        dt = self.times[b] - self.times[a]
        return bool(np.linalg.norm(y) <= (1 + 1e-12) * self.M_const
                    * np.exp(lam * dt) * np.linalg.norm(x))


def make_family(gen: GeneratorFamily, times, substeps: int = 1, **kw) -> EvolutionFamily:
    return EvolutionFamily(gen, times, substeps, **kw)


# ------------------------------------------------------------- norms
def operator_norm(S, spec: ScaleSpec, beta: float, betap: float) -> float:
    """Exact |S|_{beta -> beta'} for a diagonal (vector) or dense operator."""
    wb, wp = spec.packed_weights(beta), spec.packed_weights(betap)
    S = np.asarray(S)
    if S.ndim == 1:
        return float(np.abs(wp * S / wb).max())
    return float(np.linalg.norm(wp[:, None] * S / wb[None, :], 2))


def probe_pairs(M: int, max_anchors: int = 64, all_below: int = 32):
    """Node pairs (a, b): all pairs for small grids, else dyadic lags from anchors."""
    if M <= all_below:
        return [(a, b) for a in range(M) for b in range(a + 1, M + 1)]
    step = max(1, M // max_anchors)
    lags = dyadic_lags(M)
    return [(a, a + L) for a in range(0, M, step) for L in lags if a + L <= M]


def _sup_over_pairs(S: EvolutionFamily, fn, pairs=None):
    """sup of fn(op, dt) over pairs, sharing cumulative products per anchor."""
    pairs = probe_pairs(S.M) if pairs is None else pairs
    by_anchor: dict[int, set] = {}
    for a, b in pairs:
        by_anchor.setdefault(a, set()).add(b)
    best, worst = 0.0, None
    for a, ends in sorted(by_anchor.items()):
        if S.mode == "diag":
            P = np.ones(S.spec.dim)
        else:
            P = np.eye(S.spec.dim)
        for b in range(a + 1, max(ends) + 1):
            P = S.step_apply(b - 1, P)
            if b in ends:
                val = fn(P, S.times[b] - S.times[a])
                if val > best:
                    best, worst = val, (a, b)
    return best, worst


def measure_smoothing(S: EvolutionFamily, beta: float, betap: float, pairs=None):
    """(K, worst pair): sup (t-s)^(beta'-beta)_+ |S_{t,s}|_{beta -> beta'}."""
    ex = max(betap - beta, 0.0)
    return _sup_over_pairs(
        S, lambda P, dt: dt**ex * operator_norm(P, S.spec, beta, betap), pairs)


def measure_anti_smoothing(S: EvolutionFamily, beta: float, betap: float, pairs=None):
    """(K~, worst pair): sup (t-s)^-(beta-beta') |S_{t,s} - I|_{beta -> beta'}."""
    if beta < betap:
        raise PropagatorError("anti-smoothing needs beta >= beta'")
    ex = beta - betap

    def fn(P, dt):
        D = P - (1.0 if P.ndim == 1 else np.eye(P.shape[0]))
        return operator_norm(D, S.spec, beta, betap) / dt**ex

    return _sup_over_pairs(S, fn, pairs)


def family_difference_norm(S1: EvolutionFamily, S2: EvolutionFamily, beta: float,
                           betap: float, pairs=None) -> float:
    """sup (t-s)^(beta'-beta) |S1_{t,s} - S2_{t,s}|_{beta -> beta'}."""
    if abs(beta - betap) >= 1:
        raise PropagatorError("need |beta - beta'| < 1")
    if S1.M != S2.M or not np.allclose(S1.times, S2.times):
        raise PropagatorError("families live on different grids")
    pairs = probe_pairs(S1.M) if pairs is None else pairs
    best = 0.0
    by_anchor: dict[int, set] = {}
    for a, b in pairs:
        by_anchor.setdefault(a, set()).add(b)
    ex = betap - beta
    for a, ends in sorted(by_anchor.items()):
        P1 = np.ones(S1.spec.dim) if S1.mode == "diag" else np.eye(S1.spec.dim)
        P2 = np.ones(S2.spec.dim) if S2.mode == "diag" else np.eye(S2.spec.dim)
        for b in range(a + 1, max(ends) + 1):
            P1, P2 = S1.step_apply(b - 1, P1), S2.step_apply(b - 1, P2)
            if b in ends:
                D = (P1 - P2) if P1.ndim == P2.ndim else _dense(P1) - _dense(P2)
                dt = S1.times[b] - S1.times[a]
                best = max(best, dt**ex * operator_norm(D, S1.spec, beta, betap))
    return best


def _dense(P):
    return np.diag(P) if P.ndim == 1 else P


def _gen_norm_10(G: Generator, spec: ScaleSpec) -> float:
    w1 = spec.packed_weights(1.0)
    if G.diag is not None:
        return float(np.abs(G.diag / w1).max())
    return float(np.linalg.norm(G.matrix / w1[None, :], 2))


def gamma_perturbation(L1: GeneratorFamily, L2: GeneratorFamily, alpha: float,
                       times) -> float:
    """Generator distance: sup |L1 - L2|_{1 -> 0}, plus T^rho [L1 - L2]_rho when alpha = 1."""
    times = np.asarray(times, dtype=float)
    spec = L1.spec
    diffs = [L1(t) - L2(t) for t in times]
    val = max(_gen_norm_10(D, spec) for D in diffs)
    if alpha >= 1.0:
        r = min(L1.hoelder, L2.hoelder)
        T = times[-1] - times[0]
        hol = 0.0
        for i in range(len(times)):
            for j in range(i + 1, len(times)):
                hol = max(hol, _gen_norm_10(diffs[j] - diffs[i], spec)
                          / (times[j] - times[i]) ** r)
        val += T**r * hol
    return float(val)


def lemma_bound(S1: EvolutionFamily, S2: EvolutionFamily, L1: GeneratorFamily,
                L2: GeneratorFamily, beta: float, betap: float, pairs=None) -> dict:
    """Measured difference and its Beta-function bound for 0 < beta <= beta' < 1."""
    if not (0 < beta and betap < 1):
        raise PropagatorError("the Beta bound needs beta > 0 and beta' < 1")
    measured = family_difference_norm(S1, S2, beta, betap, pairs)
    K1, _ = measure_smoothing(S1, 0.0, betap, pairs)
    K2, _ = measure_smoothing(S2, beta, 1.0, pairs)
    gap = gamma_perturbation(L1, L2, 0.0, S1.times)
    B = float(euler_beta(1 - betap, beta))
    return {"measured": measured, "bound": B * K1 * K2 * gap, "beta_constant": B,
            "K1": K1, "K2": K2, "generator_gap": gap}


# ------------------------------------------------- reduced increments
def reduced_increment_equivalence_check(cp: ControlledPath, S: EvolutionFamily,
                                        lags=None) -> dict:
    """Both sides of the reduced-increment norm equivalences.

    Uses eps = gamma - sigma as weight and dyadic lags with all anchors.
    ``flagged`` is set when the B_{alpha+eps} bound is not finite.
    """
    p, spec, t = cp.params, cp.spec, cp.times
    eps = p.gamma - p.sigma
    a, s, g, gp = p.alpha, p.sigma, p.gamma, p.gammap
    M = cp.M
    lags = dyadic_lags(M) if lags is None else lags
    extra = weighted_sup(spec.packed_norm(cp.y, a + eps), t, eps)
    sup_prime = weighted_sup(
        np.sqrt((spec.packed_norm(cp.yprime, a - s) ** 2).sum(-1)), t, eps)
    flagged = not np.isfinite(extra)

    # S_{t,s} y_s and S_{t,s} y'_t . dX for all pairs at each lag
    def reduced(lag):
        out = np.empty((M + 1 - lag, spec.dim))
        for i in range(M + 1 - lag):
            out[i] = cp.y[i + lag] - S.apply(i + lag, i, cp.y[i])
        return out

    def reduced_rem(lag):
        dX = cp.driver.X[lag:] - cp.driver.X[:-lag]
        out = reduced(lag)
        for i in range(M + 1 - lag):
            out[i] -= S.apply(i + lag, i, dX[i] @ cp.yprime[i + lag])
        return out

    def cached(fn):
        store = {}
        return lambda lag: store.setdefault(lag, fn(lag))

    red, redr = cached(reduced), cached(reduced_rem)

    def semi(fn, gexp, beta, weight):
        vals = lag_sups(lambda L: spec.packed_norm(fn(L), beta), t, lags, weight)
        return float(max(v / (t[L] - t[0]) ** gexp for v, L in zip(vals, lags)))

    lhs1 = extra + semi(red, g, a - s, eps)
    rhs1 = extra + semi(cp.delta, g, a - s, eps)
    lhs2 = extra + sup_prime + semi(redr, g + gp, a - s - gp, 2 * eps)
    rhs2 = extra + sup_prime + semi(cp.remainder, g + gp, a - s - gp, 2 * eps)
    return {"delta": (lhs1, rhs1, lhs1 / rhs1 if rhs1 else 1.0),
            "remainder": (lhs2, rhs2, lhs2 / rhs2 if rhs2 else 1.0),
            "flagged": flagged}


# ------------------------------------------------------- reference
def reference_solution(gen: GeneratorFamily, t: float, s: float, x: np.ndarray,
                       rtol: float = 1e-11, atol: float = 1e-13) -> np.ndarray:
    """Slow reference for S_{t,s} x: implicit Runge-Kutta on v' = L_r v."""
    if t == s:
        return np.array(x, dtype=float)
    sol = solve_ivp(lambda r, v: gen(r).apply(v), (s, t), np.asarray(x, dtype=float),
                    method="Radau", rtol=rtol, atol=atol,
                    jac=lambda r, v: gen(r).dense())
    return sol.y[:, -1]
