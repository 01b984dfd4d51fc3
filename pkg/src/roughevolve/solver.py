"""Mild solutions of rough quasilinear evolution problems.

    du = L_t(u) u dt + N_t(u) dt + F(u) . dX,   u_0 = x.

Discretisation on the driver grid.  On each cell [t_i, t_{i+1}] the
generator is frozen at the midpoint state (u_i + u_{i+1}) / 2, the drift
is integrated exactly against the piecewise-linear interpolant of N, and
the rough term uses the compensated right-endpoint germ.  The fixed-point
map reads

    psi_{i+1} = exp(h A_i) (psi_i + xi_i) + h phi1(h A_i) N_i + h phi2(h A_i)(N_{i+1} - N_i)

with A_i, xi_i and N evaluated on the previous iterate.  Picard iteration
runs on windows of the grid; each window restarts from the converged
value at its left end.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .controlled import CRPParams, ControlledPath, ParameterError
from .propagator import EvolutionFamily, Generator, GeneratorFamily, step_action
from .roughpath import RoughPath, rough_metric
from .scale import ScaleSpec
from .sewing import cell_germs, compensated_germ, grid_convolution

__all__ = [
    "SolverError",
    "QuasilinearModel",
    "SolverConfig",
    "SolveResult",
    "smooth_cutoff",
    "compose_nonlinearity",
    "psi_map",
    "solve",
    "mild_residual",
    "solution_family",
    "continuity_study",
    "save_trajectory",
    "load_trajectory",
    "trajectory_csv",
]

_MAGIC = b"TRAJ"
_STATUS = ("completed", "blowup", "boundary_exit", "picard_failure")


class SolverError(RuntimeError):
    """Raised for unusable solver input (not for blow-up, which is a result)."""


def smooth_cutoff(r: float) -> tuple[float, float]:
    """(chi(r), chi'(r)) for a smooth profile: 1 on [0, 1], 0 beyond 2."""
    if r <= 1.0:
        return 1.0, 0.0
    if r >= 2.0:
        return 0.0, 0.0
    a, b = r - 1.0, 2.0 - r
    fa, fb = np.exp(-1.0 / a), np.exp(-1.0 / b)
    chi = fb / (fa + fb)
    dfa, dfb = fa / a**2, -fb / b**2  # derivatives in r
    dchi = (dfb * (fa + fb) - fb * (dfa + dfb)) / (fa + fb) ** 2
    return float(chi), float(dchi)


@dataclass
class QuasilinearModel:
    """Bundle of callbacks acting on packed vectors of ``spec``.

    generator(t, y) -> Generator          frozen L_t(y)
    drift(t, y) -> (dim,)                 N_t(y)
    noise(y) -> (d, dim)                  F^i(y)
    noise_derivative(y, h) -> (d, dim)    DF^i(y)[h]
    guard(y) -> bool                      membership of the admissible set
    """

    spec: ScaleSpec
    d: int
    params: CRPParams
    generator: Callable[[float, np.ndarray], Generator]
    drift: Callable[[float, np.ndarray], np.ndarray] | None = None
    noise: Callable[[np.ndarray], np.ndarray] | None = None
    noise_derivative: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    guard: Callable[[np.ndarray], bool] | None = None
    eta: float = 0.0
    delta_drift: float = 0.0
    cutoff: float | None = None
    hoelder: float = 1.0
    name: str = "model"
    meta: dict = field(default_factory=dict)

    # -------------------------------------------------- cut-off wrappers
    def _chi(self, y):
        if self.cutoff is None:
            return 1.0, 0.0, 0.0
        r = float(self.spec.packed_norm(y, self.params.alpha))
        chi, dchi = smooth_cutoff(r / self.cutoff)
        return chi, dchi / self.cutoff, r

    def N(self, t: float, y: np.ndarray) -> np.ndarray:
        if self.drift is None:
            return np.zeros(self.spec.dim)
        chi = self._chi(y)[0]
        return chi * self.drift(t, y) if chi != 1.0 else self.drift(t, y)

    def F(self, y: np.ndarray) -> np.ndarray:
        if self.noise is None:
            return np.zeros((self.d, self.spec.dim))
        chi = self._chi(y)[0]
        return chi * self.noise(y) if chi != 1.0 else self.noise(y)

    def DF(self, y: np.ndarray, h: np.ndarray) -> np.ndarray:
        if self.noise is None:
            return np.zeros((self.d, self.spec.dim))
        chi, dchi, r = self._chi(y)
        out = self.noise_derivative(y, h)
        if chi == 1.0 and dchi == 0.0:
            return out
        w2 = self.spec.packed_weights(self.params.alpha) ** 2
        dr = float(np.dot(w2 * y, h)) / r if r > 0 else 0.0
        return chi * out + dchi * dr * self.noise(y)

    def L(self, t: float, y: np.ndarray) -> Generator:
        return self.generator(t, y)

    @property
    def has_noise(self) -> bool:
        return self.noise is not None


@dataclass
class SolverConfig:
    picard_tol: float = 1e-9
    max_iters: int = 50
    R_max: float = 1e6
    initial_fraction: float = 1 / 8
    max_fraction: float = 1 / 4
    easy_iters: int = 12
    easy_streak: int = 3
    contraction_limit: float = 0.9
    h_min_fraction: float = 1e-6


@dataclass
class SolveResult:
    u: np.ndarray
    uprime: np.ndarray
    driver: RoughPath
    tau: float
    status: str
    model: QuasilinearModel
    diagnostics: list = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return self.driver.times

    @property
    def trajectory(self) -> ControlledPath:
        return ControlledPath(self.model.params, self.model.spec, self.driver,
                              self.u, self.uprime)

    @property
    def final(self) -> np.ndarray:
        return self.u[-1]


# ------------------------------------------------------------ pieces
def compose_nonlinearity(model: QuasilinearModel, cp: ControlledPath,
                         theta: float | None = None):
    """(zeta, zeta') = (F(y), DF(y) y') on every node.

    Returns arrays of shapes (M+1, d, dim) and (M+1, d, d, dim) with
    zeta'[t, i, j] = DF^i(y_t)[y'^j_t].  When ``theta`` is given it must lie
    in ((1 - gamma0 - gamma)/gamma', (alpha - 2 sigma)/gamma').
    """
    p = model.params
    lo = (1 - p.gamma0 - p.gamma) / p.gammap
    hi = (p.alpha - 2 * p.sigma) / p.gammap
    if not lo < hi:
        raise ParameterError(
            f"(1 - gamma0 - gamma)/gamma' < (alpha - 2 sigma)/gamma' violated "
            f"({lo:.6g} >= {hi:.6g})")
    if theta is not None and not lo < theta < hi:
        raise ParameterError(
            f"theta in ((1 - gamma0 - gamma)/gamma', (alpha - 2 sigma)/gamma') violated "
            f"(theta={theta}, window ({lo:.6g}, {hi:.6g}))")
    return _compose(model, cp.y, cp.yprime)


def _compose(model, y, yp):
    n, d, dim = y.shape[0], model.d, model.spec.dim
    zeta = np.empty((n, d, dim))
    zetap = np.empty((n, d, d, dim))
    for t in range(n):
        zeta[t] = model.F(y[t])
        for j in range(d):
            zetap[t, :, j] = model.DF(y[t], yp[t, j])
    return zeta, zetap


def _window_psi(model, rp, y, yp, a, b, S: EvolutionFamily | None = None):
    """psi on nodes a..b from the iterate (y, yp); psi_a = y_a."""
    times = rp.times
    dX = np.diff(rp.X[a:b + 1], axis=0)
    XX = rp.XX[a:b]
    new = np.empty((b - a + 1, model.spec.dim))
    new[0] = y[a]
    newp = np.empty((b - a + 1, model.d, model.spec.dim))
    Nv = [model.N(times[j], y[j]) for j in range(a, b + 1)]
    for j in range(a, b + 1):
        newp[j - a] = model.F(y[j]) if model.has_noise else 0.0
    for i in range(a, b):
        h = times[i + 1] - times[i]
        if model.has_noise:
            zeta = newp[i + 1 - a]
            zetap = np.empty((model.d, model.d, model.spec.dim))
            for j in range(model.d):
                zetap[:, j] = model.DF(y[i + 1], yp[i + 1, j])
            xi = compensated_germ(zeta, zetap, dX[i - a], XX[i - a])
        else:
            xi = 0.0
        N0, N1 = Nv[i - a], Nv[i + 1 - a]
        if S is None:
            G = model.L(0.5 * (times[i] + times[i + 1]), 0.5 * (y[i] + y[i + 1]))
            new[i + 1 - a] = step_action(G, h, new[i - a] + xi, N0, N1 - N0)
        else:
            new[i + 1 - a] = (S.step_apply(i, new[i - a] + xi)
                              + step_action(S.mids[i][0], h, np.zeros_like(N0), N0, N1 - N0))
    return new, newp


def psi_map(model: QuasilinearModel, x0: np.ndarray, rp: RoughPath, y: np.ndarray,
            yp: np.ndarray, S: EvolutionFamily | None = None):
    """The fixed-point map on the whole grid.

    ``S`` defaults to the frozen family S^y built from ``y`` itself; a
    supplied family must use one substep per cell.
    """
    y = np.array(y, dtype=float)
    y[0] = x0
    return _window_psi(model, rp, y, yp, 0, rp.M, S)


def solution_family(model: QuasilinearModel, u: np.ndarray, rp: RoughPath,
                    check: bool = False) -> EvolutionFamily:
    """S^u with L frozen at cell midpoints of the piecewise-linear path u."""
    times = rp.times

    def L(t):
        i = min(int(np.floor((t - times[0]) / rp.h)), rp.M - 1)
        lam = (t - times[i]) / rp.h
        return model.L(t, (1 - lam) * u[i] + lam * u[i + 1])

    gen = GeneratorFamily(model.spec, L, hoelder=model.hoelder)
    return EvolutionFamily(gen, times, 1, check=check)


# ------------------------------------------------------------ solve
def _seed(model, rp, x, a, b):
    times = rp.times
    y = np.empty((b - a + 1, model.spec.dim))
    y[0] = x
    for i in range(a, b):
        G = model.L(0.5 * (times[i] + times[i + 1]), x)
        y[i + 1 - a] = step_action(G, times[i + 1] - times[i], y[i - a])
    return y


def solve(model: QuasilinearModel, x0, rp: RoughPath,
          config: SolverConfig | None = None) -> SolveResult:
    """Windowed Picard iteration of the fixed-point map with continuation."""
    cfg = SolverConfig() if config is None else config
    spec, p = model.spec, model.params
    x0 = np.asarray(x0.packed() if hasattr(x0, "packed") else x0, dtype=float)
    if x0.shape != (spec.dim,):
        raise SolverError(f"initial datum must have {spec.dim} packed entries")
    if rp.d != model.d:
        raise SolverError(f"driver dimension {rp.d} != model dimension {model.d}")
    if model.guard is not None and not model.guard(x0):
        raise SolverError("initial datum is outside the admissible set")
    if spec.packed_norm(x0, p.alpha) >= cfg.R_max:
        raise SolverError("initial datum norm exceeds R_max")
    M = rp.M
    y = np.zeros((M + 1, spec.dim))
    yp = np.zeros((M + 1, model.d, spec.dim))
    y[0] = x0
    yp[0] = model.F(x0)
    k = 0
    width = max(1, int(round(M * cfg.initial_fraction)))
    cap = max(1, int(round(M * cfg.max_fraction)))
    min_width = max(1, int(np.ceil(cfg.h_min_fraction * M)))
    streak = 0
    diags = []
    status, last = "completed", M
    scale = max(1.0, float(spec.packed_norm(x0, p.alpha)))
    while k < M:
        w = min(width, M - k)
        b = k + w
        wy = y.copy()
        wy[k:b + 1] = _seed(model, rp, y[k], k, b)
        wyp = yp.copy()
        wyp[k + 1:b + 1] = 0.0
        dists, ok, blew = [], False, False
        for it in range(cfg.max_iters):
            new, newp = _window_psi(model, rp, wy, wyp, k, b)
            if not np.all(np.isfinite(new)):
                blew = True
                break
            dist = float(spec.packed_norm(new - wy[k:b + 1], p.alpha).max())
            if model.has_noise:
                dist += float(np.sqrt((spec.packed_norm(
                    newp - wyp[k:b + 1], p.alpha - p.sigma) ** 2).sum(-1)).max())
            wy[k:b + 1], wyp[k:b + 1] = new, newp
            dists.append(dist)
            sc = max(scale, float(spec.packed_norm(new, p.alpha).max()))
            if sc >= 1e3 * cfg.R_max:
                blew = True
                break
            if dist <= cfg.picard_tol * sc:
                ok = True
                break
            if it >= 3 and dists[-1] > cfg.contraction_limit * dists[-2]:
                break
        diags.append({"start": k, "width": w, "iterations": len(dists),
                      "distances": dists, "converged": ok})
        if not ok:
            if blew and w <= min_width:
                status, last = "blowup", k
                break
            if w <= min_width:
                status, last = "picard_failure", k
                break
            width = max(min_width, w // 2)
            streak = 0
            continue
        # accept the window, then scan for the two exit alternatives
        norms = spec.packed_norm(wy[k + 1:b + 1], p.alpha)
        y[k + 1:b + 1], yp[k + 1:b + 1] = wy[k + 1:b + 1], wyp[k + 1:b + 1]
        # make y' consistent with the accepted path
        for j in range(k + 1, b + 1):
            yp[j] = model.F(y[j])
        hit = np.nonzero(norms >= cfg.R_max)[0]
        if hit.size:
            status, last = "blowup", k + 1 + int(hit[0])
            break
        if model.guard is not None:
            bad = [j for j in range(k + 1, b + 1) if not model.guard(y[j])]
            if bad:
                status, last = "boundary_exit", bad[0]
                break
        scale = max(scale, float(norms.max()))
        k = b
        streak = streak + 1 if len(dists) <= cfg.easy_iters else 0
        if streak >= cfg.easy_streak:
            width = min(cap, 2 * width)
            streak = 0
    if status == "completed":
        last = M
    keep = last if status != "boundary_exit" else last
    drv = rp if keep == M else rp.restrict(0, max(keep, 1))
    n = drv.M + 1
    return SolveResult(y[:n].copy(), yp[:n].copy(), drv, float(rp.times[keep]),
                       status, model, diags)


# ------------------------------------------------------ diagnostics
def mild_residual(result: SolveResult, model: QuasilinearModel | None = None,
                  rp: RoughPath | None = None, u: np.ndarray | None = None) -> dict:
    """sup_t |u_t - S_{t,0}x - int S N - int S F(u) dX|_{alpha - sigma}.

    Every term is rebuilt from ``u`` (default: the result's trajectory) with
    a fresh frozen family, a separate drift recursion and a fresh grid
    convolution.
    """
    model = result.model if model is None else model
    rp = result.driver if rp is None else rp
    u = result.u if u is None else np.asarray(u, dtype=float)
    p, spec = model.params, model.spec
    S = solution_family(model, u, rp)
    M, times = rp.M, rp.times
    free = np.zeros_like(u)
    free[0] = u[0]
    for i in range(M):
        free[i + 1] = S.step_apply(i, free[i])
    drift = np.zeros_like(u)
    if model.drift is not None:
        Nv = np.array([model.N(times[j], u[j]) for j in range(M + 1)])
        for i in range(M):
            h = times[i + 1] - times[i]
            drift[i + 1] = S.step_apply(i, drift[i]) + step_action(
                S.mids[i][0], h, np.zeros(spec.dim), Nv[i], Nv[i + 1] - Nv[i])
    conv = np.zeros_like(u)
    if model.has_noise:
        up = np.array([model.F(v) for v in u])
        zeta, zetap = _compose(model, u, up)
        conv = grid_convolution(S, zeta, zetap, rp)
    res = spec.packed_norm(u - free - drift - conv, p.alpha - p.sigma)
    scale = float(spec.packed_norm(u, p.alpha - p.sigma).max())
    return {"residual": float(res.max()), "per_node": res, "scale": scale,
            "worst_node": int(res.argmax())}


def continuity_study(model: QuasilinearModel, base: tuple, pairs: list,
                     config: SolverConfig | None = None) -> list[dict]:
    """Solution distance against input distance for perturbed inputs.

    ``base`` and each entry of ``pairs`` are (x, rp) on a common grid.
    Input distance is |x - x_bar|_alpha + rho(rp, rp_bar); solution
    distance is the sup over nodes of |u - u_bar|_alpha.
    """
    p, spec = model.params, model.spec
    x0, rp0 = base
    ref = solve(model, x0, rp0, config)
    rows = []
    for x, rp in pairs:
        res = solve(model, x, rp, config)
        n = min(res.u.shape[0], ref.u.shape[0])
        din = float(spec.packed_norm(np.asarray(x) - np.asarray(x0), p.alpha))
        din += rough_metric(rp, rp0) if rp is not rp0 else 0.0
        dout = float(spec.packed_norm(res.u[:n] - ref.u[:n], p.alpha).max())
        rows.append({"input_distance": din, "solution_distance": dout,
                     "status": res.status, "ratio": dout / din if din > 0 else 0.0})
    return rows


# ------------------------------------------------------------- I/O
def save_trajectory(result: SolveResult, path) -> None:
    """Binary: magic, version, shape block, parameter block, u then u'."""
    spec, p = result.model.spec, result.model.params
    n = result.u.shape[0]
    header = _MAGIC + struct.pack(
        "<IIIIIId8d", 1, spec.n1, spec.N, result.model.d, n,
        _STATUS.index(result.status), spec.period, result.driver.T, result.tau,
        p.gamma0, p.gamma, p.gammap, p.sigma, p.alpha, p.eps)
    body = (np.ascontiguousarray(result.u, dtype="<f8").tobytes()
            + np.ascontiguousarray(result.uprime, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(header + body)


def load_trajectory(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise SolverError("not a trajectory file")
    fmt = "<IIIIIId8d"
    size = struct.calcsize(fmt)
    (version, n1, N, d, n, st, period, T, tau, g0, g, gp, s, a, eps) = struct.unpack(
        fmt, raw[4:4 + size])
    spec = ScaleSpec(N, n1, period)
    vals = np.frombuffer(raw[4 + size:], dtype="<f8")
    if vals.size != n * spec.dim * (1 + d):
        raise SolverError("truncated trajectory file")
    u = vals[: n * spec.dim].reshape(n, spec.dim).copy()
    up = vals[n * spec.dim:].reshape(n, d, spec.dim).copy()
    M = n - 1
    times = T * np.arange(n) / max(M, 1) if n > 1 else np.zeros(1)
    params = CRPParams(g0, g, gp, s, a, eps)
    return {"spec": spec, "params": params, "u": u, "uprime": up, "times": times,
            "status": _STATUS[st], "tau": tau, "d": d}


def trajectory_csv(result: SolveResult, path, header_comment: str = "") -> None:
    spec, p = result.model.spec, result.model.params
    na = spec.packed_norm(result.u, p.alpha)
    ne = spec.packed_norm(result.u, result.model.eta)
    with open(path, "w", newline="") as fh:
        for line in header_comment.splitlines():
            fh.write(f"# {line}\r\n")
        fh.write("t,norm_alpha,norm_eta,status\r\n")
        for j, (t, a, e) in enumerate(zip(result.times, na, ne)):
            flag = result.status if j == len(na) - 1 else "ok"
            fh.write(f"{t:.17g},{a:.17g},{e:.17g},{flag}\r\n")
