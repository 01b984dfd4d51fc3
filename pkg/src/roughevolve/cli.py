"""Command line entry point: ``roughevolve <command> --config file``.

Configs are INI files (configparser).  Every CSV carries the resolved
configuration as ``#`` comment lines, so outputs are self-describing and
byte-identical for identical (config, seed).
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .controlled import CRPParams, ControlledPath, ParameterError, crp_norm
from .dynamics import CocycleProbe, cocycle_residual, table_to_csv, wong_zakai
from .propagator import EvolutionFamily, GeneratorFamily, PropagatorError
from .roughpath import (RoughPathError, brownian_lift, chen_defect, dyadic_grid,
                        hoelder_seminorms, lift_smooth, rho, roughpath_to_csv,
                        save_roughpath)
from .scale import ScaleError, ScaleSpec
from .sewing import SewingError, remainder_rate_check
from .solver import (SolverConfig, SolverError, load_trajectory, mild_residual,
                     save_trajectory, solve, trajectory_csv)
from . import models

COMMANDS = ("lift", "solve", "rates", "cocycle", "wongzakai", "norms")

DEFAULTS = {
    "model": {"name": "heat", "phi": "1.0", "damping": "0", "shift": "false",
              "noise": "0.0"},
    "discretization": {"N": "8", "M": "256", "T": "0.5", "substeps": "1"},
    "roughpath": {"kind": "stratonovich", "gamma0": "0.45", "seed": "0", "d": "1",
                  "refine": "16"},
    "solver": {"gamma": "0.4", "gammap": "0.3", "sigma": "0.0", "alpha": "0.5",
               "tol": "1e-9", "max_iters": "50", "R_max": "1e6"},
    "initial": {"kind": "default", "amplitude": "0.3", "values": "", "file": ""},
    "rates": {"settings": "0,0;0.1,0;0,0.1;0.1,0.1", "beta": "0.0"},
    "cocycle": {"splits": "0.5"},
    "wongzakai": {"j_min": "4", "j_max": "8"},
    "norms": {"trajectory": ""},
}


class ConfigError(ValueError):
    """Invalid configuration value; reported with exit code 1."""


@dataclass
class Experiment:
    cfg: configparser.ConfigParser
    command: str
    out: Path
    spec: ScaleSpec | None
    params: CRPParams
    model: object | None
    times: np.ndarray
    seed: int
    x0: np.ndarray | None = None

    def header(self) -> str:
        lines = [f"command = {self.command}"]
        for sec in self.cfg.sections():
            for k, v in self.cfg.items(sec):
                lines.append(f"{sec}.{k} = {v}")
        return "\n".join(lines)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def load_config(path: str | None, seed: int | None, profile: str) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(inline_comment_prefixes=(";",))
    cfg.optionxform = str
    cfg.read_dict(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file {path} not found")
        cfg.read(p)
    if seed is not None:
        cfg["roughpath"]["seed"] = str(seed)
    disc = cfg["discretization"]
    if profile == "fast":
        disc["M"] = str(min(int(disc["M"]), 256))
        disc["N"] = str(min(int(disc["N"]), 8))
    return cfg


def _initial(cfg, spec: ScaleSpec, name: str) -> np.ndarray:
    ini = cfg["initial"]
    kind = ini["kind"]
    amp = float(ini["amplitude"])
    n = spec.n_modes
    if kind == "file":
        path = Path(ini["file"])
        if not path.is_file():
            raise FileNotFoundError(f"initial data file {path} not found")
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        return spec.from_samples(data.T.reshape(spec.n1, -1)).reshape(-1)
    if kind == "constant":
        vals = _floats(ini["values"]) or [1.0] * spec.n1
        if len(vals) != spec.n1:
            raise ConfigError(f"initial.values needs {spec.n1} entries")
        x = np.zeros((spec.n1, n))
        x[:, 0] = vals
        return x.reshape(-1)
    if kind != "default":
        raise ConfigError(f"unknown initial.kind {kind!r}")
    xs = spec.sample_points()
    if name == "llg":
        th = amp * np.cos(np.pi * xs)
        u = np.stack([np.sin(th), 0 * th, np.cos(th)])
    elif name == "skt":
        u = np.stack([0.6 + amp * np.cos(np.pi * xs), 0.4 + amp * np.sin(np.pi * xs)])
    else:
        u = np.stack([amp * np.cos(np.pi * xs) + 0.5 * amp * np.sin(2 * np.pi * xs)] * spec.n1)
    return spec.from_samples(u).reshape(-1)


def _model(cfg, spec_N: int, params: CRPParams):
    m = cfg["model"]
    name = m["name"]
    if name in ("heat", "linear"):
        spec = ScaleSpec(spec_N, 1)
        noise = float(m["noise"])
        d = int(cfg["roughpath"]["d"])
        return spec, models.linear_model(spec, params, noise=[noise] * d if noise else (),
                                         name=name)
    if name == "llg":
        spec = ScaleSpec(spec_N, 3)
        return spec, models.llg_make(spec, float(m["phi"]), int(m["damping"]), params,
                                     m.getboolean("shift"))
    if name == "skt":
        spec = ScaleSpec(spec_N, 2)
        kw = {}
        for key in ("alpha", "beta", "gamma", "delta", "noise"):
            if f"skt_{key}" in m:
                kw[key] = tuple(_floats(m[f"skt_{key}"]))
        if "skt_theta" in m:
            th = _floats(m["skt_theta"])
            kw["theta"] = ((th[0], th[1]), (th[2], th[3]))
        return spec, models.skt_make(spec, models.SKTParameters(**kw), params)
    raise ConfigError(f"unknown model.name {name!r}")


def build(cfg, command: str, out: Path) -> Experiment:
    """Validate everything and build the experiment; performs no writes."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    d, r, s = cfg["discretization"], cfg["roughpath"], cfg["solver"]
    try:
        N, M, T = int(d["N"]), int(d["M"]), float(d["T"])
        seed = int(r["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if N < 1:
        raise ConfigError("discretization.N must be positive")
    if M < 2 or M & (M - 1):
        raise ConfigError("discretization.M must be a power of two")
    if T <= 0:
        raise ConfigError("discretization.T must be positive")
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if r["kind"] not in ("stratonovich", "ito", "smooth", "zero"):
        raise ConfigError(f"unknown roughpath.kind {r['kind']!r}")
    params = CRPParams(float(r["gamma0"]), float(s["gamma"]), float(s["gammap"]),
                       float(s["sigma"]), float(s["alpha"]))
    spec = model = x0 = None
    if command != "lift":
        spec, model = _model(cfg, N, params)
        x0 = _initial(cfg, spec, model.name)
    if command == "rates" and model.name not in ("heat", "linear"):
        raise ConfigError("rates runs on the heat/linear model")
    if command == "wongzakai":
        w = cfg["wongzakai"]
        if not 1 <= int(w["j_min"]) <= int(w["j_max"]) <= int(np.log2(M)):
            raise ConfigError("1 <= wongzakai.j_min <= j_max <= log2(M) violated")
    if command == "cocycle":
        for f in _floats(cfg["cocycle"]["splits"]):
            if not 0 < round(f * M) < M:
                raise ConfigError(f"cocycle split {f} is not an interior node")
    return Experiment(cfg, command, out, spec, params, model,
                      dyadic_grid(T, int(np.log2(M))), seed, x0)


def make_driver(exp: Experiment, d: int | None = None):
    r = exp.cfg["roughpath"]
    d = exp.model.d if d is None else d
    g0 = float(r["gamma0"])
    kind = r["kind"]
    if kind in ("stratonovich", "ito"):
        return brownian_lift(exp.seed, d, exp.times, kind, g0, int(r["refine"]))
    # deterministic smooth driver sampled 16 times finer than the grid
    fine = np.linspace(exp.times[0], exp.times[-1], 16 * (exp.times.size - 1) + 1)
    freq = 1.0 + np.arange(d)
    X = np.sin(np.outer(fine, freq)) if kind == "smooth" else np.zeros((fine.size, d))
    return lift_smooth(X, fine, exp.times, g0)


def _solver_config(exp: Experiment) -> SolverConfig:
    s = exp.cfg["solver"]
    return SolverConfig(picard_tol=float(s["tol"]), max_iters=int(s["max_iters"]),
                        R_max=float(s["R_max"]))


# ---------------------------------------------------------------- commands
def cmd_lift(exp: Experiment) -> int:
    rp = make_driver(exp, int(exp.cfg["roughpath"]["d"]))
    exp.out.mkdir(parents=True, exist_ok=True)
    save_roughpath(rp, exp.out / "driver.rghp")
    roughpath_to_csv(rp, exp.out / "driver.csv", exp.header())
    semi = hoelder_seminorms(rp)
    rows = [{"chen_defect": chen_defect(rp), "rho": rho(rp),
             "level1_seminorm": float(semi[0]), "level2_seminorm": float(semi[1])}]
    table_to_csv(rows, exp.out / "lift_report.csv", exp.header())
    return 0


def cmd_solve(exp: Experiment) -> int:
    rp = make_driver(exp)
    res = solve(exp.model, exp.x0, rp, _solver_config(exp))
    if res.status == "picard_failure":
        print(f"solve failed: Picard iteration did not converge at t={res.tau:.6g}",
              file=sys.stderr)
        return 2
    resid = mild_residual(res)
    exp.out.mkdir(parents=True, exist_ok=True)
    save_trajectory(res, exp.out / "trajectory.traj")
    trajectory_csv(res, exp.out / "trajectory.csv", exp.header())
    table_to_csv([{"status": res.status, "tau": res.tau, "mild_residual": resid["residual"],
                   "solution_scale": resid["scale"], "windows": len(res.diagnostics)}],
                 exp.out / "residual.csv", exp.header())
    print(f"status={res.status} tau={res.tau:.17g} mild_residual={resid['residual']:.3e}")
    return 0


def _rate_setup(exp: Experiment):
    spec = exp.spec
    rp = make_driver(exp, 1)
    gen = exp.model.generator(0.0, np.zeros(spec.dim))
    S = EvolutionFamily(GeneratorFamily.constant(spec, gen), exp.times)
    f = np.zeros(spec.dim)
    f[1] = 1.0  # first cosine mode of the first component
    zeta = rp.X[:, :, None] * f[None, None, :]
    zetap = np.broadcast_to(f, (rp.M + 1, 1, 1, spec.dim)).copy()
    return S, zeta, zetap, rp


def cmd_rates(exp: Experiment) -> int:
    S, zeta, zetap, rp = _rate_setup(exp)
    beta = float(exp.cfg["rates"]["beta"])
    settings = [tuple(_floats(s)) for s in exp.cfg["rates"]["settings"].split(";") if s.strip()]
    rows = []
    for kappa, iota in settings:
        rep = remainder_rate_check(S, zeta, zetap, rp, exp.params, beta, kappa, iota)
        fit = rep["fit"]
        rows.append({"kappa": kappa, "iota": iota, "slope": fit.slope,
                     "floor": rep["floor"], "fit_residual": fit.residual,
                     "pass": bool(fit.slope >= rep["floor"] - 0.1)})
    exp.out.mkdir(parents=True, exist_ok=True)
    table_to_csv(rows, exp.out / "rates.csv", exp.header())
    return 0


def cmd_cocycle(exp: Experiment) -> int:
    rp = make_driver(exp)
    splits = [int(round(f * rp.M)) for f in _floats(exp.cfg["cocycle"]["splits"])]
    rows = cocycle_residual(CocycleProbe(exp.model, exp.x0, rp, splits, _solver_config(exp)))
    exp.out.mkdir(parents=True, exist_ok=True)
    table_to_csv([dict(seed=exp.seed, **r) for r in rows], exp.out / "cocycle.csv",
                 exp.header())
    return 0


def cmd_wongzakai(exp: Experiment) -> int:
    w = exp.cfg["wongzakai"]
    js = range(int(w["j_min"]), int(w["j_max"]) + 1)
    m = int(np.log2(exp.times.size - 1))
    rows = wong_zakai(exp.model, exp.x0, exp.seed, js, float(exp.times[-1]), m,
                      _solver_config(exp), int(exp.cfg["roughpath"]["refine"]))
    exp.out.mkdir(parents=True, exist_ok=True)
    table_to_csv([dict(seed=exp.seed, **r) for r in rows], exp.out / "wongzakai.csv",
                 exp.header())
    return 0


def cmd_norms(exp: Experiment) -> int:
    path = exp.cfg["norms"]["trajectory"] or str(exp.out / "trajectory.traj")
    if not Path(path).is_file():
        raise FileNotFoundError(f"trajectory file {path} not found")
    data = load_trajectory(path)
    rp = make_driver(exp)
    n = data["u"].shape[0]
    if data["spec"] != exp.spec or n > rp.M + 1:
        raise ConfigError("trajectory does not match the configured model/grid")
    drv = rp if n == rp.M + 1 else rp.restrict(0, n - 1)
    cp = ControlledPath(data["params"], data["spec"], drv, data["u"], data["uprime"])
    br = crp_norm(cp)
    exp.out.mkdir(parents=True, exist_ok=True)
    table_to_csv([dict(br.as_dict(), total=br.total)], exp.out / "norms.csv", exp.header())
    return 0


HANDLERS = {"lift": cmd_lift, "solve": cmd_solve, "rates": cmd_rates,
            "cocycle": cmd_cocycle, "wongzakai": cmd_wongzakai, "norms": cmd_norms}


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="roughevolve",
                                 description="Rough quasilinear evolution experiments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="INI configuration file")
    ap.add_argument("--seed", type=int, help="override roughpath.seed")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--profile", choices=("fast", "full"), default="full")
    ap.add_argument("--kind", choices=("stratonovich", "ito", "smooth", "zero"),
                    help="override roughpath.kind")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.profile)
        if args.kind:
            cfg["roughpath"]["kind"] = args.kind
        exp = build(cfg, args.command, Path(args.out))
    except (ParameterError, ConfigError, ScaleError, RoughPathError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    try:
        return HANDLERS[args.command](exp)
    except (ParameterError, ConfigError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except (SolverError, PropagatorError, SewingError, FloatingPointError) as exc:
        print(f"solve failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
