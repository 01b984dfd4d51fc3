"""Rough-path solvers for quasilinear parabolic evolution equations."""

from .controlled import CRPParams, ControlledPath, ParameterError, crp_norm
from .propagator import EvolutionFamily, Generator, GeneratorFamily
from .roughpath import (RoughPath, brownian_lift, chen_defect, lift_piecewise_linear,
                        lift_smooth, make_rng, rough_metric, shift)
from .scale import ScaleSpec, SpectralField
from .solver import QuasilinearModel, SolveResult, SolverConfig, mild_residual, solve

__version__ = "0.1.0"

__all__ = [
    "CRPParams", "ControlledPath", "ParameterError", "crp_norm",
    "EvolutionFamily", "Generator", "GeneratorFamily",
    "RoughPath", "brownian_lift", "chen_defect", "lift_piecewise_linear", "lift_smooth",
    "make_rng", "rough_metric", "shift",
    "ScaleSpec", "SpectralField",
    "QuasilinearModel", "SolveResult", "SolverConfig", "mild_residual", "solve",
]
