"""Euler-Maruyama simulation lab for SDEs with super-linear dissipative drift
driven by Brownian, isotropic alpha-stable, or Pareto-surrogate noise."""

from emlab.constants import ConstantSet, StableParams, constant_set
from emlab.dynamics import Diffusion, Drift, EmConfig, Model, Scheme
from emlab.montecarlo import EnsembleConfig, MomentReport, run_ensemble, sweep_blowup
from emlab.noise import NoiseKind, RadiusWindow, make_rng
from emlab.theory import Theorem, build_event, certify_regime, event_probability_exact

__all__ = [
    "ConstantSet", "StableParams", "constant_set", "Diffusion", "Drift", "EmConfig", "Model",
    "Scheme", "EnsembleConfig", "MomentReport", "run_ensemble", "sweep_blowup", "NoiseKind",
    "RadiusWindow", "make_rng", "Theorem", "build_event", "certify_regime", "event_probability_exact",
]
__version__ = "0.1.0"
