"""Memory-reinforced random walk lab.

Simulation, limit theory, exact small-horizon oracles, and statistical
verification for a family of multidimensional memory-reinforced random
walks and the scalar stochastic approximation processes they reduce to.
"""

from .funcdsl import FuncExpr, parse
from .model import (
    Domain,
    Func1D,
    InitialLaw,
    ModelError,
    ModelSpec,
    StepLaw,
    ValidatedModel,
    dual,
    f_from_g,
    g_from_f,
    h_from_f,
    load_model,
    save_model,
    validate_model,
)
from .presets import build_preset, list_presets
from .simulate import EnsembleStats, FunctionalConfig, ensemble, trajectory
from .theory import RegimeReport, classify, find_fixed_point

__all__ = [
    "FuncExpr",
    "parse",
    "Domain",
    "Func1D",
    "InitialLaw",
    "ModelError",
    "ModelSpec",
    "StepLaw",
    "ValidatedModel",
    "dual",
    "f_from_g",
    "g_from_f",
    "h_from_f",
    "load_model",
    "save_model",
    "validate_model",
    "build_preset",
    "list_presets",
    "EnsembleStats",
    "FunctionalConfig",
    "ensemble",
    "trajectory",
    "RegimeReport",
    "classify",
    "find_fixed_point",
]

__version__ = "0.1.0"
