"""Eigenvalues, travelling waves and simulations for a population structured
by space and phenotypic trait under an environmental cline."""
from .eigen import Extinct, Invading, Marginal, classify, minimal_speed, solve_line
from .model import BioParams, ModelParams, QuadraticGrowth, quadratic_model, rescale_bio

__version__ = "0.1.0"

__all__ = ["BioParams", "Extinct", "Invading", "Marginal", "ModelParams", "QuadraticGrowth",
           "classify", "minimal_speed", "quadratic_model", "rescale_bio", "solve_line"]
