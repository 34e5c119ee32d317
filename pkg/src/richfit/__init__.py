"""Perturbed Richards growth: deterministic curves, birth-death and diffusion counterparts,
likelihood fitting with bounded stochastic search, and first-passage times."""
from .errors import DomainError, NumericalError, QuadratureError, RichfitError, ValidationError
from .growth import Perturbation, RichardsParams
from .diffusion import DiffusionParams, InitialLaw, SamplePaths

__version__ = "0.1.0"

__all__ = ["DiffusionParams", "DomainError", "InitialLaw", "NumericalError", "Perturbation", "QuadratureError",
           "RichardsParams", "RichfitError", "SamplePaths", "ValidationError", "__version__"]
