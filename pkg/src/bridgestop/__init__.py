"""Optimal stopping of a Brownian bridge whose pinning point is unknown."""

__version__ = "0.1.0"

from .priors import Discrete, Mixture, Normal, PointMass, TwoPoint, parse_prior  # noqa: E402

__all__ = ["Discrete", "Mixture", "Normal", "PointMass", "TwoPoint", "parse_prior", "__version__"]
