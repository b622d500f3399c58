"""Mean-field Pontryagin training of tanh NeurODE classifiers."""
from .field import ControlParams, ControlPath
from .measures import EmpiricalMeasure, GaussianSpec, GridDensity, sample_initial, wasserstein1

__version__ = "0.1.0"

__all__ = ["ControlParams", "ControlPath", "EmpiricalMeasure", "GaussianSpec", "GridDensity",
           "sample_initial", "wasserstein1"]
