"""Infinite-Prandtl Rayleigh-Benard convection driven by bounded noise in a
bottom boundary layer: simulator, control synthesis, linearisation and
mixing experiments."""
from .config import ConfigError, RunConfig, load_config
from .grid import Grid, ModeSpace, ScalarField, VectorField
from .noise import NoiseConfig, build_basis, sample_noise
from .stokes import SpectralStokes, StokesOperator
from .thermal import CFLViolation, StepperConfig, ThermalStepper, integrate_unit_interval

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "Grid",
    "ModeSpace",
    "ScalarField",
    "VectorField",
    "NoiseConfig",
    "build_basis",
    "sample_noise",
    "SpectralStokes",
    "StokesOperator",
    "CFLViolation",
    "StepperConfig",
    "ThermalStepper",
    "integrate_unit_interval",
]
