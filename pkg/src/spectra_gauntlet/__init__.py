"""Spectral-bias, neural-operator and hybrid-solver experiments on periodic 1-D fields."""

from .field import (Grid, PeriodicField, Spectrum, make_grid, parseval_energy,
                    spectral_derivative, to_field, to_spectrum)

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "PeriodicField",
    "Spectrum",
    "make_grid",
    "parseval_energy",
    "spectral_derivative",
    "to_field",
    "to_spectrum",
]
