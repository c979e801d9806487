"""Periodic 1-D grids, half-spectrum transforms and spectral calculus.

Conventions used throughout the package:

* ``Spectrum.coeffs`` holds ``rfft(u) / n``, i.e. the forward transform
  divides by ``n``.  A unit-amplitude ``sin(2 pi k x / L)`` therefore has
  ``|coeffs[k]| == 0.5``.
* Energies are spatial mean squares.  Because only the non-negative half of
  the spectrum is stored, every interior mode ``0 < k < n/2`` is counted
  twice (its conjugate partner is implicit).  :func:`mode_weights` returns
  these multiplicities so that ``sum(mode_weights * |coeffs|**2)`` equals
  ``mean(u**2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid",
    "PeriodicField",
    "Spectrum",
    "make_grid",
    "to_spectrum",
    "to_field",
    "spectral_derivative",
    "parseval_energy",
    "mode_weights",
    "wavenumbers",
    "derivative_wavenumbers",
]

_HERMITIAN_TOL = 1e-10


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid ``x_j = j * length / n`` on ``[0, length)``."""

    n: int
    length: float

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or isinstance(self.n, bool):
            raise TypeError(f"grid size must be an integer, got {type(self.n).__name__}")
        if self.n < 4 or not _is_power_of_two(int(self.n)):
            raise ValueError(f"grid size must be a power of two >= 4, got {self.n}")
        if not np.isfinite(self.length) or self.length <= 0:
            raise ValueError(f"domain length must be positive and finite, got {self.length}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "length", float(self.length))

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n) * (self.length / self.n)

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def n_modes(self) -> int:
        """Length of the half spectrum, ``n // 2 + 1``."""
        return self.n // 2 + 1


def make_grid(n: int, length: float) -> Grid:
    return Grid(n, length)


def wavenumbers(grid: Grid) -> np.ndarray:
    """Angular wavenumbers ``q_k = 2 pi k / L`` for ``k = 0..n/2``."""
    return 2.0 * np.pi * np.arange(grid.n_modes) / grid.length


def derivative_wavenumbers(grid: Grid) -> np.ndarray:
    """Like :func:`wavenumbers` but with the Nyquist entry zeroed (odd derivatives)."""
    q = wavenumbers(grid)
    q[-1] = 0.0
    return q


def mode_weights(grid: Grid) -> np.ndarray:
    w = np.full(grid.n_modes, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return w


@dataclass(frozen=True, eq=False)
class PeriodicField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.grid.n,):
            raise ValueError(f"field has shape {values.shape}, grid expects ({self.grid.n},)")
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains NaN or Inf")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "PeriodicField":
        return cls(grid, fn(grid.points))

    def __add__(self, other: "PeriodicField") -> "PeriodicField":
        _check_same_grid(self.grid, other.grid)
        return PeriodicField(self.grid, self.values + other.values)

    def __sub__(self, other: "PeriodicField") -> "PeriodicField":
        _check_same_grid(self.grid, other.grid)
        return PeriodicField(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "PeriodicField":
        return PeriodicField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Half spectrum of a real field, forward-normalised by ``1/n``."""

    grid: Grid
    coeffs: np.ndarray
    normalization: str = field(default="forward", compare=False)

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=np.complex128)
        if coeffs.shape != (self.grid.n_modes,):
            raise ValueError(
                f"spectrum has shape {coeffs.shape}, grid expects ({self.grid.n_modes},)"
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("spectrum contains NaN or Inf")
        scale = max(1.0, float(np.max(np.abs(coeffs))))
        for k in (0, self.grid.n_modes - 1):
            if abs(coeffs[k].imag) > _HERMITIAN_TOL * scale:
                raise ValueError(
                    f"mode {k} must be real for a real field, imaginary part {coeffs[k].imag:.3e}"
                )
        coeffs[0] = coeffs[0].real
        coeffs[-1] = coeffs[-1].real
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)


def _check_same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


def to_spectrum(u: PeriodicField) -> Spectrum:
    if not np.all(np.isfinite(u.values)):
        raise ValueError("field contains NaN or Inf")
    return Spectrum(u.grid, np.fft.rfft(u.values) / u.grid.n)


def to_field(spec: Spectrum) -> PeriodicField:
    n = spec.grid.n
    return PeriodicField(spec.grid, np.fft.irfft(spec.coeffs * n, n))


def spectral_derivative(u: PeriodicField, order: int) -> PeriodicField:
    """``d^order u / dx^order`` by multiplication with ``(i q)^order``.

    The Nyquist mode is dropped for odd orders, where its derivative has no
    real-valued representation.
    """
    if order not in (1, 2, 3, 4):
        raise ValueError(f"derivative order must be 1..4, got {order}")
    q = derivative_wavenumbers(u.grid) if order % 2 else wavenumbers(u.grid)
    c = to_spectrum(u).coeffs * (1j * q) ** order
    return to_field(Spectrum(u.grid, c))


def parseval_energy(u: PeriodicField) -> float:
    """Spatial mean square, evaluated from the spectrum."""
    c = to_spectrum(u).coeffs
    return float(np.sum(mode_weights(u.grid) * np.abs(c) ** 2))
