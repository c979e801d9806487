"""Scale-aware error metrics: band energies, rollout error, spectra, QoIs,
derivative- and symbol-weighted errors, and error-growth fits.

Energies follow the mean-square convention of :mod:`spectra_gauntlet.field`:
the energy of mode ``k`` is ``w_k |c_k|^2`` with ``w_k = 2`` for interior
modes, so a sine of amplitude ``a`` carries ``a**2 / 2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .field import (Grid, PeriodicField, Spectrum, derivative_wavenumbers, mode_weights,
                    spectral_derivative, to_spectrum, wavenumbers)
from .ks import Trajectory

logger = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-12


@dataclass(frozen=True)
class BandSpec:
    name: str
    k_lo: int
    k_hi: int

    def __post_init__(self):
        if not 1 <= self.k_lo <= self.k_hi:
            raise ValueError(f"band {self.name}: need 1 <= k_lo <= k_hi, got [{self.k_lo}, {self.k_hi}]")

    def check_grid(self, grid: Grid) -> None:
        if self.k_hi > grid.n // 2:
            raise ValueError(f"band {self.name} reaches k={self.k_hi} beyond n/2={grid.n // 2}")

    def indices(self) -> slice:
        return slice(self.k_lo, self.k_hi + 1)


DEFAULT_BANDS = (
    BandSpec("low", 1, 5),
    BandSpec("mid", 6, 15),
    BandSpec("hi1", 16, 31),
    BandSpec("hi2", 32, 47),
    BandSpec("hi3", 48, 63),
    BandSpec("hi4", 64, 95),
    BandSpec("hi5", 96, 128),
)
DISSIPATION_BANDS = ("hi3", "hi4", "hi5")


def band(name: str, bands=DEFAULT_BANDS) -> BandSpec:
    for b in bands:
        if b.name == name:
            return b
    raise KeyError(f"no band named {name!r}")


def _power(values: np.ndarray) -> np.ndarray:
    n = values.shape[-1]
    c = np.fft.rfft(values, axis=-1) / n
    return mode_weights(Grid(n, 1.0)) * np.abs(c) ** 2


def band_energy(spec: Spectrum, band: BandSpec) -> float:
    band.check_grid(spec.grid)
    p = mode_weights(spec.grid) * np.abs(spec.coeffs) ** 2
    return float(np.sum(p[band.indices()]))


def band_energies(values: np.ndarray, bands=DEFAULT_BANDS) -> np.ndarray:
    """Energies of every band for a stack of physical states; shape ``(..., n_bands)``."""
    values = np.asarray(values, dtype=np.float64)
    grid = Grid(values.shape[-1], 1.0)
    for b in bands:
        b.check_grid(grid)
    p = _power(values)
    return np.stack([p[..., b.indices()].sum(axis=-1) for b in bands], axis=-1)


def band_error(pred: Spectrum, truth: Spectrum, band: BandSpec, floor: float = DEFAULT_FLOOR) -> float:
    """``|E_pred - E_true| / (E_true + floor)`` over one band."""
    if pred.grid != truth.grid:
        raise ValueError(f"grid mismatch: {pred.grid} vs {truth.grid}")
    if floor <= 0:
        raise ValueError("floor must be positive")
    e_p = band_energy(pred, band)
    e_t = band_energy(truth, band)
    return abs(e_p - e_t) / (e_t + floor)


@dataclass
class BandErrorSeries:
    band: BandSpec
    times: np.ndarray
    epsilon: np.ndarray
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.epsilon = np.asarray(self.epsilon, dtype=np.float64)
        if self.times.shape != self.epsilon.shape:
            raise ValueError("times and epsilon must have equal length")
        if np.any(self.epsilon < 0):
            raise ValueError("band errors must be nonnegative")

    @property
    def mean(self) -> float:
        return float(np.mean(self.epsilon))

    @property
    def final(self) -> float:
        return float(self.epsilon[-1])


def _aligned(pred, truth) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    P = pred.snapshots if isinstance(pred, Trajectory) else np.atleast_2d(np.asarray(pred, float))
    T = truth.snapshots if isinstance(truth, Trajectory) else np.atleast_2d(np.asarray(truth, float))
    if P.shape != T.shape:
        raise ValueError(f"prediction {P.shape} and truth {T.shape} are not aligned")
    if isinstance(pred, Trajectory) and isinstance(truth, Trajectory):
        if pred.grid != truth.grid:
            raise ValueError(f"grid mismatch: {pred.grid} vs {truth.grid}")
        if not np.isclose(pred.dt_snapshot, truth.dt_snapshot):
            raise ValueError("trajectories have different snapshot spacing")
    times = truth.times if isinstance(truth, Trajectory) else np.arange(P.shape[0], dtype=float)
    return P, T, times


def band_error_series(pred, truth, bands=DEFAULT_BANDS, floor: float = DEFAULT_FLOOR
                      ) -> list[BandErrorSeries]:
    P, T, times = _aligned(pred, truth)
    e_p = band_energies(P, bands)
    e_t = band_energies(T, bands)
    eps = np.abs(e_p - e_t) / (e_t + floor)
    return [BandErrorSeries(b, times, eps[:, i], floor) for i, b in enumerate(bands)]


def rollout_l2_series(pred, truth) -> np.ndarray:
    """Per-snapshot relative error ``||pred - truth|| / ||truth||``."""
    P, T, _ = _aligned(pred, truth)
    return np.linalg.norm(P - T, axis=1) / np.linalg.norm(T, axis=1)


def power_spectrum(u: PeriodicField) -> np.ndarray:
    """One-sided power ``w_k |c_k|^2`` for ``k = 0 .. n/2``; sums to ``mean(u**2)``."""
    return _power(u.values)


def mean_power_spectrum(snapshots: np.ndarray) -> np.ndarray:
    """Time-averaged one-sided power of a stack of states."""
    return _power(np.atleast_2d(snapshots)).mean(axis=0)


@dataclass
class QoiSeries:
    times: np.ndarray
    energy: np.ndarray
    gradient_energy: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.energy = np.asarray(self.energy, dtype=np.float64)
        self.gradient_energy = np.asarray(self.gradient_energy, dtype=np.float64)
        if not self.times.shape == self.energy.shape == self.gradient_energy.shape:
            raise ValueError("QoI series must have equal lengths")


def qoi_series(traj: Trajectory) -> QoiSeries:
    """``E(t) = <u^2>`` and ``G(t) = <(du/dx)^2>`` per snapshot."""
    E = np.mean(traj.snapshots ** 2, axis=1)
    G = np.array([np.mean(spectral_derivative(f, 1).values ** 2) for f in traj.fields])
    return QoiSeries(traj.times, E, G)


def _diff_spectrum(pred: PeriodicField, truth: PeriodicField) -> np.ndarray:
    if pred.grid != truth.grid:
        raise ValueError(f"grid mismatch: {pred.grid} vs {truth.grid}")
    return to_spectrum(pred).coeffs - to_spectrum(truth).coeffs


def spectral_l2_error(pred: PeriodicField, truth: PeriodicField) -> float:
    """``sum_k w_k |c_k(pred) - c_k(truth)|^2``, i.e. the mean-square difference."""
    d = _diff_spectrum(pred, truth)
    return float(np.sum(mode_weights(pred.grid) * np.abs(d) ** 2))


def h1_error(pred: PeriodicField, truth: PeriodicField) -> float:
    """Gradient-weighted squared error ``sum_k w_k q_k^2 |dc_k|^2``.

    Uses the same wavenumbers as a first derivative (Nyquist dropped), so it
    equals ``mean((d/dx (pred - truth))**2)``.
    """
    d = _diff_spectrum(pred, truth)
    q = derivative_wavenumbers(pred.grid)
    return float(np.sum(mode_weights(pred.grid) * q ** 2 * np.abs(d) ** 2))


@dataclass(frozen=True, eq=False)
class OperatorSymbol:
    """Per-mode multiplier of a constant-coefficient linear operator."""

    grid: Grid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=np.complex128)
        if v.shape != (self.grid.n_modes,):
            raise ValueError(f"symbol has shape {v.shape}, grid expects ({self.grid.n_modes},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("symbol contains NaN or Inf")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def zero_modes(self) -> np.ndarray:
        return np.flatnonzero(self.values == 0)


def identity_symbol(grid: Grid) -> OperatorSymbol:
    return OperatorSymbol(grid, np.ones(grid.n_modes), "identity")


def transport_symbol(grid: Grid) -> OperatorSymbol:
    """``d/dx``: ``i q`` (Nyquist dropped as for any odd derivative)."""
    return OperatorSymbol(grid, 1j * derivative_wavenumbers(grid), "transport")


def poisson_symbol(grid: Grid) -> OperatorSymbol:
    """``d^2/dx^2``: ``-q^2``."""
    return OperatorSymbol(grid, -wavenumbers(grid) ** 2, "poisson")


def ks_symbol(grid: Grid) -> OperatorSymbol:
    """Linear KS operator ``u_xx + u_xxxx``: ``q^4 - q^2``, zero at ``q = 0`` and ``q = 1``."""
    q = wavenumbers(grid)
    return OperatorSymbol(grid, q ** 4 - q ** 2, "kuramoto-sivashinsky")


def residual_weighted_error(pred: PeriodicField, truth: PeriodicField, symbol: OperatorSymbol) -> float:
    """``sum_k w_k |sigma(k)|^2 |dc_k|^2``."""
    if symbol.grid != pred.grid:
        raise ValueError(f"grid mismatch: symbol on {symbol.grid}, fields on {pred.grid}")
    d = _diff_spectrum(pred, truth)
    return float(np.sum(mode_weights(pred.grid) * np.abs(symbol.values) ** 2 * np.abs(d) ** 2))


class ResonanceError(ValueError):
    """A zero of the symbol meets nonzero forcing."""


def symbol_solve(forcing: Spectrum, symbol: OperatorSymbol, *, rtol: float = 1e-13) -> Spectrum:
    """Solve ``sigma(k) u_k = f_k`` mode by mode.

    Where the symbol vanishes the forcing must vanish too (to ``rtol`` of its
    largest coefficient); those modes are set to zero.  The affected modes
    are listed by ``symbol.zero_modes``.
    """
    if symbol.grid != forcing.grid:
        raise ValueError(f"grid mismatch: symbol on {symbol.grid}, forcing on {forcing.grid}")
    f = forcing.coeffs
    zeros = symbol.values == 0
    scale = float(np.max(np.abs(f))) if f.size else 0.0
    bad = zeros & (np.abs(f) > rtol * scale)
    if np.any(bad):
        raise ResonanceError(f"symbol {symbol.label!r} vanishes at modes "
                             f"{np.flatnonzero(bad).tolist()} where the forcing does not")
    out = np.zeros_like(f)
    out[~zeros] = f[~zeros] / symbol.values[~zeros]
    if np.any(zeros):
        logger.info("symbol %r: modes %s set to zero (0/0)", symbol.label, np.flatnonzero(zeros).tolist())
    return Spectrum(forcing.grid, out)


@dataclass(frozen=True)
class GrowthFit:
    gamma: float | None
    window: tuple[float, float] | None
    r2: float | None
    lambda1: float
    excess_ratio: float | None
    status: str = "ok"
    n_points: int = 0

    @property
    def fittable(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> dict:
        return {"gamma": self.gamma, "window": None if self.window is None else list(self.window),
                "r2": self.r2, "lambda1": self.lambda1, "excess_ratio": self.excess_ratio,
                "status": self.status, "n_points": self.n_points}


def fit_growth_rate(series, lambda1: float, *, dt: float = 1.0, times=None,
                    saturation: float | None = None, min_points: int = 3) -> GrowthFit:
    """Exponential rate of an error series inside its pre-saturation window.

    The window runs from the first sample reaching ``10 * eps0`` (``eps0`` is
    the first positive sample) to the last sample before the series exceeds
    ``0.1 * saturation``.  ``saturation`` defaults to the median of the final
    quarter of the series.  Without at least ``min_points`` samples in that
    window the fit is reported as unfittable.
    """
    e = np.asarray(series, dtype=np.float64)
    t = dt * np.arange(e.size) if times is None else np.asarray(times, dtype=np.float64)
    if t.shape != e.shape:
        raise ValueError("times and series must have equal length")

    def unfittable(reason):
        logger.info("growth fit unfittable: %s", reason)
        return GrowthFit(None, None, None, float(lambda1), None, "unfittable")

    pos = np.flatnonzero(e > 0)
    if pos.size == 0:
        return unfittable("series has no positive values")
    eps0 = e[pos[0]]
    sat = float(np.median(e[-max(1, e.size // 4):])) if saturation is None else float(saturation)
    lo, hi = 10.0 * eps0, 0.1 * sat
    if lo >= hi:
        return unfittable(f"10*eps0={lo:.3e} is not below 0.1*saturation={hi:.3e}")
    start = np.flatnonzero(e >= lo)
    if start.size == 0:
        return unfittable("series never reaches 10*eps0")
    i0 = int(start[0])
    above = np.flatnonzero(e[i0:] > hi)
    i1 = i0 + int(above[0]) if above.size else e.size
    if i1 - i0 < min_points:
        return unfittable(f"only {i1 - i0} samples in the window")
    res = stats.linregress(t[i0:i1], np.log(e[i0:i1]))
    gamma = float(res.slope)
    ratio = gamma / lambda1 if lambda1 > 0 else None
    return GrowthFit(gamma, (float(t[i0]), float(t[i1 - 1])), float(res.rvalue ** 2), float(lambda1),
                     ratio, "ok", i1 - i0)


# ----------------------------------------------------------------- reporting


def metrics_table(pred: Trajectory, truth: Trajectory, bands=DEFAULT_BANDS,
                  floor: float = DEFAULT_FLOOR):
    """CSV-ready ``(header, rows)``: one row per snapshot."""
    l2 = rollout_l2_series(pred, truth)
    series = band_error_series(pred, truth, bands, floor)
    qp, qt = qoi_series(pred), qoi_series(truth)
    h1 = [h1_error(p, q) for p, q in zip(pred.fields, truth.fields)]
    header = (["t", "l2"] + [f"eps_{b.name}" for b in bands]
              + ["E_pred", "E_true", "G_pred", "G_true", "h1"])
    rows = []
    for i, t in enumerate(truth.times):
        rows.append([float(t), float(l2[i])] + [float(s.epsilon[i]) for s in series]
                    + [float(qp.energy[i]), float(qt.energy[i]), float(qp.gradient_energy[i]),
                       float(qt.gradient_energy[i]), float(h1[i])])
    return header, rows


def metrics_summary(pred: Trajectory, truth: Trajectory, lambda1: float | None = None,
                    bands=DEFAULT_BANDS, floor: float = DEFAULT_FLOOR) -> dict:
    """Per-band time-mean and final ``eps_B``, QoI errors and growth fit."""
    series = band_error_series(pred, truth, bands, floor)
    qp, qt = qoi_series(pred), qoi_series(truth)
    l2 = rollout_l2_series(pred, truth)
    rel_E = np.abs(qp.energy - qt.energy) / qt.energy
    rel_G = np.abs(qp.gradient_energy - qt.gradient_energy) / qt.gradient_energy
    h1 = np.array([h1_error(p, q) for p, q in zip(pred.fields, truth.fields)])
    out = {
        "bands": {s.band.name: {"k_lo": s.band.k_lo, "k_hi": s.band.k_hi, "mean": s.mean,
                                "final": s.final} for s in series},
        "floor": floor,
        "l2": {"mean": float(l2.mean()), "final": float(l2[-1])},
        "h1": {"mean": float(h1.mean()), "final": float(h1[-1])},
        "qoi": {"energy_rel_error_mean": float(rel_E.mean()),
                "energy_rel_error_final": float(rel_E[-1]),
                "gradient_energy_rel_error_mean": float(rel_G.mean()),
                "gradient_energy_rel_error_final": float(rel_G[-1])},
        "n_snapshots": int(l2.size),
    }
    if lambda1 is not None:
        out["growth_fit"] = fit_growth_rate(l2, lambda1, times=truth.times).to_json()
    return out
