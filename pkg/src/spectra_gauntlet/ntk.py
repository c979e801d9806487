"""Empirical neural tangent kernels and the equal-amplitude spectral-bias experiment."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator

from .field import Grid, make_grid
from .nn import NetConfig, NetworkParams, TrainHistory, init_network, jacobian, train_full_batch
from .validation import check_positive

logger = logging.getLogger(__name__)

TARGET_MODES = (1, 3, 7, 15)
CONVERGENCE_THRESHOLD = 0.1


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Kernel matrix ``K_ij = <grad f(x_i), grad f(x_j)>`` on a grid."""

    points: Grid
    entries: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.entries, dtype=np.float64)
        n = self.points.n
        if K.shape != (n, n):
            raise ValueError(f"Gram matrix has shape {K.shape}, grid needs ({n}, {n})")
        if not np.all(np.isfinite(K)):
            raise ValueError("Gram matrix has non-finite entries")
        scale = max(float(np.max(np.abs(K))), 1e-300)
        if np.max(np.abs(K - K.T)) > 1e-10 * scale:
            raise ValueError("Gram matrix is not symmetric")
        K = 0.5 * (K + K.T)
        eig = np.linalg.eigvalsh(K)
        if eig[0] < -1e-8 * max(eig[-1], 0.0):
            raise ValueError(f"Gram matrix is not positive semi-definite (min eigenvalue {eig[0]:.3e})")
        K.setflags(write=False)
        object.__setattr__(self, "entries", K)


@dataclass(frozen=True)
class DecayFit:
    alpha: float
    intercept: float
    r2: float
    k_range: tuple[int, int]


@dataclass
class NtkSpectrum:
    wavenumbers: np.ndarray
    eigenvalues: np.ndarray
    fit: DecayFit | None = None

    def __post_init__(self):
        self.wavenumbers = np.asarray(self.wavenumbers, dtype=int)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=np.float64)
        if self.wavenumbers.shape != self.eigenvalues.shape:
            raise ValueError("wavenumbers and eigenvalues must have equal length")
        if np.any(np.diff(self.wavenumbers) <= 0):
            raise ValueError("wavenumbers must be strictly increasing")

    def eigenvalue(self, k: int) -> float:
        idx = np.flatnonzero(self.wavenumbers == k)
        if idx.size == 0:
            raise KeyError(f"wavenumber {k} not in spectrum")
        return float(self.eigenvalues[idx[0]])


@dataclass(frozen=True)
class CutoffQuery:
    eta: float
    t: float
    epsilon: float
    alpha: float

    def __post_init__(self):
        check_positive(self.eta, "eta")
        check_positive(self.t, "t")
        check_positive(self.alpha, "alpha")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")


def ntk_gram(params: NetworkParams, grid: Grid) -> GramMatrix:
    J = jacobian(params, grid.points[:, None])
    K = J @ J.T
    return GramMatrix(grid, 0.5 * (K + K.T))


def fourier_modes(grid: Grid, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm discretised ``cos`` and ``sin`` of wavenumber ``k``."""
    arg = 2.0 * np.pi * k * grid.points / grid.length
    c, s = np.cos(arg), np.sin(arg)
    return c / np.linalg.norm(c), s / np.linalg.norm(s)


def fourier_eigenvalue(gram: GramMatrix, k: int, phase: str = "average") -> float:
    """Rayleigh quotient ``v^T K v / v^T v`` for the discretised mode ``k``.

    ``phase="average"`` returns the mean of the cosine and sine quotients;
    ``"cos"`` or ``"sin"`` returns one of them.
    """
    n = gram.points.n
    if not 1 <= k < n // 2:
        raise ValueError(f"wavenumber must satisfy 1 <= k < {n // 2}, got {k}")
    c, s = fourier_modes(gram.points, k)
    K = gram.entries
    rq_c = float(c @ K @ c)
    rq_s = float(s @ K @ s)
    if phase == "average":
        return 0.5 * (rq_c + rq_s)
    if phase == "cos":
        return rq_c
    if phase == "sin":
        return rq_s
    raise ValueError(f"unknown phase convention {phase!r}")


def fourier_spectrum(gram: GramMatrix, wavenumbers, phase: str = "average") -> NtkSpectrum:
    ks = np.asarray(list(wavenumbers), dtype=int)
    lam = np.array([fourier_eigenvalue(gram, int(k), phase) for k in ks])
    return NtkSpectrum(ks, lam)


def fit_decay_exponent(spectrum: NtkSpectrum, k_range=(1, 32)) -> DecayFit:
    """Least-squares slope of ``log lambda_k`` against ``log k``; ``alpha = -slope``."""
    k_lo, k_hi = k_range
    sel = (spectrum.wavenumbers >= k_lo) & (spectrum.wavenumbers <= k_hi)
    ks = spectrum.wavenumbers[sel]
    lam = spectrum.eigenvalues[sel]
    if ks.size < 4:
        raise ValueError(f"need at least 4 wavenumbers in [{k_lo}, {k_hi}], got {ks.size}")
    if np.any(lam <= 0):
        bad = ks[lam <= 0].tolist()
        raise ValueError(f"non-positive eigenvalue at wavenumbers {bad}")
    res = stats.linregress(np.log(ks), np.log(lam))
    return DecayFit(alpha=-float(res.slope), intercept=float(res.intercept),
                    r2=float(res.rvalue ** 2), k_range=(int(k_lo), int(k_hi)))


def resolved_cutoff(q: CutoffQuery) -> float:
    """``k_max = (eta t / ln(1/epsilon)) ** (1/alpha)``."""
    return float((q.eta * q.t / np.log(1.0 / q.epsilon)) ** (1.0 / q.alpha))


def equal_amplitude_target(x):
    """``sin(2 pi x) + sin(6 pi x) + sin(14 pi x) + sin(30 pi x)``."""
    x = np.asarray(x, dtype=np.float64)
    out = sum(np.sin(2.0 * np.pi * k * x) for k in TARGET_MODES)
    return float(out) if out.ndim == 0 else out


@dataclass
class SpectralBiasResult:
    spectrum: NtkSpectrum
    convergence_steps: dict[int, int | None]
    theory_ratios: dict[int, float]
    history: TrainHistory
    seed: int
    params: NetworkParams | None = field(default=None, repr=False)

    @property
    def censored(self) -> list[int]:
        return [k for k, t in self.convergence_steps.items() if t is None]

    @property
    def observed_ratios(self) -> dict[int, float | None]:
        t1 = self.convergence_steps.get(1)
        out = {}
        for k, t in self.convergence_steps.items():
            out[k] = None if t is None or not t1 else t / t1
        return out

    def to_json(self) -> dict:
        fit = self.spectrum.fit
        return {
            "seed": self.seed,
            "spectrum": [[int(k), float(v)] for k, v in
                         zip(self.spectrum.wavenumbers, self.spectrum.eigenvalues)],
            "alpha": None if fit is None else fit.alpha,
            "fit": None if fit is None else {"alpha": fit.alpha, "intercept": fit.intercept,
                                             "r2": fit.r2, "k_range": list(fit.k_range)},
            "t_k": {str(k): t for k, t in self.convergence_steps.items()},
            "censored": self.censored,
            "theory_ratio": {str(k): v for k, v in self.theory_ratios.items()},
            "observed_ratio": {str(k): v for k, v in self.observed_ratios.items()},
            "threshold": self.history.threshold,
            "optimizer": self.history.optimizer,
            "learning_rate": self.history.learning_rate,
        }


def run_spectral_bias_experiment(
    config: NetConfig,
    grid: Grid | None = None,
    lr: float = 1e-3,
    steps: int = 20000,
    *,
    optimizer: str = "adam",
    threshold: float = CONVERGENCE_THRESHOLD,
    fit_range=(1, 32),
    record_stride: int = 100,
    tracked_modes=TARGET_MODES,
) -> SpectralBiasResult:
    """Measure the NTK Fourier spectrum at initialisation, then train on the
    equal-amplitude target and time the convergence of each tracked mode.

    ``t_k`` is the first step at which the amplitude error of mode ``k``
    falls below ``threshold``; modes that never do are reported as censored
    (``None``).
    """
    grid = grid if grid is not None else make_grid(256, 1.0)
    if grid.length != 1.0:
        raise ValueError("the spectral-bias experiment runs on [0, 1)")
    params0 = init_network(config)
    gram = ntk_gram(params0, grid)
    n_k = min(grid.n // 2 - 1, max(fit_range[1], max(tracked_modes)))
    spectrum = fourier_spectrum(gram, range(1, n_k + 1))
    spectrum.fit = fit_decay_exponent(spectrum, fit_range)

    x = grid.points
    params, history = train_full_batch(
        params0, (x[:, None], equal_amplitude_target(x)), lr, steps, tracked_modes,
        record_stride=record_stride, optimizer=optimizer, threshold=threshold,
        stop_when_converged=True,
    )
    lam1 = spectrum.eigenvalue(tracked_modes[0])
    theory = {int(k): lam1 / spectrum.eigenvalue(k) for k in tracked_modes}
    logger.info("seed %d: alpha=%.3f t_k=%s", config.seed, spectrum.fit.alpha,
                history.convergence_steps)
    return SpectralBiasResult(spectrum, dict(history.convergence_steps), theory, history,
                              config.seed, params)


def median_convergence_steps(results) -> dict[int, float | None]:
    """Seed-median of ``t_k``; a mode censored in any seed stays censored."""
    out = {}
    for k in results[0].convergence_steps:
        ts = [r.convergence_steps[k] for r in results]
        out[k] = None if any(t is None for t in ts) else float(np.median(ts))
    return out


class EmpiricalNTK(BaseEstimator):
    """Estimator facade: ``fit(x)`` builds the Gram matrix of a freshly
    initialised dense tanh network on the 1-D points ``x`` and stores its
    Fourier spectrum.

    The points must form a uniform periodic grid on ``[0, 1)``.
    """

    def __init__(self, hidden_layer_sizes=(128, 128, 128), init_scale=1.0, random_state=0,
                 max_wavenumber=32, fit_range=(1, 32), phase="average"):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.init_scale = init_scale
        self.random_state = random_state
        self.max_wavenumber = max_wavenumber
        self.fit_range = fit_range
        self.phase = phase

    def fit(self, X, y=None):
        x = np.asarray(X, dtype=np.float64).ravel()
        grid = make_grid(x.size, 1.0)
        if not np.allclose(x, grid.points, atol=1e-12):
            raise ValueError("EmpiricalNTK expects the uniform grid j/n on [0, 1)")
        config = NetConfig((1, *self.hidden_layer_sizes, 1), init_scale=self.init_scale,
                           seed=self.random_state)
        self.params_ = init_network(config)
        self.gram_ = ntk_gram(self.params_, grid)
        self.spectrum_ = fourier_spectrum(self.gram_, range(1, self.max_wavenumber + 1), self.phase)
        self.spectrum_.fit = fit_decay_exponent(self.spectrum_, self.fit_range)
        self.alpha_ = self.spectrum_.fit.alpha
        return self
