"""Pseudo-spectral Kuramoto-Sivashinsky solver, datasets and Lyapunov estimates.

Solves ``u_t = -u u_x - u_xx - u_xxxx`` on a periodic domain with exponential
time differencing.  The state is kept as a forward-normalised half spectrum
(see :mod:`spectra_gauntlet.field`); batched states have shape
``(batch, n // 2 + 1)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .field import (Grid, PeriodicField, Spectrum, derivative_wavenumbers, make_grid,
                    mode_weights, wavenumbers)

logger = logging.getLogger(__name__)

BLOWUP_AMPLITUDE = 1e3
SCHEMES = ("hochbruck-ostermann", "cox-matthews")


class KsBlowUpError(RuntimeError):
    def __init__(self, message: str, last_finite_time: float):
        super().__init__(message)
        self.last_finite_time = last_finite_time


@dataclass(frozen=True)
class KsConfig:
    """Solver and initial-condition settings.

    Initial conditions are ``u0 = sum_{k=1..k_ic} ic_amplitude * cos(q_k x + phi_k)``
    with independent uniform phases drawn from ``seed``.
    """

    grid: Grid = field(default_factory=lambda: make_grid(256, 64.0))
    dt: float = 0.05
    snapshot_stride: int = 5
    burn_in_time: float = 100.0
    seed: int = 0
    k_ic: int = 8
    ic_amplitude: float = 0.6
    nonlinear: bool = True
    scheme: str = "hochbruck-ostermann"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.snapshot_stride < 1:
            raise ValueError(f"snapshot_stride must be >= 1, got {self.snapshot_stride}")
        if self.burn_in_time < 0:
            raise ValueError(f"burn_in_time must be >= 0, got {self.burn_in_time}")
        if not 1 <= self.k_ic < self.grid.n / 3:
            raise ValueError(f"k_ic must satisfy 1 <= k_ic < n/3, got {self.k_ic}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")

    @property
    def delta(self) -> float:
        """Time between stored snapshots."""
        return self.dt * self.snapshot_stride


@dataclass(eq=False)
class Trajectory:
    grid: Grid
    snapshots: np.ndarray
    t0: float
    dt_snapshot: float
    config: KsConfig | None = None
    failure_step: int | None = None

    def __post_init__(self):
        self.snapshots = np.asarray(self.snapshots, dtype=np.float64).reshape(-1, self.grid.n)

    def __len__(self) -> int:
        return self.snapshots.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt_snapshot * np.arange(len(self))

    @property
    def fields(self) -> list[PeriodicField]:
        return [PeriodicField(self.grid, s) for s in self.snapshots]


@dataclass(frozen=True, eq=False)
class LyapunovEstimate:
    lambda1: float
    doubling_time: float
    fit_window: tuple[float, float]
    r2: float
    log_growths: np.ndarray = field(repr=False)
    perturbation_size: float = 1e-8
    retries: int = 0


def ks_rhs_linear_symbol(grid: Grid) -> np.ndarray:
    """``L(k) = q^2 - q^4`` with ``q = 2 pi k / L``, as a complex array."""
    q = wavenumbers(grid)
    return (q ** 2 - q ** 4).astype(np.complex128)


def dealias_mask(grid: Grid) -> np.ndarray:
    """2/3 rule: keep modes with ``k < n/3``."""
    return (np.arange(grid.n_modes) < grid.n / 3).astype(np.float64)


def _phi_functions(z: np.ndarray, n_contour: int = 32):
    """``phi_1, phi_2, phi_3`` of real ``z`` by contour averaging.

    Each ``phi`` is averaged over points on a unit circle around ``z`` so the
    removable singularity at ``z = 0`` never has to be evaluated directly.
    """
    r = np.exp(1j * np.pi * (np.arange(1, n_contour + 1) - 0.5) / n_contour)
    Z = z[:, None] + r[None, :]
    eZ = np.exp(Z)
    phi1 = np.real(np.mean((eZ - 1.0) / Z, axis=1))
    phi2 = np.real(np.mean((eZ - 1.0 - Z) / Z ** 2, axis=1))
    phi3 = np.real(np.mean((eZ - 1.0 - Z - Z ** 2 / 2.0) / Z ** 3, axis=1))
    return phi1, phi2, phi3


@dataclass(frozen=True, eq=False)
class EtdCoefficients:
    grid: Grid
    dt: float
    scheme: str
    nonlinear: bool
    terms: dict = field(repr=False)
    q_deriv: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)


def etd_coefficients(grid: Grid, dt: float, scheme: str = "hochbruck-ostermann",
                     nonlinear: bool = True) -> EtdCoefficients:
    """Precompute the exponential integrator weights for ``(grid, dt)``.

    ``"hochbruck-ostermann"`` is the five-stage exponential Runge-Kutta
    method of stiff order four; ``"cox-matthews"`` is the classical
    four-stage ETDRK4 tableau (which shows order reduction on stiff KS
    states).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    lin = ks_rhs_linear_symbol(grid).real
    z = dt * lin
    p1, p2, p3 = _phi_functions(z)
    h1, h2, h3 = _phi_functions(z / 2.0)
    t = {"E": np.exp(z), "E2": np.exp(z / 2.0)}
    if scheme == "hochbruck-ostermann":
        a52 = 0.5 * h2 - p3 + 0.25 * p2 - 0.5 * h3
        a54 = 0.25 * h2 - a52
        t.update(
            a21=0.5 * h1,
            a31=0.5 * h1 - h2, a32=h2,
            a41=p1 - 2.0 * p2, a42=p2, a43=p2,
            a51=0.5 * h1 - 2.0 * a52 - a54, a52=a52, a53=a52, a54=a54,
            b1=p1 - 3.0 * p2 + 4.0 * p3, b4=-p2 + 4.0 * p3, b5=4.0 * p2 - 8.0 * p3,
        )
    else:
        t.update(
            Q=0.5 * h1,
            f1=p1 - 3.0 * p2 + 4.0 * p3,
            f2=p2 - 2.0 * p3,
            f3=-p2 + 4.0 * p3,
        )
    return EtdCoefficients(grid, float(dt), scheme, bool(nonlinear), t,
                           derivative_wavenumbers(grid), dealias_mask(grid))


def nonlinear_term(v: np.ndarray, coeffs: EtdCoefficients) -> np.ndarray:
    """Spectrum of ``-u u_x = -(1/2) d/dx u^2`` with 2/3-rule dealiasing."""
    if not coeffs.nonlinear:
        return np.zeros_like(v)
    n = coeffs.grid.n
    u = np.fft.irfft(v * coeffs.mask * n, n, axis=-1)
    return -0.5j * coeffs.q_deriv * coeffs.mask * np.fft.rfft(u * u, axis=-1) / n


def _advance(v: np.ndarray, c: EtdCoefficients) -> np.ndarray:
    t, h = c.terms, c.dt
    N = lambda w: nonlinear_term(w, c)  # noqa: E731
    if c.scheme == "hochbruck-ostermann":
        n1 = N(v)
        u2 = t["E2"] * v + h * t["a21"] * n1
        n2 = N(u2)
        u3 = t["E2"] * v + h * (t["a31"] * n1 + t["a32"] * n2)
        n3 = N(u3)
        u4 = t["E"] * v + h * (t["a41"] * n1 + t["a42"] * n2 + t["a43"] * n3)
        n4 = N(u4)
        u5 = t["E2"] * v + h * (t["a51"] * n1 + t["a52"] * n2 + t["a53"] * n3 + t["a54"] * n4)
        n5 = N(u5)
        return t["E"] * v + h * (t["b1"] * n1 + t["b4"] * n4 + t["b5"] * n5)
    nv = N(v)
    a = t["E2"] * v + h * t["Q"] * nv
    na = N(a)
    b = t["E2"] * v + h * t["Q"] * na
    nb = N(b)
    cc = t["E2"] * a + h * t["Q"] * (2.0 * nb - nv)
    nc = N(cc)
    return t["E"] * v + h * (t["f1"] * nv + 2.0 * t["f2"] * (na + nb) + t["f3"] * nc)


def etdrk4_step(state: Spectrum, dt: float, coeffs: EtdCoefficients) -> Spectrum:
    if state.grid != coeffs.grid or not np.isclose(dt, coeffs.dt, rtol=0, atol=1e-15):
        raise ValueError("coefficients were precomputed for a different grid or dt")
    out = _advance(state.coeffs, coeffs)
    if not np.all(np.isfinite(out)):
        raise KsBlowUpError("non-finite state after ETD step", last_finite_time=0.0)
    return Spectrum(state.grid, out)


def advance_spectra(v: np.ndarray, coeffs: EtdCoefficients, n_steps: int, t_start: float = 0.0):
    """Advance a (batched) spectral state by ``n_steps`` integrator steps."""
    for i in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            v = _advance(v, coeffs)
        if not np.all(np.isfinite(v)):
            raise KsBlowUpError(
                f"KS state became non-finite at t={t_start + (i + 1) * coeffs.dt:.4g}",
                last_finite_time=t_start + i * coeffs.dt,
            )
    return v


def initial_spectrum(config: KsConfig, seed: int | None = None) -> np.ndarray:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    v = np.zeros(config.grid.n_modes, dtype=np.complex128)
    phases = rng.random(config.k_ic)
    v[1:config.k_ic + 1] = 0.5 * config.ic_amplitude * np.exp(2j * np.pi * phases)
    return v


def _to_physical(v: np.ndarray, grid: Grid) -> np.ndarray:
    return np.fft.irfft(v * grid.n, grid.n, axis=-1)


def _check_bounded(v: np.ndarray, grid: Grid, t: float) -> None:
    amp = np.max(np.abs(_to_physical(v, grid)))
    if not np.isfinite(amp) or amp > BLOWUP_AMPLITUDE:
        raise KsBlowUpError(f"KS solution blew up near t={t:.4g} (max|u|={amp:.3g})",
                            last_finite_time=t)


def integrate_batch(config: KsConfig, seeds, total_time: float) -> np.ndarray:
    """Integrate several seeds together; returns ``(batch, n_snapshots, n)``.

    Snapshots start one snapshot interval after ``burn_in_time`` and end at
    or before ``total_time``.
    """
    if total_time < config.burn_in_time:
        raise ValueError("total_time must be >= burn_in_time")
    seeds = list(seeds)
    coeffs = etd_coefficients(config.grid, config.dt, config.scheme, config.nonlinear)
    v = np.stack([initial_spectrum(config, s) for s in seeds])
    n_burn = int(round(config.burn_in_time / config.dt))
    v = advance_spectra(v, coeffs, n_burn)
    n_snap = int(np.floor((total_time - config.burn_in_time) / config.delta + 1e-9))
    out = np.empty((len(seeds), n_snap, config.grid.n))
    t = n_burn * config.dt
    for j in range(n_snap):
        v = advance_spectra(v, coeffs, config.snapshot_stride, t)
        t += config.delta
        _check_bounded(v, config.grid, t)
        out[:, j] = _to_physical(v, config.grid)
    return out


def integrate(config: KsConfig, total_time: float) -> Trajectory:
    snaps = integrate_batch(config, [config.seed], total_time)[0]
    return Trajectory(config.grid, snaps, config.burn_in_time + config.delta, config.delta, config)


def solve_from(u0: np.ndarray, config: KsConfig, n_snapshots: int, t0: float = 0.0,
               coeffs: EtdCoefficients | None = None) -> np.ndarray:
    """Integrate from a physical state (no burn-in); returns ``(n_snapshots, n)``
    states at ``t0 + delta, ..., t0 + n_snapshots * delta``."""
    if coeffs is None:
        coeffs = etd_coefficients(config.grid, config.dt, config.scheme, config.nonlinear)
    v = np.fft.rfft(np.asarray(u0, dtype=np.float64)) / config.grid.n
    out = np.empty((n_snapshots, config.grid.n))
    t = t0
    for j in range(n_snapshots):
        v = advance_spectra(v, coeffs, config.snapshot_stride, t)
        t += config.delta
        out[j] = _to_physical(v, config.grid)
    return out


@dataclass(eq=False)
class KsDataset:
    config: KsConfig
    inputs: np.ndarray
    targets: np.ndarray
    pair_source: np.ndarray
    train_seeds: list[int]
    test_seeds: list[int]
    train_trajectories: np.ndarray = field(repr=False)
    test_trajectories: list[Trajectory] = field(repr=False)
    horizon: float = 0.0

    @property
    def delta(self) -> float:
        return self.config.delta

    def manifest(self) -> dict:
        c = self.config
        return {
            "delta": c.delta,
            "n_train": len(self.train_seeds),
            "n_test": len(self.test_seeds),
            "train_seeds": self.train_seeds,
            "test_seeds": self.test_seeds,
            "horizon": self.horizon,
            "config": {"n": c.grid.n, "length": c.grid.length, "dt": c.dt,
                       "snapshot_stride": c.snapshot_stride, "burn_in_time": c.burn_in_time,
                       "seed": c.seed, "k_ic": c.k_ic, "ic_amplitude": c.ic_amplitude,
                       "scheme": c.scheme, "nonlinear": c.nonlinear},
        }


def trajectory_seeds(seed: int, count: int) -> list[int]:
    """Distinct per-trajectory seeds derived from one master seed."""
    state = np.random.SeedSequence(seed).generate_state(count * 2, dtype=np.uint32)
    seen, out = set(), []
    for s in state.tolist():
        if s not in seen:
            seen.add(s)
            out.append(int(s))
        if len(out) == count:
            return out
    raise RuntimeError("could not derive enough distinct seeds")


def generate_dataset(config: KsConfig, n_train: int, n_test: int = 3, horizon: float = 100.0,
                     batch_size: int = 32) -> KsDataset:
    """One-step pairs ``(u_t, u_{t+delta})`` from ``n_train`` trajectories and
    ``n_test`` withheld trajectories, each ``horizon`` time units long after
    burn-in."""
    seeds = trajectory_seeds(config.seed, n_train + n_test)
    train_seeds, test_seeds = seeds[:n_train], seeds[n_train:]
    total = config.burn_in_time + horizon
    chunks = [integrate_batch(config, train_seeds[i:i + batch_size], total)
              for i in range(0, n_train, batch_size)]
    train = np.concatenate(chunks, axis=0) if chunks else np.empty((0, 0, config.grid.n))
    test_arr = integrate_batch(config, test_seeds, total) if n_test else []
    tests = [Trajectory(config.grid, t, config.burn_in_time + config.delta, config.delta,
                        replace(config, seed=s)) for t, s in zip(test_arr, test_seeds)]
    n_snap = train.shape[1] if n_train else 0
    inputs = train[:, :-1].reshape(-1, config.grid.n) if n_train else np.empty((0, config.grid.n))
    targets = train[:, 1:].reshape(-1, config.grid.n) if n_train else np.empty((0, config.grid.n))
    source = np.array([(i, j) for i in range(n_train) for j in range(n_snap - 1)], dtype=int)
    return KsDataset(config, inputs, targets, source.reshape(-1, 2), train_seeds, test_seeds,
                     train, tests, horizon)


def _norm(v: np.ndarray, grid: Grid) -> np.ndarray:
    return np.sqrt(np.sum(mode_weights(grid) * np.abs(v) ** 2, axis=-1))


def estimate_lyapunov(config: KsConfig, perturbation_size: float = 1e-8, n_renorm: int = 1500,
                      interval: float = 1.0, max_retries: int = 3) -> LyapunovEstimate:
    """Leading Lyapunov exponent by twin-trajectory (Benettin) renormalisation.

    A reference state on the attractor and a copy displaced by
    ``perturbation_size`` (random dealiased direction) are advanced together;
    after every ``interval`` the log growth of their separation is recorded
    and the perturbed copy is rescaled back to ``perturbation_size``.
    """
    if not 1e-10 <= perturbation_size <= 1e-6:
        raise ValueError(f"perturbation size must lie in [1e-10, 1e-6], got {perturbation_size}")
    grid = config.grid
    coeffs = etd_coefficients(grid, config.dt, config.scheme, config.nonlinear)
    steps_per = int(round(interval / config.dt))
    if steps_per < 1:
        raise ValueError("interval must be at least one integrator step")
    rng = np.random.default_rng(config.seed + 7919)
    v = advance_spectra(initial_spectrum(config)[None], coeffs,
                        int(round(config.burn_in_time / config.dt)))[0]
    direction = np.fft.rfft(rng.standard_normal(grid.n)) / grid.n * dealias_mask(grid)
    direction[0] = 0.0
    direction /= _norm(direction, grid)

    delta0 = perturbation_size
    retries = 0
    while True:
        state = np.stack([v, v + delta0 * direction])
        first = advance_spectra(state, coeffs, steps_per)
        sep = _norm(first[1] - first[0], grid)
        if sep < 1e-3 or retries >= max_retries:
            break
        logger.warning("separation saturated (%.2e) after one interval; shrinking delta", sep)
        delta0 /= 100.0
        retries += 1

    logs = np.empty(n_renorm)
    state = first
    for i in range(n_renorm):
        if i > 0:
            state = advance_spectra(state, coeffs, steps_per)
        d = _norm(state[1] - state[0], grid)
        if d == 0.0:
            raise RuntimeError("twin trajectories collapsed onto each other")
        logs[i] = np.log(d / delta0)
        state[1] = state[0] + (state[1] - state[0]) * (delta0 / d)

    lam = float(np.mean(logs) / interval)
    times = interval * np.arange(1, n_renorm + 1)
    cum = np.cumsum(logs)
    slope, intercept = np.polyfit(times, cum, 1)
    pred = slope * times + intercept
    ss_res = float(np.sum((cum - pred) ** 2))
    ss_tot = float(np.sum((cum - cum.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    doubling = np.log(2.0) / lam if lam > 0 else float("inf")
    return LyapunovEstimate(lam, doubling, (float(times[0] - interval), float(times[-1])), r2,
                            logs, delta0, retries)
