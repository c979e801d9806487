"""Interleaved surrogate/solver time marching and its cost model.

The surrogate advances ``K`` snapshots, then the KS solver integrates ``M``
snapshots forward from the current hybrid state (it does not copy the
reference trajectory).  A reference trajectory, when supplied, is only used
to score the run.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import DEFAULT_FLOOR, band, band_energies, rollout_l2_series
from .field import PeriodicField, derivative_wavenumbers, wavenumbers
from .ks import KsConfig, Trajectory, etd_coefficients, solve_from
from .surrogate import SpectralOperatorParams, apply_operator_batch
from .validation import check_positive, check_positive_int

logger = logging.getLogger(__name__)

POLICIES = ("fixed_period", "adaptive")
TRIGGER_METRICS = ("dissipation_band_energy", "residual_norm")


@dataclass(frozen=True)
class Trigger:
    metric: str = "dissipation_band_energy"
    threshold: float = 0.0

    def __post_init__(self):
        if self.metric not in TRIGGER_METRICS:
            raise ValueError(f"unknown trigger metric {self.metric!r}")
        if not self.threshold >= 0:
            raise ValueError(f"trigger threshold must be >= 0, got {self.threshold}")


@dataclass(frozen=True)
class HybridSchedule:
    """``K`` surrogate steps then ``M`` solver steps.

    With ``policy="adaptive"`` the surrogate window ends when the trigger
    fires or after ``K`` steps, whichever comes first.
    """

    K: int = 10
    M: int = 2
    policy: str = "fixed_period"
    trigger: Trigger | None = None

    def __post_init__(self):
        check_positive_int(self.K, "K")
        check_positive_int(self.M, "M")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.policy == "adaptive" and self.trigger is None:
            raise ValueError("the adaptive policy needs a trigger")


@dataclass(frozen=True)
class CostModel:
    c_surrogate: float = 1e-3
    c_solver: float = 1.0

    def __post_init__(self):
        check_positive(self.c_surrogate, "c_surrogate")
        check_positive(self.c_solver, "c_solver")


def net_speedup(cost: CostModel, schedule: HybridSchedule) -> float:
    """Solver-only cost over hybrid cost per cycle:
    ``(K + M) C_F / (K C_N + M C_F)``."""
    if schedule.policy != "fixed_period":
        raise ValueError("net speedup is defined for fixed-period schedules")
    K, M = schedule.K, schedule.M
    return (K + M) * cost.c_solver / (K * cost.c_surrogate + M * cost.c_solver)


def dissipation_energy(states: np.ndarray, names=("hi3", "hi4", "hi5")) -> np.ndarray:
    """Summed energy of the dissipation-range bands for each state."""
    bands = [band(nm) for nm in names]
    return band_energies(np.atleast_2d(states), bands).sum(axis=-1)


def ks_residual_norm(u0: np.ndarray, u1: np.ndarray, config: KsConfig) -> float:
    """Relative mismatch between ``(u1 - u0) / delta`` and the KS right-hand
    side at the midpoint state."""
    grid = config.grid
    n = grid.n
    mid = 0.5 * (u0 + u1)
    c = np.fft.rfft(mid) / n
    q, qd = wavenumbers(grid), derivative_wavenumbers(grid)
    lin = (q ** 2 - q ** 4) * c
    nl = -0.5j * qd * np.fft.rfft(mid * mid) / n
    rhs = np.fft.irfft((lin + nl) * n, n)
    r = (u1 - u0) / config.delta - rhs
    return float(np.linalg.norm(r) / max(np.linalg.norm(rhs), 1e-300))


def evaluate_trigger(history, trigger: Trigger, config: KsConfig | None = None) -> bool:
    """``True`` when the monitored quantity of the latest step reaches the threshold.

    ``history`` holds physical states, oldest first, and must contain at
    least one completed surrogate step (two states).
    """
    history = np.atleast_2d(np.asarray(history, dtype=np.float64))
    if history.shape[0] < 2:
        raise ValueError("trigger evaluation needs at least one completed step")
    if trigger.metric == "dissipation_band_energy":
        value = float(dissipation_energy(history[-1])[0])
    else:
        if config is None:
            raise ValueError("the residual monitor needs the solver configuration")
        value = ks_residual_norm(history[-2], history[-1], config)
    return value >= trigger.threshold


def attractor_trigger(train_snapshots: np.ndarray, factor: float = 3.0) -> Trigger:
    """Dissipation-band trigger at ``factor`` times the attractor mean."""
    mean = float(np.mean(dissipation_energy(train_snapshots.reshape(-1, train_snapshots.shape[-1]))))
    return Trigger("dissipation_band_energy", factor * mean)


@dataclass
class CorrectionEvent:
    start_step: int
    end_step: int
    eps_hi5_pre: float | None = None
    eps_hi5_post: float | None = None
    triggered: bool = False

    def to_json(self) -> dict:
        return {"start_step": self.start_step, "end_step": self.end_step,
                "eps_hi5_pre": self.eps_hi5_pre, "eps_hi5_post": self.eps_hi5_post,
                "triggered": self.triggered}


@dataclass
class HybridRecord:
    trajectory: Trajectory
    provenance: list[str]
    schedule: HybridSchedule
    events: list[CorrectionEvent] = field(default_factory=list)
    trigger_steps: list[int] = field(default_factory=list)
    n_surrogate_steps: int = 0
    n_solver_steps: int = 0
    surrogate_seconds: float = 0.0
    solver_seconds: float = 0.0
    errors: np.ndarray | None = field(default=None, repr=False)
    scale_selective: bool = False

    def __post_init__(self):
        if len(self.provenance) != len(self.trajectory) - 1:
            raise ValueError("provenance must have one tag per step")

    def modeled_cost(self, cost: CostModel) -> float:
        return self.n_surrogate_steps * cost.c_surrogate + self.n_solver_steps * cost.c_solver

    @property
    def final_error(self) -> float | None:
        return None if self.errors is None else float(self.errors[-1])

    def quench_holds(self) -> bool:
        """Every scored correction lowered ``eps_hi5``."""
        scored = [e for e in self.events if e.eps_hi5_pre is not None and e.eps_hi5_post is not None]
        return bool(scored) and all(e.eps_hi5_post < e.eps_hi5_pre for e in scored)

    def to_json(self, cost: CostModel | None = None) -> dict:
        s = self.schedule
        out = {
            "schedule": {"K": s.K, "M": s.M, "policy": s.policy,
                         "trigger": None if s.trigger is None else
                         {"metric": s.trigger.metric, "threshold": s.trigger.threshold}},
            "n_steps": len(self.provenance),
            "provenance": self.provenance,
            "events": [e.to_json() for e in self.events],
            "trigger_steps": self.trigger_steps,
            "n_surrogate_steps": self.n_surrogate_steps,
            "n_solver_steps": self.n_solver_steps,
            "surrogate_seconds": self.surrogate_seconds,
            "solver_seconds": self.solver_seconds,
            "failure_step": self.trajectory.failure_step,
            "scale_selective": self.scale_selective,
            "errors": None if self.errors is None else self.errors.tolist(),
            "final_error": self.final_error,
            "quench_holds": self.quench_holds() if self.events else None,
        }
        if cost is not None:
            out["modeled_cost"] = self.modeled_cost(cost)
        return out


def _eps_hi5(state: np.ndarray, truth_state: np.ndarray, floor: float) -> float:
    b = [band("hi5")]
    e_p = band_energies(state[None], b)[0, 0]
    e_t = band_energies(truth_state[None], b)[0, 0]
    return float(abs(e_p - e_t) / (e_t + floor))


def hybrid_rollout(params: SpectralOperatorParams, config: KsConfig, schedule: HybridSchedule,
                   u0: PeriodicField, n_steps: int, truth: Trajectory | None = None, *,
                   scale_selective: bool = False, k_split: int = 32,
                   floor: float = DEFAULT_FLOOR) -> HybridRecord:
    """March ``n_steps`` snapshots alternating surrogate and solver windows.

    ``scale_selective`` (experimental) keeps the surrogate's modes
    ``k <= k_split`` during solver windows and takes only the higher modes
    from the solver.
    """
    if u0.grid != config.grid or params.n != config.grid.n:
        raise ValueError("surrogate, solver and initial state must share one grid")
    check_positive_int(n_steps, "n_steps", minimum=0)
    if truth is not None and len(truth) < n_steps + 1:
        raise ValueError(f"reference trajectory has {len(truth)} snapshots, need {n_steps + 1}")
    coeffs = etd_coefficients(config.grid, config.dt, config.scheme, config.nonlinear)
    n = config.grid.n
    states = np.empty((n_steps + 1, n))
    states[0] = u0.values
    provenance: list[str] = []
    events: list[CorrectionEvent] = []
    trigger_steps: list[int] = []
    t_sur = t_sol = 0.0
    n_sur = n_sol = 0
    step = 0
    failure = None

    while step < n_steps and failure is None:
        # surrogate window
        window_start = step
        fired = False
        with np.errstate(over="ignore", invalid="ignore"):
            while step < n_steps and step - window_start < schedule.K:
                t0 = time.perf_counter()
                nxt = apply_operator_batch(params, states[step:step + 1])[0]
                t_sur += time.perf_counter() - t0
                if not np.all(np.isfinite(nxt)):
                    failure = step + 1
                    break
                step += 1
                n_sur += 1
                states[step] = nxt
                provenance.append("surrogate")
                if schedule.policy == "adaptive" and evaluate_trigger(
                        states[window_start:step + 1], schedule.trigger, config):
                    trigger_steps.append(step)
                    fired = True
                    break
        if failure is not None or step >= n_steps:
            break
        # solver window
        m = min(schedule.M, n_steps - step)
        t0 = time.perf_counter()
        out = solve_from(states[step], config, m, coeffs=coeffs)
        if scale_selective:
            low = states[step:step + 1]
            lows = []
            for _ in range(m):
                low = apply_operator_batch(params, low)
                lows.append(low[0])
            c_sol = np.fft.rfft(out, axis=-1)
            c_low = np.fft.rfft(np.array(lows), axis=-1)
            c_sol[:, :k_split + 1] = c_low[:, :k_split + 1]
            out = np.fft.irfft(c_sol, n, axis=-1)
        t_sol += time.perf_counter() - t0
        event = CorrectionEvent(step, step + m, triggered=fired)
        if truth is not None:
            event.eps_hi5_pre = _eps_hi5(states[step], truth.snapshots[step], floor)
            event.eps_hi5_post = _eps_hi5(out[-1], truth.snapshots[step + m], floor)
        states[step + 1:step + m + 1] = out
        provenance += ["solver"] * m
        n_sol += m
        step += m
        events.append(event)

    kept = states[:step + 1]
    traj = Trajectory(config.grid, kept, 0.0, config.delta, config, failure_step=failure)
    errors = rollout_l2_series(kept, truth.snapshots[:step + 1]) if truth is not None else None
    return HybridRecord(traj, provenance, schedule, events, trigger_steps, n_sur, n_sol,
                        t_sur, t_sol, errors, scale_selective)


def solver_reference(config: KsConfig, u0: PeriodicField, n_steps: int) -> Trajectory:
    """Solver-only run from ``u0`` (the ``K = 0`` limit of a hybrid schedule)."""
    out = solve_from(u0.values, config, n_steps)
    return Trajectory(config.grid, np.vstack([u0.values[None], out]), 0.0, config.delta, config)


def cost_sweep(params: SpectralOperatorParams, config: KsConfig, initial_states, truths,
               n_steps: int, Ks=(5, 10, 20, 40), Ms=(1, 2), cost_ratios=(1e-3, 1e-2, 1e-1)):
    """CSV-ready rows ``(K, M, cost_ratio, modeled_speedup, final_error)``; the
    final error is the median over the supplied trajectories."""
    header = ["K", "M", "cost_ratio", "modeled_speedup", "final_error"]
    rows = []
    for K in Ks:
        for M in Ms:
            sched = HybridSchedule(K, M)
            finals = [hybrid_rollout(params, config, sched, u, n_steps, tr).final_error
                      for u, tr in zip(initial_states, truths)]
            err = float(np.median(finals))
            for r in cost_ratios:
                rows.append([K, M, r, net_speedup(CostModel(r, 1.0), sched), err])
    return header, rows
