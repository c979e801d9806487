"""Experiment runners behind the command line.

Each runner takes the resolved config and its own output directory, writes
its artifacts there and returns ``(summary, timing)``.  ``summary`` lands in
``summary.json``; ``timing`` holds wall-clock measurements, which are kept in
the manifest so that every other output is a deterministic function of the
config and seed.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError
from .diagnostics import (DEFAULT_BANDS, band_energies, mean_power_spectrum, metrics_summary,
                          metrics_table, rollout_l2_series)
from .field import make_grid
from .hybrid import (CostModel, HybridSchedule, Trigger, attractor_trigger, cost_sweep,
                     hybrid_rollout, net_speedup)
from .ks import KsConfig, KsDataset, Trajectory, estimate_lyapunov, generate_dataset, solve_from
from .nn import DenseTanhRegressor, NetConfig
from .ntk import EmpiricalNTK, median_convergence_steps, run_spectral_bias_experiment
from .surrogate import (CoarseProjection, EnsembleSpec, SpectralOperatorConfig,
                        conditional_mean_demo, load_operator, rollout, save_operator,
                        train_operator)

logger = logging.getLogger(__name__)


def write_table(out: Path, stem: str, header, rows, fmt: str) -> Path:
    if fmt == "csv":
        path = out / f"{stem}.csv"
        io.write_csv(path, header, rows)
    else:
        path = out / f"{stem}.json"
        io.write_json(path, {"columns": list(header), "rows": rows})
    return path


def ks_config(cfg: dict) -> KsConfig:
    k = cfg["ks"]
    return KsConfig(grid=make_grid(k["n"], float(k["length"])), dt=float(k["dt"]),
                    snapshot_stride=k["snapshot_stride"], burn_in_time=float(k["burn_in_time"]),
                    seed=cfg["seed"], k_ic=k["k_ic"], ic_amplitude=float(k["ic_amplitude"]),
                    scheme=k["scheme"])


def operator_config(cfg: dict) -> SpectralOperatorConfig:
    s = cfg["surrogate"]
    return SpectralOperatorConfig(s["k_max"], s["width"], s["n_layers"], float(s["lr"]), s["steps"],
                                  s["batch_size"], cfg["seed"], s["residual"])


def _input_path(cfg: dict, root: Path, key: str, default: str) -> Path:
    given = cfg["inputs"][key]
    path = Path(given) if given else root / default
    if not path.exists():
        raise ConfigError(f"input artifact 'inputs.{key}' not found at {path}")
    return path


# ----------------------------------------------------------------- ntk lab


def run_ntk(cfg: dict, out: Path, root: Path):
    c = cfg["ntk"]
    grid = make_grid(c["n"], 1.0)
    est = EmpiricalNTK(tuple(c["hidden"]), float(c["init_scale"]), cfg["seed"], c["max_wavenumber"],
                       tuple(c["fit_range"]), c["phase"]).fit(grid.points)
    spec = est.spectrum_
    write_table(out, "spectrum", ["k", "eigenvalue"],
                [[int(k), float(v)] for k, v in zip(spec.wavenumbers, spec.eigenvalues)], cfg["format"])
    fit = spec.fit
    summary = {"alpha": fit.alpha, "intercept": fit.intercept, "r2": fit.r2,
               "fit_range": list(fit.k_range), "n": c["n"], "hidden": c["hidden"],
               "init_scale": c["init_scale"], "phase": c["phase"],
               "spectrum": [[int(k), float(v)] for k, v in zip(spec.wavenumbers, spec.eigenvalues)]}
    return summary, {}


def run_spectral_bias(cfg: dict, out: Path, root: Path):
    c, nc = cfg["spectral_bias"], cfg["ntk"]
    grid = make_grid(nc["n"], 1.0)
    results, timing = [], {}
    for i in range(c["n_seeds"]):
        seed = cfg["seed"] + i
        t0 = time.perf_counter()
        res = run_spectral_bias_experiment(
            NetConfig((1, *nc["hidden"], 1), init_scale=float(nc["init_scale"]), seed=seed), grid,
            float(c["lr"]), c["steps"], optimizer=c["optimizer"], threshold=float(c["threshold"]),
            fit_range=tuple(nc["fit_range"]), record_stride=c["record_stride"])
        timing[f"seed_{seed}"] = time.perf_counter() - t0
        header, rows = res.history.to_rows()
        write_table(out, f"history_seed{seed}", header, rows, cfg["format"])
        results.append(res)
    med = median_convergence_steps(results)
    t1 = med.get(1)
    lam = {k: float(np.median([r.spectrum.eigenvalue(k) for r in results])) for k in med}
    summary = {
        "seeds": [r.to_json() for r in results],
        "median_t_k": {str(k): v for k, v in med.items()},
        "median_observed_ratio": {str(k): (None if v is None or not t1 else v / t1) for k, v in med.items()},
        "median_theory_ratio": {str(k): lam[1] / lam[k] for k in med},
        "censored": sorted({k for r in results for k in r.censored}),
        "optimizer": c["optimizer"], "lr": c["lr"], "threshold": c["threshold"],
    }
    return summary, timing


# ------------------------------------------------------------------ ks data


def save_dataset(ds: KsDataset, out: Path) -> None:
    g = ds.config.grid
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(parents=True, exist_ok=True)
    for i, snaps in enumerate(ds.train_trajectories):
        io.write_trajectory(out / "train" / f"traj_{i:04d}.spg1", snaps, g.length, ds.delta)
    for i, tr in enumerate(ds.test_trajectories):
        io.write_trajectory(out / "test" / f"traj_{i:04d}.spg1", tr.snapshots, g.length, ds.delta)
    io.write_json(out / "dataset.json", ds.manifest())


def load_dataset(path: Path) -> KsDataset:
    meta = io.read_json(path / "dataset.json")
    c = meta["config"]
    config = KsConfig(grid=make_grid(c["n"], c["length"]), dt=c["dt"], snapshot_stride=c["snapshot_stride"],
                      burn_in_time=c["burn_in_time"], seed=c["seed"], k_ic=c["k_ic"],
                      ic_amplitude=c["ic_amplitude"], scheme=c["scheme"], nonlinear=c["nonlinear"])
    train = np.stack([io.read_trajectory(p)["snapshots"] for p in sorted((path / "train").glob("*.spg1"))]) \
        if meta["n_train"] else np.empty((0, 0, c["n"]))
    t0 = config.burn_in_time + config.delta
    tests = [Trajectory(config.grid, io.read_trajectory(p)["snapshots"], t0, config.delta, config)
             for p in sorted((path / "test").glob("*.spg1"))]
    inputs = train[:, :-1].reshape(-1, c["n"])
    targets = train[:, 1:].reshape(-1, c["n"])
    n_snap = train.shape[1] if meta["n_train"] else 0
    source = np.array([(i, j) for i in range(train.shape[0]) for j in range(n_snap - 1)], dtype=int)
    return KsDataset(config, inputs, targets, source.reshape(-1, 2), meta["train_seeds"],
                     meta["test_seeds"], train, tests, meta["horizon"])


def run_ks_dataset(cfg: dict, out: Path, root: Path):
    d = cfg["dataset"]
    t0 = time.perf_counter()
    ds = generate_dataset(ks_config(cfg), d["n_train"], d["n_test"], float(d["horizon"]))
    elapsed = time.perf_counter() - t0
    save_dataset(ds, out)
    snaps = ds.train_trajectories.reshape(-1, ds.config.grid.n)
    energies = band_energies(snaps).mean(axis=0)
    power = mean_power_spectrum(snaps)
    summary = dict(ds.manifest())
    summary["n_pairs"] = int(ds.inputs.shape[0])
    summary["band_energy_mean"] = {b.name: float(e) for b, e in zip(DEFAULT_BANDS, energies)}
    summary["mean_power_spectrum"] = power.tolist()
    summary["mean_energy"] = float(np.mean(snaps ** 2))
    n_steps = ds.train_trajectories.shape[1] * len(ds.train_seeds)
    return summary, {"generate_seconds": elapsed, "solver_seconds_per_snapshot": elapsed / max(n_steps, 1)}


# ----------------------------------------------------------------- surrogate


def run_train_surrogate(cfg: dict, out: Path, root: Path):
    ds = load_dataset(_input_path(cfg, root, "dataset", "ks_dataset"))
    params, hist = train_operator(operator_config(cfg), ds)
    save_operator(out / "operator.spgo", params)
    header, rows = hist.to_rows()
    write_table(out, "history", header, rows, cfg["format"])
    summary = {"held_out_rel_l2": hist.held_out_rel_l2, "held_out_source": hist.held_out_source,
               "final_loss": hist.losses[-1] if hist.losses else None, "n_pairs": hist.n_pairs,
               "config": dict(cfg["surrogate"]), "seed": cfg["seed"]}
    return summary, {"train_seconds": hist.wall_time,
                     "seconds_per_step": hist.wall_time / max(cfg["surrogate"]["steps"], 1)}


def _truth(tr: Trajectory, n_steps: int) -> Trajectory:
    return Trajectory(tr.grid, tr.snapshots[:n_steps + 1], 0.0, tr.dt_snapshot, tr.config)


def run_rollout_eval(cfg: dict, out: Path, root: Path):
    ds = load_dataset(_input_path(cfg, root, "dataset", "ks_dataset"))
    params = load_operator(_input_path(cfg, root, "operator", "train_surrogate/operator.spgo"))
    n_max = min(len(t) for t in ds.test_trajectories) - 1
    n_steps = cfg["rollout"]["n_steps"] or n_max
    if n_steps > n_max:
        raise ConfigError(f"config field 'rollout.n_steps'={n_steps} exceeds the test length {n_max}")

    timing = {}
    lam = None
    lyap_json = None
    if cfg["lyapunov"]["enabled"]:
        ly = cfg["lyapunov"]
        t0 = time.perf_counter()
        est = estimate_lyapunov(ds.config, float(ly["perturbation_size"]), ly["n_renorm"], float(ly["interval"]))
        timing["lyapunov_seconds"] = time.perf_counter() - t0
        lam = est.lambda1
        lyap_json = {"lambda1": est.lambda1, "doubling_time": est.doubling_time,
                     "fit_window": list(est.fit_window), "r2": est.r2,
                     "perturbation_size": est.perturbation_size, "retries": est.retries,
                     "seed": ds.config.seed}
        io.write_json(out / "lyapunov.json", lyap_json)

    per_traj, sur_time, sol_time = [], 0.0, 0.0
    for i, tr in enumerate(ds.test_trajectories):
        truth = _truth(tr, n_steps)
        t0 = time.perf_counter()
        pred = rollout(params, truth.fields[0], n_steps, dt_snapshot=ds.delta)
        sur_time += time.perf_counter() - t0
        t0 = time.perf_counter()
        solve_from(truth.snapshots[0], ds.config, n_steps)
        sol_time += time.perf_counter() - t0
        io.write_trajectory(out / f"rollout_{i:04d}.spg1", pred.snapshots, tr.grid.length, ds.delta)
        if pred.failure_step is not None:
            per_traj.append({"index": i, "failure_step": pred.failure_step})
            continue
        header, rows = metrics_table(pred, truth)
        write_table(out, f"metrics_{i:04d}", header, rows, cfg["format"])
        s = metrics_summary(pred, truth, lam)
        s["index"] = i
        s["failure_step"] = None
        s["one_step_rel_l2"] = float(rollout_l2_series(pred, truth)[1])
        per_traj.append(s)

    n_total = n_steps * len(ds.test_trajectories)
    timing.update(surrogate_seconds_per_step=sur_time / n_total, solver_seconds_per_step=sol_time / n_total)
    ok = [s for s in per_traj if s.get("failure_step") is None]
    summary = {
        "n_steps": n_steps, "delta": ds.delta, "horizon_time": n_steps * ds.delta,
        "lyapunov": lyap_json, "trajectories": per_traj,
        "band_mean_over_trajectories": {b.name: float(np.mean([s["bands"][b.name]["mean"] for s in ok]))
                                        for b in DEFAULT_BANDS} if ok else None,
    }
    fits = [s["growth_fit"] for s in ok if "growth_fit" in s and s["growth_fit"]["status"] == "ok"]
    if lam is not None:
        ratios = [f["excess_ratio"] for f in fits]
        summary["growth_ratio_median"] = float(np.median(ratios)) if len(fits) == len(ok) and ok else None
    return summary, timing


def run_conditional_mean(cfg: dict, out: Path, root: Path):
    c = cfg["conditional_mean"]
    spec = EnsembleSpec(c["n"], c["n_conditions"], c["members_per_condition"], c["kind"],
                        sigma=float(c["sigma"]), seed=cfg["seed"])
    reg = DenseTanhRegressor(hidden_layer_sizes=tuple(c["hidden"]), learning_rate=float(c["lr"]),
                             n_steps=c["steps"], random_state=cfg["seed"])
    rec = conditional_mean_demo(spec, CoarseProjection(c["k_c"]), reg)
    n_k = rec.prediction_power.shape[1]
    rows = [[k, float(rec.prediction_power[:, k].max()), float(rec.member_min_power[:, k].min()),
             float(rec.member_mean_power[:, k].mean())] for k in range(n_k)]
    write_table(out, "spectra", ["k", "prediction_power_max", "member_power_min", "member_power_mean"],
                rows, cfg["format"])
    return rec.to_json(), {}


# -------------------------------------------------------------------- hybrid


def run_hybrid(cfg: dict, out: Path, root: Path):
    h = cfg["hybrid"]
    ds = load_dataset(_input_path(cfg, root, "dataset", "ks_dataset"))
    params = load_operator(_input_path(cfg, root, "operator", "train_surrogate/operator.spgo"))
    n_steps = h["n_steps"]
    trigger = None
    if h["policy"] == "adaptive":
        if h["trigger_metric"] == "dissipation_band_energy":
            trigger = attractor_trigger(ds.train_trajectories, float(h["trigger_factor"]))
        else:
            trigger = Trigger("residual_norm", float(h["trigger_factor"]))
    sched = HybridSchedule(h["K"], h["M"], h["policy"], trigger)
    cost = CostModel(float(h["cost_ratio"]), 1.0)
    records, pure = [], []
    timing = {"surrogate_seconds": 0.0, "solver_seconds": 0.0}
    for i, tr in enumerate(ds.test_trajectories):
        truth = _truth(tr, n_steps)
        rec = hybrid_rollout(params, ds.config, sched, truth.fields[0], n_steps, truth,
                             scale_selective=h["scale_selective"], k_split=h["k_split"])
        io.write_trajectory(out / f"hybrid_{i:04d}.spg1", rec.trajectory.snapshots, tr.grid.length, ds.delta)
        pred = rollout(params, truth.fields[0], n_steps, dt_snapshot=ds.delta)
        pure_err = float(rollout_l2_series(pred, truth)[-1]) if pred.failure_step is None else None
        timing["surrogate_seconds"] += rec.surrogate_seconds
        timing["solver_seconds"] += rec.solver_seconds
        j = rec.to_json(cost)
        j.pop("surrogate_seconds")
        j.pop("solver_seconds")
        j["pure_surrogate_final_error"] = pure_err
        records.append(j)
        pure.append(pure_err)
    header, rows = cost_sweep(params, ds.config, [t.fields[0] for t in ds.test_trajectories],
                              [_truth(t, n_steps) for t in ds.test_trajectories], n_steps,
                              tuple(h["sweep_K"]), tuple(h["sweep_M"]), tuple(h["sweep_ratios"]))
    write_table(out, "cost_sweep", header, rows, cfg["format"])
    finals = [r["final_error"] for r in records]
    summary = {
        "schedule": records[0]["schedule"] if records else None,
        "n_steps": n_steps,
        "records": records,
        "median_final_error": float(np.median(finals)) if finals else None,
        "median_pure_surrogate_error": float(np.median(pure)) if pure and None not in pure else None,
        "net_speedup": net_speedup(cost, sched) if sched.policy == "fixed_period" else None,
        "cost_ratio": cost.c_surrogate / cost.c_solver,
        "quench_every_event": all(r["quench_holds"] for r in records if r["quench_holds"] is not None),
        "cost_sweep": {"columns": header, "rows": rows},
    }
    return summary, timing
