"""Four-part report bundle assembled from earlier experiment artifacts.

Sections: (1) problem characterisation, (2) evaluation horizon in physical
units, (3) scale-aware metrics, (4) cost curve.  A section whose inputs are
missing is kept and marked ``not_applicable`` (or ``modeled_only`` for the
cost curve) with a reason.
"""

from __future__ import annotations

import json
import logging
from importlib import resources
from pathlib import Path

import jsonschema
import matplotlib
import matplotlib.pyplot as plt
import numpy as np

from . import io
from .diagnostics import DEFAULT_BANDS, band_error_series, mean_power_spectrum, rollout_l2_series
from .hybrid import CostModel, HybridSchedule, net_speedup

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
# Energy-containing vs. dissipation scale: the peak of the mean spectrum and
# the last mode within this many decades of it.
SEPARATION_DECADES = 6.0


class MissingInputsError(FileNotFoundError):
    def __init__(self, missing: list[str]):
        super().__init__("missing report inputs: " + ", ".join(missing))
        self.missing = missing


def load_schema() -> dict:
    text = resources.files("spectra_gauntlet").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)


def validate_report(bundle: dict) -> None:
    jsonschema.validate(bundle, load_schema())


def _svg(fig, path: Path) -> None:
    matplotlib.rcParams["svg.hashsalt"] = "spectra-gauntlet"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def scale_separation(power: np.ndarray, decades: float = SEPARATION_DECADES) -> dict:
    p = np.asarray(power, dtype=np.float64)
    k_lo = int(np.argmax(p[1:]) + 1)
    keep = np.flatnonzero(p[1:] >= p[k_lo] * 10.0 ** (-decades)) + 1
    k_hi = int(keep.max())
    return {"k_lo": k_lo, "k_hi": k_hi, "ratio": k_hi / k_lo, "decades": decades}


def _read_optional(path: Path):
    return io.read_json(path) if path.is_file() else None


def emit_report(dataset_dir: Path, rollout_dir: Path, out: Path, hybrid_dir: Path | None = None,
                lyapunov_path: Path | None = None) -> dict:
    """Write ``report.json``, ``report.txt`` and SVG plots into ``out``."""
    from .experiments import load_dataset

    missing = []
    if not (dataset_dir / "dataset.json").is_file():
        missing.append(f"ks_dataset artifact ({dataset_dir / 'dataset.json'})")
    if not (rollout_dir / "summary.json").is_file():
        missing.append(f"rollout_eval artifact ({rollout_dir / 'summary.json'})")
    if missing:
        raise MissingInputsError(missing)

    ds = load_dataset(dataset_dir)
    ro = io.read_json(rollout_dir / "summary.json")
    ro_timing = (_read_optional(rollout_dir / "manifest.json") or {}).get("timing", {})
    lyap = ro.get("lyapunov")
    if lyapunov_path is not None and lyapunov_path.is_file():
        lyap = io.read_json(lyapunov_path)
    hybrid = _read_optional(hybrid_dir / "summary.json") if hybrid_dir is not None else None

    grid = ds.config.grid
    power = mean_power_spectrum(ds.train_trajectories.reshape(-1, grid.n)) \
        if ds.train_trajectories.size else mean_power_spectrum(np.concatenate([t.snapshots for t in ds.test_trajectories]))
    problem = {"status": "present", "grid": {"n": grid.n, "length": grid.length},
               "scale_separation": scale_separation(power),
               "lyapunov": None if lyap is None else {"lambda1": lyap["lambda1"],
                                                      "doubling_time": lyap["doubling_time"]}}
    if lyap is None:
        problem["reason"] = "no Lyapunov estimate was produced"

    n_steps, delta = int(ro["n_steps"]), float(ro["delta"])
    horizon = {"status": "present", "n_steps": n_steps, "delta": delta, "time": n_steps * delta,
               "lyapunov_times": None if lyap is None else n_steps * delta * lyap["lambda1"]}
    if lyap is not None:
        horizon["lyapunov_time"] = 1.0 / lyap["lambda1"]
        # independent route through the stored doubling time
        horizon["lyapunov_times_from_doubling"] = n_steps * delta * np.log(2.0) / lyap["doubling_time"]

    # recompute series from the stored rollouts for the plots
    l2_curves, eps_maps, pred_power = [], [], []
    for i, tr in enumerate(ds.test_trajectories):
        path = rollout_dir / f"rollout_{i:04d}.spg1"
        if not path.is_file():
            continue
        pred = io.read_trajectory(path)["snapshots"]
        truth = tr.snapshots[:pred.shape[0]]
        l2_curves.append(rollout_l2_series(pred, truth))
        eps_maps.append(np.stack([s.epsilon for s in band_error_series(pred, truth)]))
        pred_power.append(mean_power_spectrum(pred))

    ok = [t for t in ro["trajectories"] if t.get("failure_step") is None]
    if ok:
        bands = {b.name: {"k_lo": b.k_lo, "k_hi": b.k_hi,
                          "mean": float(np.mean([t["bands"][b.name]["mean"] for t in ok])),
                          "final": float(np.mean([t["bands"][b.name]["final"] for t in ok]))}
                 for b in DEFAULT_BANDS}
        metrics = {"status": "present", "bands": bands,
                   "h1": {"mean": float(np.mean([t["h1"]["mean"] for t in ok])),
                          "final": float(np.mean([t["h1"]["final"] for t in ok]))},
                   "qoi": {k: float(np.mean([t["qoi"][k] for t in ok])) for k in ok[0]["qoi"]},
                   "l2": {"mean": float(np.mean([t["l2"]["mean"] for t in ok])),
                          "final": float(np.mean([t["l2"]["final"] for t in ok]))},
                   "growth_fits": [t.get("growth_fit") for t in ok]}
    else:
        metrics = {"status": "not_applicable", "reason": "every rollout failed before the horizon"}

    sur_s = ro_timing.get("surrogate_seconds_per_step")
    sol_s = ro_timing.get("solver_seconds_per_step")
    if hybrid is not None:
        curve = [{"K": int(r[0]), "M": int(r[1]), "cost_ratio": float(r[2]), "modeled_speedup": float(r[3]),
                  "final_error": float(r[4])} for r in hybrid["cost_sweep"]["rows"]]
        cost = {"status": "present", "net_speedup": hybrid.get("net_speedup"), "curve": curve,
                "hybrid_median_final_error": hybrid.get("median_final_error"),
                "pure_surrogate_median_final_error": hybrid.get("median_pure_surrogate_error")}
    else:
        ratios = [1e-3] + ([sur_s / sol_s] if sur_s and sol_s else [])
        curve = [{"K": K, "M": 2, "cost_ratio": r,
                  "modeled_speedup": net_speedup(CostModel(r, 1.0), HybridSchedule(K, 2)),
                  "final_error": None} for r in ratios for K in (5, 10, 20, 40)]
        cost = {"status": "modeled_only", "reason": "no hybrid artifact; errors at matched cost unavailable",
                "net_speedup": net_speedup(CostModel(1e-3, 1.0), HybridSchedule(10, 2)), "curve": curve}
    cost["surrogate_seconds_per_step"] = sur_s
    cost["solver_seconds_per_step"] = sol_s
    if sur_s and sol_s:
        cost["measured_cost_ratio"] = sur_s / sol_s

    bundle = {"schema_version": SCHEMA_VERSION,
              "inputs": {"dataset": str(dataset_dir), "rollout": str(rollout_dir),
                         "hybrid": None if hybrid is None else str(hybrid_dir)},
              "problem": problem, "horizon": horizon, "metrics": metrics, "cost": cost}
    validate_report(bundle)

    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "report.json", bundle)
    (out / "report.txt").write_text(render_text(bundle))
    _plots(out, ds, l2_curves, eps_maps, power, pred_power, curve)
    return bundle


def render_text(b: dict) -> str:
    lines = ["spectra-gauntlet report", ""]
    p = b["problem"]
    lines.append("1. Problem characterisation")
    lines.append(f"   grid: n={p['grid']['n']}, L={p['grid']['length']:g}")
    s = p["scale_separation"]
    lines.append(f"   scale separation: k_hi/k_lo = {s['k_hi']}/{s['k_lo']} = {s['ratio']:.2f} "
                 f"({s['decades']:g} decades of spectral power)")
    if p["lyapunov"]:
        lines.append(f"   lambda1 = {p['lyapunov']['lambda1']:.4f}, doubling time = "
                     f"{p['lyapunov']['doubling_time']:.2f}")
    else:
        lines.append(f"   lambda1: not available ({p.get('reason', '')})")
    h = b["horizon"]
    lines += ["", "2. Horizon",
              f"   {h['n_steps']} steps x {h['delta']:g} = {h['time']:g} time units"
              + (f" = {h['lyapunov_times']:.2f} Lyapunov times" if h["lyapunov_times"] is not None else "")]
    m = b["metrics"]
    lines += ["", "3. Scale-aware metrics"]
    if m["status"] == "present":
        lines.append("   band      k-range     mean eps     final eps")
        for name, v in m["bands"].items():
            lines.append(f"   {name:<8}  [{v['k_lo']:>3},{v['k_hi']:>3}]  {v['mean']:11.3e}  {v['final']:11.3e}")
        lines.append(f"   H1 error mean {m['h1']['mean']:.3e}, final {m['h1']['final']:.3e}")
        lines.append(f"   relative L2 mean {m['l2']['mean']:.3e}, final {m['l2']['final']:.3e}")
        for k, v in m["qoi"].items():
            lines.append(f"   {k}: {v:.3e}")
    else:
        lines.append(f"   not applicable: {m['reason']}")
    c = b["cost"]
    lines += ["", "4. Cost curve", f"   status: {c['status']}" + (f" ({c['reason']})" if "reason" in c else "")]
    if c.get("surrogate_seconds_per_step") and c.get("solver_seconds_per_step"):
        lines.append(f"   wall clock per step: surrogate {c['surrogate_seconds_per_step']:.3e} s, "
                     f"solver {c['solver_seconds_per_step']:.3e} s")
    for r in c["curve"]:
        err = "n/a" if r["final_error"] is None else f"{r['final_error']:.3e}"
        lines.append(f"   K={r['K']:<3} M={r['M']:<2} C_N/C_F={r['cost_ratio']:.1e}  "
                     f"speedup={r['modeled_speedup']:.3f}  final L2={err}")
    return "\n".join(lines) + "\n"


def _plots(out: Path, ds, l2_curves, eps_maps, power, pred_power, curve) -> None:
    delta = ds.delta
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, l2 in enumerate(l2_curves):
        ax.semilogy(delta * np.arange(l2.size)[1:], l2[1:], label=f"test {i}")
    ax.set_xlabel("t")
    ax.set_ylabel("relative L2 error")
    if l2_curves:
        ax.legend()
    _svg(fig, out / "l2.svg")

    if eps_maps:
        mean_eps = np.mean(eps_maps, axis=0)
        names = [b.name for b in DEFAULT_BANDS]
        rows = [[float(delta * j)] + [float(v) for v in mean_eps[:, j]] for j in range(mean_eps.shape[1])]
        io.write_csv(out / "band_error_heatmap.csv", ["t"] + names, rows)
        fig, ax = plt.subplots(figsize=(7, 3.5))
        im = ax.imshow(np.log10(mean_eps + 1e-300), aspect="auto", origin="lower",
                       extent=(0, delta * (mean_eps.shape[1] - 1), -0.5, len(names) - 0.5))
        ax.set_yticks(range(len(names)), names)
        ax.set_xlabel("t")
        fig.colorbar(im, label="log10 eps_B")
        _svg(fig, out / "band_error_heatmap.svg")

    fig, ax = plt.subplots(figsize=(6, 4))
    k = np.arange(1, power.size)
    ax.loglog(k, power[1:], label="reference")
    for i, p in enumerate(pred_power):
        ax.loglog(k, p[1:], "--", label=f"rollout {i}")
    ax.set_xlabel("k")
    ax.set_ylabel("mean power")
    ax.legend()
    _svg(fig, out / "spectra.svg")

    fig, ax = plt.subplots(figsize=(6, 4))
    for ratio in sorted({r["cost_ratio"] for r in curve}):
        sel = [r for r in curve if r["cost_ratio"] == ratio and r["M"] == max(c["M"] for c in curve)]
        ax.plot([r["K"] for r in sel], [r["modeled_speedup"] for r in sel], "o-", label=f"C_N/C_F={ratio:.0e}")
    ax.set_xlabel("K (surrogate steps per cycle)")
    ax.set_ylabel("modeled speedup")
    ax.legend()
    _svg(fig, out / "cost_curve.svg")
