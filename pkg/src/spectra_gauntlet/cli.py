"""``spectra-gauntlet <experiment> --config <path> [--out <dir>] [--seed <n>] [--format csv|json]``."""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
import traceback
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, io
from .config import EXPERIMENTS, FORMATS, OUTPUT_ENV, ConfigError, config_hash, default_output_root, load_config

logger = logging.getLogger("spectra_gauntlet")

FAILURE_MARKER = "FAILED"


def _versions() -> dict:
    import scipy
    import sklearn
    import torch

    return {"spectra_gauntlet": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "scikit-learn": sklearn.__version__,
            "torch": torch.__version__}


def write_manifest(out: Path, experiment: str, cfg: dict, timing: dict, started: float) -> None:
    files = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[str(path.relative_to(out))] = io.sha256_file(path)
    io.write_json(out / "manifest.json", {
        "experiment": experiment,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": cfg["seed"],
        "versions": _versions(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "elapsed_seconds": time.perf_counter() - started,
        "timing": timing,
        "files": files,
    })


# ------------------------------------------------------------------- convert


def convert(path: Path, fmt: str, out: Path) -> Path:
    """Lossless conversion of a stored artifact.

    * SPG1 trajectory -> CSV or JSON; a CSV written this way converts back to SPG1.
    * SPGO / SPGN checkpoints -> JSON.
    * spectrum JSON (``ntk`` output) -> CSV.
    """
    out.mkdir(parents=True, exist_ok=True)
    magic = io.read_magic(path)
    stem = path.stem
    if magic == io.TRAJ_MAGIC:
        tr = io.read_trajectory(path)
        if fmt == "csv":
            dest = out / f"{stem}.csv"
            io.write_trajectory_csv(dest, tr["snapshots"], tr["length"], tr["dt_snapshot"])
        else:
            dest = out / f"{stem}.json"
            io.write_json(dest, tr)
        return dest
    if magic == io.OP_MAGIC:
        from .surrogate import load_operator

        p = load_operator(path)
        dest = out / f"{stem}.json"
        io.write_json(dest, {"k_max": p.k_max, "width": p.width, "n_layers": p.n_layers, "n": p.n,
                             "residual": p.residual, "lift_w": p.lift_w, "lift_b": p.lift_b,
                             "spec_w_real": [w.real for w in p.spec_w],
                             "spec_w_imag": [w.imag for w in p.spec_w],
                             "pw_w": p.pw_w, "pw_b": p.pw_b, "proj_w": p.proj_w, "proj_b": p.proj_b})
        return dest
    if magic == io.NET_MAGIC:
        sizes, weights, biases = io.read_network(path)
        dest = out / f"{stem}.json"
        io.write_json(dest, {"layer_sizes": sizes, "weights": weights, "biases": biases})
        return dest
    text_head = path.read_bytes()[:64]
    if text_head.startswith(b"# SPG1"):
        tr = io.read_trajectory_csv(path)
        dest = out / f"{stem}.spg1"
        io.write_trajectory(dest, tr["snapshots"], tr["length"], tr["dt_snapshot"])
        return dest
    if text_head.lstrip().startswith(b"{"):
        data = json.loads(path.read_text())
        if "spectrum" in data:
            dest = out / f"{stem}_spectrum.csv"
            io.write_csv(dest, ["k", "eigenvalue"], [[int(k), float(v)] for k, v in data["spectrum"]])
            return dest
        if data.get("columns") and "rows" in data:
            dest = out / f"{stem}.csv"
            io.write_csv(dest, data["columns"], data["rows"])
            return dest
    raise io.ArtifactFormatError(f"{path}: unrecognised artifact (magic {magic!r})")


# ----------------------------------------------------------------------- run


def run(experiment: str, cfg: dict, root: Path) -> int:
    from . import experiments as ex
    from .report import emit_report

    out = root / experiment
    out.mkdir(parents=True, exist_ok=True)
    marker = out / FAILURE_MARKER
    if marker.exists():
        marker.unlink()
    started = time.perf_counter()
    runners = {
        "ntk": ex.run_ntk, "spectral_bias": ex.run_spectral_bias, "ks_dataset": ex.run_ks_dataset,
        "train_surrogate": ex.run_train_surrogate, "rollout_eval": ex.run_rollout_eval,
        "conditional_mean": ex.run_conditional_mean, "hybrid": ex.run_hybrid,
    }
    try:
        if experiment == "report":
            inp = cfg["inputs"]
            dataset = Path(inp["dataset"]) if inp["dataset"] else root / "ks_dataset"
            rollout_dir = Path(inp["rollout"]) if inp["rollout"] else root / "rollout_eval"
            hybrid_dir = Path(inp["hybrid"]) if inp["hybrid"] else root / "hybrid"
            lyap = Path(inp["lyapunov"]) if inp["lyapunov"] else None
            emit_report(dataset, rollout_dir, out, hybrid_dir, lyap)
            timing = {}
        elif experiment == "convert":
            src = cfg["convert"]["input"]
            if not src:
                raise ConfigError("config field 'convert.input' is required for convert")
            dest = convert(Path(src), cfg["format"], out)
            io.write_json(out / "summary.json", {"input": str(src), "output": dest.name,
                                                 "format": cfg["format"]})
            timing = {}
        else:
            summary, timing = runners[experiment](cfg, out, root)
            io.write_json(out / "summary.json", summary)
    except Exception as exc:
        marker.write_text(f"{type(exc).__name__}: {exc}\n\n{traceback.format_exc()}")
        logger.error("%s failed: %s (partial outputs in %s)", experiment, exc, out)
        return 1
    write_manifest(out, experiment, cfg, timing, started)
    logger.info("%s finished; outputs in %s", experiment, out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectra-gauntlet", description=__doc__)
    p.add_argument("experiment", help="one of: " + ", ".join(EXPERIMENTS))
    p.add_argument("--config", required=True, help="YAML configuration file")
    p.add_argument("--out", help=f"output root (default: ${OUTPUT_ENV} or ./spectra_gauntlet_runs)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--format", choices=FORMATS, help="table format (default from config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.experiment not in EXPERIMENTS:
        parser.print_usage(sys.stderr)
        print(f"spectra-gauntlet: error: unknown experiment {args.experiment!r} "
              f"(choose from {', '.join(EXPERIMENTS)})", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, experiment=args.experiment, seed=args.seed, fmt=args.format)
    except ConfigError as exc:
        print(f"spectra-gauntlet: invalid config: {exc}", file=sys.stderr)
        return 2
    root = Path(args.out) if args.out else default_output_root()
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"spectra-gauntlet: output directory {root} is not writable: {exc}", file=sys.stderr)
        return 2
    return run(args.experiment, cfg, root)


if __name__ == "__main__":
    sys.exit(main())
