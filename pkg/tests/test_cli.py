import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from spectra_gauntlet import io
from spectra_gauntlet.cli import FAILURE_MARKER, convert, main
from spectra_gauntlet.config import DEFAULTS, OUTPUT_ENV, ConfigError, config_hash, default_output_root, load_config
from spectra_gauntlet.report import MissingInputsError, emit_report, load_schema, scale_separation, validate_report

TINY = {
    "seed": 5,
    "ntk": {"n": 64, "hidden": [16, 16], "max_wavenumber": 16, "fit_range": [1, 16]},
    "spectral_bias": {"n_seeds": 2, "steps": 40, "record_stride": 10},
    "ks": {"burn_in_time": 20.0},
    "dataset": {"n_train": 2, "n_test": 2, "horizon": 6.0},
    "surrogate": {"k_max": 16, "width": 6, "n_layers": 2, "steps": 30, "batch_size": 8},
    "rollout": {"n_steps": 12},
    "lyapunov": {"n_renorm": 30},
    "conditional_mean": {"n": 32, "k_c": 4, "n_conditions": 2, "members_per_condition": 100,
                         "hidden": [8], "steps": 50},
    "hybrid": {"K": 4, "M": 1, "n_steps": 12, "sweep_K": [2, 4], "sweep_M": [1], "sweep_ratios": [1e-3]},
}


def write_config(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return path


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """Run the whole chain once on tiny settings."""
    root = tmp_path_factory.mktemp("runs")
    cfg = write_config(root / "tiny.yaml", TINY)
    codes = {}
    for exp in ("ks_dataset", "train_surrogate", "rollout_eval", "hybrid", "report"):
        codes[exp] = main([exp, "--config", str(cfg), "--out", str(root)])
    return root, cfg, codes


class TestConfig:
    def test_defaults_merge(self, tmp_path):
        cfg = load_config(write_config(tmp_path / "c.yaml", {"hybrid": {"K": 7}}))
        assert cfg["hybrid"]["K"] == 7 and cfg["hybrid"]["M"] == DEFAULTS["hybrid"]["M"]

    def test_unknown_key_names_path(self, tmp_path):
        with pytest.raises(ConfigError, match="hybrid.KK"):
            load_config(write_config(tmp_path / "c.yaml", {"hybrid": {"KK": 7}}))

    def test_type_errors_name_field(self, tmp_path):
        with pytest.raises(ConfigError, match="surrogate.width"):
            load_config(write_config(tmp_path / "c.yaml", {"surrogate": {"width": "wide"}}))
        with pytest.raises(ConfigError, match="hybrid.K"):
            load_config(write_config(tmp_path / "c.yaml", {"hybrid": {"K": 0}}))
        with pytest.raises(ConfigError, match="format"):
            load_config(write_config(tmp_path / "c.yaml", {"format": "xml"}))

    def test_exponent_without_dot(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("surrogate:\n  lr: 1e-3\n")
        assert load_config(p)["surrogate"]["lr"] == 1e-3

    def test_overrides_and_experiment_key(self, tmp_path):
        p = write_config(tmp_path / "c.yaml", {"experiment": "ntk", "seed": 1})
        cfg = load_config(p, experiment="ntk", seed=9, fmt="csv")
        assert cfg["seed"] == 9 and cfg["format"] == "csv"
        with pytest.raises(ConfigError, match="experiment"):
            load_config(p, experiment="hybrid")

    def test_bad_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")
        (tmp_path / "bad.yaml").write_text("a: [1, 2\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.yaml")
        (tmp_path / "list.yaml").write_text("- 1\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "list.yaml")

    def test_hash_and_output_root(self, monkeypatch):
        assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
        monkeypatch.setenv(OUTPUT_ENV, "/tmp/elsewhere")
        assert str(default_output_root()) == "/tmp/elsewhere"
        monkeypatch.delenv(OUTPUT_ENV)
        assert str(default_output_root()) == "spectra_gauntlet_runs"

    def test_shipped_configs_load(self):
        configs = sorted((Path(__file__).parents[1] / "configs").glob("*.yaml"))
        assert configs
        for path in configs:
            load_config(path)


class TestCommandLine:
    def test_unknown_experiment(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.yaml", {})
        assert main(["warp_drive", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "unknown experiment" in capsys.readouterr().err

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.yaml", {"nope": 1})
        assert main(["ntk", "--config", str(cfg), "--out", str(tmp_path)]) == 2
        assert "nope" in capsys.readouterr().err

    def test_env_var_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "envroot"))
        cfg = write_config(tmp_path / "c.yaml", TINY)
        assert main(["ntk", "--config", str(cfg)]) == 0
        assert (tmp_path / "envroot" / "ntk" / "summary.json").is_file()

    def test_ntk_csv_and_reproducible(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml", TINY)
        for sub in ("a", "b"):
            assert main(["ntk", "--config", str(cfg), "--out", str(tmp_path / sub), "--format", "csv"]) == 0
        a = (tmp_path / "a" / "ntk" / "spectrum.csv").read_bytes()
        assert a == (tmp_path / "b" / "ntk" / "spectrum.csv").read_bytes()
        assert a.startswith(b"k,eigenvalue")
        assert io.read_json(tmp_path / "a" / "ntk" / "summary.json") == \
            io.read_json(tmp_path / "b" / "ntk" / "summary.json")

    def test_spectral_bias_and_conditional_mean(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml", TINY)
        assert main(["spectral_bias", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        s = io.read_json(tmp_path / "spectral_bias" / "summary.json")
        assert [r["seed"] for r in s["seeds"]] == [5, 6]
        assert s["median_theory_ratio"]["1"] == 1.0
        assert main(["conditional_mean", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        cm = io.read_json(tmp_path / "conditional_mean" / "summary.json")
        assert cm["kind"] == "two_pattern" and len(cm["relative_l2"]) == 2

    def test_failure_marker(self, tmp_path):
        cfg = write_config(tmp_path / "c.yaml", {"inputs": {"dataset": str(tmp_path / "nowhere")}})
        assert main(["train_surrogate", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        marker = tmp_path / "train_surrogate" / FAILURE_MARKER
        assert "inputs.dataset" in marker.read_text()

    def test_console_script_help(self):
        out = subprocess.run([sys.executable, "-m", "spectra_gauntlet.cli", "--help"], capture_output=True,
                             text=True, env={**os.environ})
        assert out.returncode == 0 and "--config" in out.stdout


class TestPipeline:
    def test_exit_codes(self, pipeline):
        _, _, codes = pipeline
        assert all(c == 0 for c in codes.values()), codes

    def test_manifest_hashes(self, pipeline):
        root = pipeline[0]
        for exp in ("ks_dataset", "train_surrogate", "rollout_eval", "hybrid", "report"):
            m = io.read_json(root / exp / "manifest.json")
            files = {p.relative_to(root / exp).as_posix() for p in (root / exp).rglob("*")
                     if p.is_file() and p.name != "manifest.json"}
            assert set(m["files"]) == files
            for name, digest in m["files"].items():
                assert io.sha256_file(root / exp / name) == digest
            assert m["seed"] == 5 and len(m["config_sha256"]) == 64

    def test_dataset_layout(self, pipeline):
        root = pipeline[0]
        assert len(list((root / "ks_dataset" / "train").glob("*.spg1"))) == 2
        tr = io.read_trajectory(root / "ks_dataset" / "test" / "traj_0000.spg1")
        assert tr["n"] == 256 and tr["dt_snapshot"] == 0.25

    def test_rollout_summary(self, pipeline):
        s = io.read_json(pipeline[0] / "rollout_eval" / "summary.json")
        assert s["n_steps"] == 12 and len(s["trajectories"]) == 2
        assert set(s["band_mean_over_trajectories"]) == {"low", "mid", "hi1", "hi2", "hi3", "hi4", "hi5"}
        assert s["lyapunov"]["lambda1"] > 0

    def test_hybrid_summary(self, pipeline):
        s = io.read_json(pipeline[0] / "hybrid" / "summary.json")
        assert s["net_speedup"] == pytest.approx(5 / (4e-3 + 1))
        assert len(s["cost_sweep"]["rows"]) == 2

    def test_report(self, pipeline):
        out = pipeline[0] / "report"
        bundle = io.read_json(out / "report.json")
        validate_report(bundle)
        assert bundle["cost"]["status"] == "present"
        assert bundle["horizon"]["lyapunov_times"] == pytest.approx(bundle["horizon"]["lyapunov_times_from_doubling"])
        for name in ("l2.svg", "band_error_heatmap.svg", "spectra.svg", "cost_curve.svg", "report.txt"):
            assert (out / name).is_file()
        assert (out / "l2.svg").read_text().lstrip().startswith("<?xml")

    def test_report_deterministic(self, pipeline, tmp_path):
        root = pipeline[0]
        emit_report(root / "ks_dataset", root / "rollout_eval", tmp_path, root / "hybrid")
        for name in ("report.json", "l2.svg", "spectra.svg"):
            assert (tmp_path / name).read_bytes() == (root / "report" / name).read_bytes()

    def test_report_without_hybrid(self, pipeline, tmp_path):
        root = pipeline[0]
        b = emit_report(root / "ks_dataset", root / "rollout_eval", tmp_path, tmp_path / "none")
        assert b["cost"]["status"] == "modeled_only" and b["cost"]["reason"]

    def test_report_missing_inputs(self, tmp_path):
        with pytest.raises(MissingInputsError) as info:
            emit_report(tmp_path / "a", tmp_path / "b", tmp_path / "out")
        assert len(info.value.missing) == 2

    def test_rerun_reproduces_outputs(self, pipeline, tmp_path):
        root, cfg, _ = pipeline
        for exp in ("ks_dataset", "train_surrogate"):
            assert main([exp, "--config", str(cfg), "--out", str(tmp_path)]) == 0
        for rel in ("ks_dataset/test/traj_0001.spg1", "train_surrogate/operator.spgo"):
            assert (tmp_path / rel).read_bytes() == (root / rel).read_bytes()


class TestConvert:
    def test_trajectory_roundtrip(self, pipeline, tmp_path):
        src = pipeline[0] / "ks_dataset" / "test" / "traj_0000.spg1"
        csv_path = convert(src, "csv", tmp_path / "a")
        back = convert(csv_path, "csv", tmp_path / "b")
        assert back.read_bytes() == src.read_bytes()
        as_json = convert(src, "json", tmp_path / "c")
        data = json.loads(as_json.read_text())
        np.testing.assert_array_equal(np.array(data["snapshots"]), io.read_trajectory(src)["snapshots"])

    def test_operator_to_json(self, pipeline, tmp_path):
        dest = convert(pipeline[0] / "train_surrogate" / "operator.spgo", "json", tmp_path)
        data = json.loads(dest.read_text())
        assert data["k_max"] == 16 and data["width"] == 6

    def test_table_json_to_csv(self, pipeline, tmp_path):
        dest = convert(pipeline[0] / "train_surrogate" / "history.json", "csv", tmp_path)
        assert dest.read_text().startswith("step,")

    def test_unrecognised(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"\x00\x01junk")
        with pytest.raises(io.ArtifactFormatError):
            convert(p, "csv", tmp_path / "o")

    def test_via_cli(self, pipeline, tmp_path):
        src = pipeline[0] / "ks_dataset" / "test" / "traj_0000.spg1"
        cfg = write_config(tmp_path / "c.yaml", {"convert": {"input": str(src)}})
        assert main(["convert", "--config", str(cfg), "--out", str(tmp_path), "--format", "csv"]) == 0
        assert (tmp_path / "convert" / "traj_0000.csv").is_file()


class TestSchema:
    def test_schema_rejects_missing_section(self):
        schema = load_schema()
        assert "cost" in schema["required"]
        with pytest.raises(Exception):
            validate_report({"schema_version": "1.0"})

    def test_scale_separation(self):
        p = np.array([0.0, 1.0, 10.0, 1.0, 1e-3, 1e-5, 1e-6])
        s = scale_separation(p, decades=6)
        assert s["k_lo"] == 2 and s["k_hi"] == 5
