import json
import os
import subprocess
import sys

import numpy as np
import pytest

from resnetlab.bounds import load_reports_jsonl
from resnetlab.cli import (EXIT_BOUND_FAILURE, EXIT_INPUT_ERROR, EXIT_OK,
                           EXIT_OVERFLOW, ExperimentConfig, load_config, main)
from resnetlab.data import load_dataset
from resnetlab.errors import InvalidInputError
from resnetlab.network import load_weights
from resnetlab.training import load_runlog


def write_config(tmp_path, name="config.json", **overrides):
    cfg = {
        "d": 6, "N": 4, "seed": 3, "depths": [4, 8],
        "alpha0": 0.5, "beta0": 1.0, "eta0": 0.1, "T": 5,
        "c0": 0.25, "certify_draws": 5, "gradcheck_instances": 4,
    }
    cfg.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            out[os.path.relpath(path, root)] = open(path, "rb").read()
    return out


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert cfg.depths == [8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096]
        assert cfg.d == 20 and cfg.N == 10 and cfg.T == 200

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"dd": 3}')
        with pytest.raises(InvalidInputError):
            load_config(str(path), {})

    def test_overrides_win(self, tmp_path):
        path = write_config(tmp_path, seed=1)
        cfg = load_config(path, {"seed": 42, "threads": None})
        assert cfg.seed == 42 and cfg.threads == 1

    def test_descending_depths_rejected(self):
        with pytest.raises(InvalidInputError):
            ExperimentConfig(depths=[8, 4])


class TestDatasetCommand:
    def test_writes_and_round_trips(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["dataset", "--config", cfg, "--out", str(out)]) == EXIT_OK
        data, meta = load_dataset(out / "dataset.csv")
        assert data.n == 4 and data.dim == 6
        assert meta["c0"] == 0.25

    def test_infeasible_exits_2(self, tmp_path):
        cfg = write_config(tmp_path, N=6, d=2, enforce_separation=True)
        assert main(["dataset", "--config", cfg,
                     "--out", str(tmp_path / "o")]) == EXIT_INPUT_ERROR


class TestTrainCommand:
    def test_zero_steps_single_row_logs(self, tmp_path):
        cfg = write_config(tmp_path, T=0)
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out)]) == EXIT_OK
        for depth in (4, 8):
            log = load_runlog(out / f"runlog_L{depth}.csv")
            assert list(log.t) == [0]
            weights = load_weights(out / f"weights_L{depth}.txt")
            assert weights.depth == depth

    def test_interpolating_targets_zero_loss(self, tmp_path):
        # zero certified init with near-init targets leaves nothing to learn
        # (renormalization costs an ulp, hence <= 1e-24 rather than == 0)
        cfg = write_config(tmp_path, init_mode="certified", init_scale=0.0,
                           target_mode="near_init", epsilon_init=0.0)
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out)]) == EXIT_OK
        for depth in (4, 8):
            log = load_runlog(out / f"runlog_L{depth}.csv")
            assert np.all(log.loss <= 1e-24)

    def test_overflow_exits_3(self, tmp_path):
        cfg = write_config(tmp_path, activation="identity", eta0=1e12,
                           beta0=0.0, T=8)
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out)]) == EXIT_OVERFLOW

    def test_layer_logging_emits_gap_file(self, tmp_path):
        cfg = write_config(tmp_path, log_layers=True)
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out)]) == EXIT_OK
        assert (out / "gaps_L8.csv").exists()

    def test_threads_match_sequential(self, tmp_path):
        cfg = write_config(tmp_path)
        seq, par = tmp_path / "seq", tmp_path / "par"
        assert main(["train", "--config", cfg, "--out", str(seq)]) == EXIT_OK
        assert main(["train", "--config", cfg, "--out", str(par),
                     "--threads", "2"]) == EXIT_OK
        seq_files = tree_bytes(seq)
        par_files = tree_bytes(par)
        del seq_files["config.json"], par_files["config.json"]  # threads differ
        assert seq_files == par_files


class TestDeterminism:
    def test_rerun_bitwise_identical(self, tmp_path):
        cfg = write_config(tmp_path, log_layers=True)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["train", "--config", cfg, "--out", str(out)]) == EXIT_OK
        assert tree_bytes(out1) == tree_bytes(out2)

    def test_certify_rerun_identical(self, tmp_path):
        cfg = write_config(tmp_path, depths=[4], T=3)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            main(["certify", "--config", cfg, "--out", str(out)])
        assert tree_bytes(out1) == tree_bytes(out2)


class TestCertifyCommand:
    def test_certified_config_passes(self, tmp_path):
        cfg = write_config(tmp_path, d=16, N=2, depths=[32], T=20,
                           init_mode="certified", target_mode="near_init",
                           epsilon_init=0.0, enforce_separation=True,
                           eta0=5e-6, certify_draws=5, seed=11)
        out = tmp_path / "out"
        assert main(["certify", "--config", cfg, "--out", str(out)]) == EXIT_OK
        rows = load_reports_jsonl(out / "bounds.jsonl")
        names = {r["name"] for r in rows}
        assert {"assumption_iv_row_norms", "lr_per_step", "envelope_loss",
                "forward_hidden_upper", "gradient_upper",
                "hessian_spectral"} <= names
        applicable = [r for r in rows if r["applicable"] and not r["hypothesis"]]
        assert applicable and all(r["pass"] for r in applicable)

    def test_violated_hypotheses_exit_zero(self, tmp_path):
        # oversized weights: precondition rows fail, bounds are inapplicable
        cfg = write_config(tmp_path, beta0=0.0, depths=[4], T=3, certify_draws=3)
        out = tmp_path / "out"
        assert main(["certify", "--config", cfg, "--out", str(out)]) == EXIT_OK
        rows = load_reports_jsonl(out / "bounds.jsonl")
        assert any(r["hypothesis"] and not r["pass"] for r in rows)
        envelope = [r for r in rows if r["name"] == "envelope_loss"]
        assert envelope and not envelope[0]["applicable"]

    def test_run_dir_mode(self, tmp_path):
        cfg = write_config(tmp_path, depths=[4], T=4)
        run_dir = tmp_path / "run"
        assert main(["train", "--config", cfg, "--out", str(run_dir)]) == EXIT_OK
        out = tmp_path / "cert"
        assert main(["certify", "--config", cfg, "--out", str(out),
                     "--run-dir", str(run_dir)]) == EXIT_OK
        assert (out / "bounds.jsonl").exists()

    def test_doctored_run_fails_with_exit_1(self, tmp_path):
        # corrupt a recorded loss beyond the envelope: certify must say so
        cfg = write_config(tmp_path, d=16, N=2, depths=[32], T=10,
                           init_mode="certified", target_mode="near_init",
                           epsilon_init=0.0, enforce_separation=True,
                           eta0=5e-6, certify_draws=2, seed=11)
        run_dir = tmp_path / "run"
        assert main(["train", "--config", cfg, "--out", str(run_dir)]) == EXIT_OK
        log_path = run_dir / "runlog_L32.csv"
        lines = log_path.read_text().splitlines()
        parts = lines[-1].split(",")
        parts[2] = repr(float(parts[2]) * 1e6)
        lines[-1] = ",".join(parts)
        log_path.write_text("\n".join(lines) + "\n")
        out = tmp_path / "cert"
        assert main(["certify", "--config", cfg, "--out", str(out),
                     "--run-dir", str(run_dir)]) == EXIT_BOUND_FAILURE
        rows = load_reports_jsonl(out / "bounds.jsonl")
        failed = [r for r in rows if not r["pass"] and r["applicable"]
                  and not r["hypothesis"]]
        assert any(r["name"] in ("envelope_loss", "induction_loss_doubling")
                   for r in failed)


class TestAnalyzeCommand:
    def run_training(self, tmp_path, **overrides):
        cfg = write_config(tmp_path, **overrides)
        run_dir = tmp_path / "run"
        assert main(["train", "--config", cfg, "--out", str(run_dir)]) == EXIT_OK
        return cfg, run_dir

    def test_full_outputs(self, tmp_path):
        cfg, run_dir = self.run_training(tmp_path, depths=[4, 8, 16], T=20)
        out = tmp_path / "analysis"
        assert main(["analyze", "--config", cfg, "--run-dir", str(run_dir),
                     "--out", str(out)]) == EXIT_OK
        fits = json.loads((out / "scaling_fits.json").read_text())
        assert {"fbar0", "delta_final", "weight_norm", "total_scaling"} <= set(fits)
        assert (out / "steps_to_eps.csv").exists()
        assert (out / "two_variation.csv").exists()
        assert (out / "limit_distances.csv").exists()
        assert (out / "scatter_m0_n1.csv").exists()

    def test_single_depth_skips_fits(self, tmp_path):
        cfg, run_dir = self.run_training(tmp_path, depths=[8], T=10)
        out = tmp_path / "analysis"
        assert main(["analyze", "--config", cfg, "--run-dir", str(run_dir),
                     "--out", str(out)]) == EXIT_OK
        fits = json.loads((out / "scaling_fits.json").read_text())
        assert fits == {}
        assert (out / "steps_to_eps.csv").exists()
        assert not (out / "limit_distances.csv").exists()

    def test_missing_run_dir_exits_2(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["analyze", "--config", cfg, "--run-dir",
                     str(tmp_path / "nope"), "--out",
                     str(tmp_path / "o")]) == EXIT_INPUT_ERROR

    def test_steps_csv_round_trips(self, tmp_path):
        cfg, run_dir = self.run_training(tmp_path, depths=[4, 8], T=30)
        out = tmp_path / "analysis"
        main(["analyze", "--config", cfg, "--run-dir", str(run_dir),
              "--out", str(out)])
        lines = (out / "steps_to_eps.csv").read_text().splitlines()
        assert lines[0] == "eps,t_first"
        for line in lines[1:]:
            eps, t_first = line.split(",")
            assert float(eps) > 0
            assert t_first == "" or int(t_first) >= 0


class TestGradcheckCommand:
    def test_passes(self, tmp_path):
        cfg = write_config(tmp_path, gradcheck_instances=4)
        assert main(["gradcheck", "--config", cfg]) == EXIT_OK


class TestEntryPoints:
    def test_bad_config_path_exits_2(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path / "o")]) == EXIT_INPUT_ERROR

    def test_module_invocation(self, tmp_path):
        cfg = write_config(tmp_path)
        result = subprocess.run(
            [sys.executable, "-m", "resnetlab.cli", "dataset", "--config", cfg,
             "--out", str(tmp_path / "out")],
            capture_output=True, text=True)
        assert result.returncode == EXIT_OK
        assert "dataset:" in result.stdout
