import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from accbo.harness import (
    ConfigError,
    ExperimentConfig,
    calls_to_target,
    cmd_accbo,
    cmd_bias,
    cmd_snag_track,
    cmd_sweep,
    load_config,
    write_csv,
    write_json,
)
from accbo.optimizer import IterationLog
from accbo import cli
from accbo.problems import instance_to_json

from conftest import analytic_instances


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


SNAG_DOC = {
    "mu": 1.0, "alpha": 0.04, "T": 50, "delta_prob": 0.05, "V0": 1.0,
    "dim": 2, "sigma": [0.0, 0.1],
}

ISO_DOC = {
    "kind": "isotropic_quadratic",
    "params": {"mu": 1.0, "A": [[0.5, 0.0], [0.0, 0.5]], "b": [0.1, 0.0],
               "c": [0.5, -0.5], "d": [0.2, 0.3], "l_f0": 1.0},
    "noise": {"sigma_f1": 0.05, "sigma_g1": 0.1, "sigma_g2": 0.0},
}

ACCBO_DOC = {
    "instance": ISO_DOC,
    "option": "one",
    "schedule": {
        "mode": "practical", "epsilon": 0.05, "delta": 0.05, "d0": 1.0,
        "overrides": {"alpha": 0.04, "eta": 0.01, "T": 30, "T0": 40},
    },
    "x0": [1.0, 1.0],
}


class TestConfigLoading:
    def test_round_trip(self, tmp_path):
        doc = {"a": 1, "b": [1.5, 2.5]}
        assert load_config(write_config(tmp_path, doc)) == doc

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)

    def test_non_object_top_level(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigError, match="top level"):
            load_config(path)

    def test_missing_field_names_field(self, tmp_path):
        doc = dict(SNAG_DOC)
        del doc["alpha"]
        config = ExperimentConfig("snag-track", doc, tmp_path, n_seeds=2)
        with pytest.raises(ConfigError, match="'alpha'"):
            cmd_snag_track(config)

    def test_unknown_field_names_field(self, tmp_path):
        doc = dict(SNAG_DOC, typo_field=1)
        config = ExperimentConfig("snag-track", doc, tmp_path, n_seeds=2)
        with pytest.raises(ConfigError, match="'typo_field'"):
            cmd_snag_track(config)

    def test_invalid_run_options(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig("bias", {}, tmp_path, n_seeds=0)
        with pytest.raises(ConfigError):
            ExperimentConfig("bias", {}, tmp_path, threads=0)


class TestSerialization:
    def test_csv_floats_round_trip_exactly(self, tmp_path):
        vals = [0.1, 1.0 / 3.0, np.pi, 1e-300, 12345.6789e17]
        records = [{"t": i, "v": v} for i, v in enumerate(vals)]
        path = tmp_path / "out.csv"
        write_csv(records, path, ["t", "v"])
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "t,v"
        for i, v in enumerate(vals):
            parsed = float(lines[i + 1].split(",")[1])
            assert parsed == v  # exact, thanks to 17 significant digits

    def test_csv_uses_lf_endings(self, tmp_path):
        path = tmp_path / "out.csv"
        write_csv([{"a": 1}], path, ["a"])
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw.endswith(b"\n")

    def test_json_sorted_keys_and_numpy_types(self, tmp_path):
        path = tmp_path / "out.json"
        write_json({"zeta": np.float64(0.5), "alpha": np.int64(3),
                    "arr": np.array([1.0, 2.0])}, path)
        text = path.read_text(encoding="utf-8")
        assert text.index('"alpha"') < text.index('"arr"') < text.index('"zeta"')
        assert json.loads(text) == {"alpha": 3, "arr": [1.0, 2.0], "zeta": 0.5}


class TestCommands:
    def test_snag_track_outputs(self, tmp_path):
        config = ExperimentConfig("snag-track", dict(SNAG_DOC), tmp_path,
                                  n_seeds=3)
        rc = cmd_snag_track(config)
        summary = json.loads((tmp_path / "snag_track_summary.json").read_text())
        assert rc in (0, 3)
        assert len(summary["cells"]) == 2
        assert (rc == 0) == summary["all_within_delta"]
        csvs = list(tmp_path.glob("track_sigma*.csv"))
        assert len(csvs) == 2
        header = csvs[0].read_text().splitlines()[0]
        assert header == "t,V,bound,dist,phi_gap"

    def test_bias_outputs(self, tmp_path):
        doc = {"instance": ISO_DOC, "Q_grid": [1, 2, 4], "n_samples": 400}
        config = ExperimentConfig("bias", doc, tmp_path)
        rc = cmd_bias(config)
        assert rc == 0  # l_g1 = mu for this instance: bias identically zero
        rows = (tmp_path / "bias.csv").read_text().splitlines()
        assert rows[0] == "Q,S,bias_bound,bias_est,var_est,se"
        assert len(rows) == 4

    def test_accbo_outputs(self, tmp_path):
        config = ExperimentConfig("accbo", dict(ACCBO_DOC), tmp_path, n_seeds=2)
        assert cmd_accbo(config) == 0
        summary = json.loads((tmp_path / "accbo_summary.json").read_text())
        assert len(summary["per_seed"]) == 2
        for k in range(2):
            lines = (tmp_path / f"run_seed{k}.csv").read_text().splitlines()
            assert lines[0].startswith("t,grad_norm,m_norm")
            assert len(lines) == 31  # header + T rows

    def test_accbo_plain_momentum_algorithm(self, tmp_path):
        doc = dict(ACCBO_DOC, algorithm="plain_momentum")
        assert cmd_accbo(ExperimentConfig("accbo", doc, tmp_path)) == 0
        summary = json.loads((tmp_path / "accbo_summary.json").read_text())
        assert summary["algorithm"] == "plain_momentum"

    def test_accbo_unknown_algorithm(self, tmp_path):
        doc = dict(ACCBO_DOC, algorithm="bogus")
        with pytest.raises(ConfigError, match="algorithm"):
            cmd_accbo(ExperimentConfig("accbo", doc, tmp_path))

    def test_instance_from_file_path(self, tmp_path):
        inst_path = tmp_path / "inst.json"
        inst_path.write_text(json.dumps(ISO_DOC), encoding="utf-8")
        doc = dict(ACCBO_DOC, instance=str(inst_path))
        assert cmd_accbo(ExperimentConfig("accbo", doc, tmp_path / "out")) == 0

    def test_sweep_outputs(self, tmp_path):
        doc = {
            "instance": ISO_DOC,
            "option": "one",
            "epsilons": [0.2, 0.1],
            "schedule": {"mode": "practical", "epsilon": 0.0, "delta": 0.05,
                         "d0": 1.0,
                         "overrides": {"alpha": 0.04, "eta": 0.02, "T": 60,
                                       "T0": 40}},
            "x0": [1.0, 1.0],
        }
        config = ExperimentConfig("sweep", doc, tmp_path, n_seeds=2)
        assert cmd_sweep(config) == 0
        summary = json.loads((tmp_path / "sweep_summary.json").read_text())
        assert len(summary["table"]) == 4  # 2 epsilons x 2 algorithms

    def test_threads_do_not_change_summary(self, tmp_path):
        a = ExperimentConfig("snag-track", dict(SNAG_DOC), tmp_path / "a",
                             n_seeds=3, threads=1)
        b = ExperimentConfig("snag-track", dict(SNAG_DOC), tmp_path / "b",
                             n_seeds=3, threads=4)
        cmd_snag_track(a)
        cmd_snag_track(b)
        assert (tmp_path / "a" / "snag_track_summary.json").read_bytes() == \
            (tmp_path / "b" / "snag_track_summary.json").read_bytes()


class TestCallsToTarget:
    def make_log(self, t, grad_norm, calls):
        return IterationLog(t=t, grad_norm_true=grad_norm, m_norm=0.0,
                            y_track_err=0.0, yhat_track_err=0.0, yhat_step=0.0,
                            calls_g1=calls, calls_jvp=0, calls_hvp=0, calls_f=0)

    def test_first_hit(self):
        logs = [self.make_log(0, 4.0, 10), self.make_log(1, 0.0, 20),
                self.make_log(2, 0.0, 30)]
        # running means: 4, 2, 4/3 -> target 1.5 first met at t=2.
        assert calls_to_target(logs, 1.5) == 30.0

    def test_never_hit_is_inf(self):
        logs = [self.make_log(0, 4.0, 10)]
        assert calls_to_target(logs, 0.1) == float("inf")


class TestCli:
    def run_cli(self, args, env_extra=None):
        import os
        env = dict(os.environ)
        env.setdefault("ACCBO_LOG", "quiet")
        if env_extra:
            env.update(env_extra)
        return subprocess.run(
            [sys.executable, "-m", "accbo.cli", *args],
            capture_output=True, text=True, env=env,
        )

    def test_config_error_exit_code(self, tmp_path):
        path = write_config(tmp_path, {"mu": 1.0})  # missing fields
        res = self.run_cli(["snag-track", "--config", str(path),
                            "--out", str(tmp_path / "out")])
        assert res.returncode == 2
        assert "missing required field" in res.stderr

    def test_missing_config_file_exit_code(self, tmp_path):
        res = self.run_cli(["bias", "--config", str(tmp_path / "nope.json"),
                            "--out", str(tmp_path / "out")])
        assert res.returncode == 2

    def test_invalid_log_level(self, tmp_path):
        path = write_config(tmp_path, SNAG_DOC)
        res = self.run_cli(["snag-track", "--config", str(path),
                            "--out", str(tmp_path / "out")],
                           env_extra={"ACCBO_LOG": "chatty"})
        assert res.returncode == 2
        assert "ACCBO_LOG" in res.stderr

    def test_snag_track_success(self, tmp_path):
        path = write_config(tmp_path, dict(SNAG_DOC, sigma=[0.0]))
        res = self.run_cli(["snag-track", "--config", str(path),
                            "--out", str(tmp_path / "out"), "--seeds", "2"])
        assert res.returncode == 0
        assert (tmp_path / "out" / "snag_track_summary.json").exists()

    def test_byte_identical_reruns(self, tmp_path):
        path = write_config(tmp_path, ACCBO_DOC)
        for d in ("out1", "out2"):
            res = self.run_cli(["accbo", "--config", str(path),
                                "--out", str(tmp_path / d),
                                "--seeds", "2", "--base-seed", "7"])
            assert res.returncode == 0
        for name in ("accbo_summary.json", "run_seed0.csv", "run_seed1.csv"):
            assert (tmp_path / "out1" / name).read_bytes() == \
                (tmp_path / "out2" / name).read_bytes()

    def test_main_callable_directly(self, tmp_path):
        path = write_config(tmp_path, dict(SNAG_DOC, sigma=[0.0]))
        rc = cli.main(["snag-track", "--config", str(path),
                       "--out", str(tmp_path / "out"), "--seeds", "2"])
        assert rc == 0


class TestInstanceFixtureLoading:
    def test_fixture_ridge_inline(self, tmp_path):
        doc = {
            "instance": {"kind": "fixture_ridge", "sigma_g1": 0.1},
            "Q_grid": [1], "n_samples": 50,
        }
        rc = cmd_bias(ExperimentConfig("bias", doc, tmp_path))
        assert rc in (0, 3)

    def test_all_kinds_serializable_for_configs(self, tmp_path):
        for inst in analytic_instances():
            text = instance_to_json(inst)
            assert json.loads(text)["kind"] == inst.kind
