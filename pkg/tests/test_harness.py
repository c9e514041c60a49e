import hashlib
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from smcomm import harness
from smcomm.cli import main
from smcomm.datasets import build_idx
from smcomm.errors import ConfigurationError
from smcomm.symbolic import parse_problog

SMALL = {
    "lewis_sweep": {"scenario": "lewis_sweep", "seeds": [0, 1],
                    "lewis": {"n_types": [2, 3], "n_signals": [2], "max_rounds": 3000,
                              "window": 500, "eval_rounds": 200}},
    "hetero_sync": {"scenario": "hetero_sync", "seeds": [0],
                    "sync": {"n_per_class": 8, "epochs": 2, "sync_epochs": 2}},
    "marl_extract": {"scenario": "marl_extract", "seeds": [0],
                     "marl": {"episodes": 640, "eval_episodes": 50}},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run_cli(tmp_path, cfg, out, *extra):
    code = main(["run", str(write_config(tmp_path, cfg)), "--out", str(out), *extra])
    assert code == 0
    return json.loads((out / "metrics.json").read_text())


class TestConfig:
    def test_defaults_merged(self):
        cfg = harness.validate_config({"scenario": "marl_extract", "marl": {"episodes": 10}})
        assert cfg["marl"]["episodes"] == 10 and cfg["marl"]["n_targets"] == 4
        assert cfg["seeds"] == [0]

    @pytest.mark.parametrize("raw", [
        {"scenario": "nope"},
        {"scenario": "lewis_sweep", "typo": 1},
        {"scenario": "lewis_sweep", "lewis": {"windw": 3}},
        {"scenario": "lewis_sweep", "seeds": []},
        {"scenario": "hetero_sync", "sync": {"unfreeze_fraction": 1.5}},
        {"scenario": "lewis_sweep", "lewis": {"max_rounds": 10, "window": 10}},
        {},
    ])
    def test_rejected(self, raw):
        with pytest.raises(ConfigurationError):
            harness.validate_config(raw)

    def test_float_rounding(self):
        text = harness.dumps_metrics({"b": 1 / 3, "a": [np.float64(2 / 3), np.int64(4)]})
        assert json.loads(text) == {"a": [0.666666666667, 4], "b": 0.333333333333}
        assert text.index('"a"') < text.index('"b"')

    def test_output_root_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv(harness.OUTPUT_ROOT_ENV, str(tmp_path))
        assert harness.resolve_output_dir({"scenario": "x"}, "rel") == tmp_path / "rel"
        assert harness.resolve_output_dir({"scenario": "x"}) == tmp_path / "runs/x"
        assert harness.resolve_output_dir({"scenario": "x"}, "/abs") == \
            harness.Path("/abs")


class TestScenarios:
    def test_lewis_sweep_cross_checked(self, tmp_path):
        m = run_cli(tmp_path, SMALL["lewis_sweep"], tmp_path / "out")
        cells = {(c["n_types"], c["n_signals"]): c for c in m["results"]["cells"]}
        assert cells[(2, 2)]["brute_force_max_payoff"] == 1.0
        assert cells[(3, 2)]["brute_force_max_payoff"] == 0.666666666667
        for cell in cells.values():
            for run in cell["runs"].values():
                assert run["greedy_payoff"] <= cell["brute_force_max_payoff"]
                assert {"classification", "is_nash", "greedy_payoff"} <= set(run)

    def test_hetero_sync_report(self, tmp_path):
        m = run_cli(tmp_path, SMALL["hetero_sync"], tmp_path / "out")
        seed0 = m["results"]["seeds"]["0"]
        assert set(seed0["strategies"]) == {"no_sync", "download_only", "partial_upload"}
        assert seed0["strategies"]["download_only"]["uplink_bytes"] == 0
        assert {"fedavg", "split"} <= set(seed0)
        assert (tmp_path / "out/seed_0/loss_curves.csv").exists()

    def test_marl_extract_artifacts(self, tmp_path):
        out = tmp_path / "out"
        m = run_cli(tmp_path, SMALL["marl_extract"], out)
        seed0 = m["results"]["seeds"]["0"]
        assert seed0["extraction"]["fidelity"] == 0.0
        for rel in ("actors/speaker.smnn", "actors/listener.smnn", "message_log.csv",
                    "graph.json", "program.pl", "graph.dot"):
            assert (out / "seed_0" / rel).exists()
        program = (out / "seed_0/program.pl").read_text()
        assert parse_problog(program).to_text() == program

    def test_seed_override(self, tmp_path):
        m = run_cli(tmp_path, SMALL["lewis_sweep"], tmp_path / "out", "--seed", "5")
        assert m["seeds"] == [5]

    def test_manifest_checksums(self, tmp_path):
        out = tmp_path / "out"
        run_cli(tmp_path, SMALL["marl_extract"], out)
        manifest = json.loads((out / "manifest.json").read_text())
        assert any(f["path"] == "metrics.json" for f in manifest["files"])
        for f in manifest["files"]:
            assert hashlib.sha256((out / f["path"]).read_bytes()).hexdigest() == f["sha256"]

    @pytest.mark.parametrize("scenario", sorted(SMALL))
    def test_byte_identical_rerun(self, tmp_path, scenario):
        a = run_cli(tmp_path, SMALL[scenario], tmp_path / "a")
        run_cli(tmp_path, SMALL[scenario], tmp_path / "b")
        assert (tmp_path / "a/metrics.json").read_bytes() == \
            (tmp_path / "b/metrics.json").read_bytes()
        assert a["config_hash"]

    def test_idx_mode(self, tmp_path):
        rng = np.random.default_rng(0)
        paths = {}
        for name in ("a", "b"):
            img, lab = build_idx(rng.integers(0, 256, size=(40, 8, 8)), rng.integers(0, 10, 40))
            (tmp_path / f"{name}_img").write_bytes(img)
            (tmp_path / f"{name}_lab").write_bytes(lab)
            paths[f"idx_{name}"] = {"images": str(tmp_path / f"{name}_img"),
                                    "labels": str(tmp_path / f"{name}_lab")}
        cfg = {"scenario": "hetero_sync",
               "sync": {"epochs": 1, "sync_epochs": 1, "baselines": False, **paths}}
        m = run_cli(tmp_path, cfg, tmp_path / "out")
        assert m["results"]["seeds"]["0"]["n_heldout"] == 10


class TestCli:
    def test_validate(self, tmp_path, capsys):
        assert main(["validate", str(write_config(tmp_path, SMALL["marl_extract"]))]) == 0
        assert "ok" in capsys.readouterr().out

    def test_error_json(self, tmp_path, capsys):
        bad = write_config(tmp_path, {"scenario": "lewis_sweep", "bogus": True})
        assert main(["run", str(bad), "--out", str(tmp_path / "out")]) == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "ConfigurationError" and err["module"] == "harness"
        assert "bogus" in err["message"]

    def test_module_error_written(self, tmp_path, capsys):
        cfg = {"scenario": "hetero_sync",
               "sync": {"idx_a": {"images": str(tmp_path / "missing"),
                                  "labels": str(tmp_path / "missing")},
                        "idx_b": {"images": "x", "labels": "y"}}}
        out = tmp_path / "out"
        assert main(["run", str(write_config(tmp_path, cfg)), "--out", str(out)]) == 1
        assert json.loads((out / "error.json").read_text())["error"] == "FileNotFoundError"

    def test_corrupt_idx_names_module(self, tmp_path, capsys):
        (tmp_path / "img").write_bytes(b"\x00\x00\x08\x01" + bytes(8))
        (tmp_path / "lab").write_bytes(b"\x00\x00\x08\x01" + bytes(4))
        idx = {"images": str(tmp_path / "img"), "labels": str(tmp_path / "lab")}
        cfg = {"scenario": "hetero_sync", "sync": {"idx_a": idx, "idx_b": idx}}
        assert main(["run", str(write_config(tmp_path, cfg)), "--out",
                     str(tmp_path / "out")]) == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err == {"error": "ParseError", "module": "datasets",
                       "message": err["message"]}
        assert "magic" in err["message"]

    def test_extract_and_report(self, tmp_path, capsys):
        run_cli(tmp_path, SMALL["marl_extract"], tmp_path / "run")
        assert main(["extract", str(tmp_path / "run/seed_0/actors"), "--out",
                     str(tmp_path / "ex"), "--radius", "1"]) == 0
        m = json.loads((tmp_path / "ex/metrics.json").read_text())
        assert m["n_sr_nodes"] >= 1
        capsys.readouterr()
        assert main(["report", str(tmp_path / "run")]) == 0
        out = capsys.readouterr().out
        assert "marl_extract" in out and "median final reward" in out

    def test_extract_missing_dir(self, tmp_path):
        assert main(["extract", str(tmp_path / "none"), "--out", str(tmp_path / "ex")]) == 1

    @pytest.mark.skipif(shutil.which("smcomm") is None, reason="console script not installed")
    def test_console_script(self, tmp_path):
        res = subprocess.run(["smcomm", "validate",
                              str(write_config(tmp_path, SMALL["lewis_sweep"]))],
                             capture_output=True, text=True)
        assert res.returncode == 0

    def test_module_entry(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "smcomm.cli", "validate",
                              str(write_config(tmp_path, {"scenario": "x"}))],
                             capture_output=True, text=True)
        assert res.returncode == 1 and "ConfigurationError" in res.stderr
