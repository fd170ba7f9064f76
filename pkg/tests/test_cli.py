import filecmp
import json
import os

import pytest

from hyposde.cli import main


MODEL = {"model": "fhn", "gamma": 1.5, "beta": 0.3, "epsilon": 0.1, "sigma": 0.6, "s": 0.01}


def write_json(path, payload):
    path.write_text(json.dumps(payload, indent=2))
    return str(path)


@pytest.fixture
def sim_config(tmp_path):
    return write_json(tmp_path / "sim.json",
                      {"model": MODEL, "delta": 0.01, "n": 2000, "seed": 5, "z0": [0.0, 0.0]})


@pytest.fixture
def replicate_config(tmp_path):
    return write_json(tmp_path / "rep.json", {
        "model": MODEL,
        "fine_delta": 0.001,
        "fine_n": 10000,
        "stride": 10,
        "n_replications": 2,
        "methods": ["qv", "explicit-sigma"],
        "seed": 7,
        "optim": {"max_evals": 4000, "restarts": 1},
    })


class TestSimulate:
    def test_writes_trajectory_and_meta(self, sim_config, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["simulate", "--config", sim_config, "--out", str(out)]) == 0
        assert (out / "trajectory.csv").exists()
        assert (out / "trajectory.meta.json").exists()
        meta = json.loads((out / "trajectory.meta.json").read_text())
        assert meta["n"] == 2000 and meta["seed"] == 5

    def test_seed_override_changes_output(self, sim_config, tmp_path):
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        main(["simulate", "--config", sim_config, "--out", str(a)])
        main(["simulate", "--config", sim_config, "--out", str(b), "--seed", "99"])
        main(["simulate", "--config", sim_config, "--out", str(c), "--seed", "99"])
        traj = "trajectory.csv"
        assert not filecmp.cmp(a / traj, b / traj, shallow=False)
        assert filecmp.cmp(b / traj, c / traj, shallow=False)


class TestEstimate:
    @pytest.fixture
    def trajectory(self, sim_config, tmp_path):
        out = tmp_path / "run"
        main(["simulate", "--config", sim_config, "--out", str(out)])
        return str(out / "trajectory.csv")

    def test_qv_roundtrip(self, trajectory, sim_config, tmp_path):
        result = tmp_path / "est.json"
        code = main(["estimate", "--data", trajectory, "--method", "qv",
                     "--config", sim_config, "--out", str(result)])
        assert code == 0
        payload = json.loads(result.read_text())
        assert payload["method"] == "qv"
        assert payload["n"] == 2000
        assert 0.0 < payload["params"]["epsilon"] < 0.5
        assert payload["optim"]["converged"] is True

    def test_explicit_sigma(self, trajectory, sim_config, tmp_path):
        result = tmp_path / "sig.json"
        code = main(["estimate", "--data", trajectory, "--method", "explicit-sigma",
                     "--config", sim_config, "--out", str(result)])
        assert code == 0
        payload = json.loads(result.read_text())
        assert 0.2 < payload["params"]["sigma2"] < 0.55

    def test_missing_data_file_is_runtime_failure(self, sim_config, tmp_path):
        code = main(["estimate", "--data", str(tmp_path / "none.csv"), "--method", "qv",
                     "--config", sim_config, "--out", str(tmp_path / "x.json")])
        assert code == 2


class TestReplicate:
    def test_outputs_and_determinism(self, replicate_config, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["replicate", "--config", replicate_config, "--out", str(a)]) == 0
        assert main(["replicate", "--config", replicate_config, "--out", str(b)]) == 0
        names = sorted(os.listdir(a))
        for expected in ("summary.json", "table.csv", "estimates.csv"):
            assert expected in names
        assert any(n.startswith("density_") for n in names)
        for name in names:
            assert filecmp.cmp(a / name, b / name, shallow=False), name

    def test_seed_override(self, replicate_config, tmp_path):
        a, b = tmp_path / "sa", tmp_path / "sb"
        main(["replicate", "--config", replicate_config, "--out", str(a)])
        main(["replicate", "--config", replicate_config, "--out", str(b), "--seed", "123"])
        assert not filecmp.cmp(a / "estimates.csv", b / "estimates.csv", shallow=False)


class TestDiagnose:
    def test_fhn_passes(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "diag.json", {"model": MODEL, "seed": 3})
        assert main(["diagnose", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "hypoellipticity" in out and "PASS" in out and "FAIL" not in out


class TestSweep:
    def test_writes_csv(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "sweep.json", {
            "model": MODEL,
            "stride": 5,
            "n_replications": 1,
            "seed": 2,
            "grid": [[300, 0.02], [600, 0.01]],
            "optim": {"max_evals": 3000, "restarts": 1},
        })
        out = tmp_path / "sweep.csv"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "n,delta,param,mean_abs_err,sd"
        assert len(lines) == 1 + 2 * 4  # two designs, four tracked parameters


class TestErrors:
    def test_missing_config_names_path(self, tmp_path, capsys):
        code = main(["replicate", "--config", str(tmp_path / "ghost.json"),
                     "--out", str(tmp_path / "o")])
        assert code == 1
        assert "ghost.json" in capsys.readouterr().err

    def test_malformed_config_names_key(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "bad.json", {"model": MODEL, "bogus": 1})
        code = main(["replicate", "--config", cfg, "--out", str(tmp_path / "o")])
        assert code == 1
        assert "bogus" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert main(["simulate", "--config", "x.json", "--out", "y", "--frobnicate"]) == 1

    def test_unknown_method(self, capsys):
        assert main(["estimate", "--data", "d.csv", "--method", "magic",
                     "--config", "c.json", "--out", "o.json"]) == 1

    def test_unknown_command(self, capsys):
        assert main(["transmogrify"]) == 1

    def test_invalid_json_config(self, tmp_path, capsys):
        bad = tmp_path / "broken.json"
        bad.write_text("{not json")
        code = main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "broken.json" in capsys.readouterr().err

    def test_diverging_simulation_is_runtime_failure(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "div.json", {"model": MODEL, "delta": 10.0, "n": 100})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
