import io
import json

import pytest

from bprelab import cli, config
from bprelab.cli import EXIT_ERROR, EXIT_FAILED, EXIT_OK

EXPECTED_PRESETS = {
    "calibration", "closed-form-delta", "example-trajectory", "exp-moment-geometric",
    "exp-rate-alternating", "exp-rate-poisson", "finite-state-tail", "heyde-gw-clt",
    "martingale-variance", "power-tail-rate", "random-env-clt-annealed",
    "random-env-clt-quenched",
}


def run(argv):
    buf = io.StringIO()
    code = cli.main(argv, buf)
    return code, buf.getvalue()


def write(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def simulate_cfg(law=None, n=5):
    return {"campaign": "simulate",
            "model": {"kind": "deterministic", "laws": [law or {"family": "poisson", "lambda": 2.0}]},
            "params": {"n": n}}


def test_presets_listed_and_stable():
    assert set(config.preset_names()) == EXPECTED_PRESETS
    code, a = run(["presets"])
    _, b = run(["presets"])
    assert code == EXIT_OK and a == b
    assert len(a.strip().splitlines()) == len(EXPECTED_PRESETS)


@pytest.mark.parametrize("name", sorted(EXPECTED_PRESETS))
def test_every_preset_validates(name):
    config.validate(config.resolve(config.load_preset(name), environ={}))


def test_preset_show():
    code, out = run(["presets", "--show", "closed-form-delta"])
    assert code == EXIT_OK and json.loads(out)["campaign"] == "delta"
    assert run(["presets", "--show", "nope"])[0] == EXIT_ERROR


def test_misspelled_key_names_it(tmp_path, capsys):
    path = write(tmp_path, simulate_cfg({"family": "poisson", "lamda": 2.0}))
    code, _ = run(["run", path, "--out", str(tmp_path / "o")])
    assert code == EXIT_ERROR
    assert "lamda" in capsys.readouterr().err


def test_unknown_params_key(tmp_path, capsys):
    cfg = simulate_cfg()
    cfg["params"]["bogus"] = 1
    assert run(["validate", write(tmp_path, cfg)])[0] == EXIT_ERROR
    assert "bogus" in capsys.readouterr().err


def test_missing_required_param(tmp_path, capsys):
    cfg = {"campaign": "rate", "model": simulate_cfg()["model"], "params": {"reps": 1000}}
    assert run(["validate", write(tmp_path, cfg)])[0] == EXIT_ERROR
    assert "params.target" in capsys.readouterr().err


def test_unit_offspring_trajectory(tmp_path):
    path = write(tmp_path, simulate_cfg({"family": "finite", "pmf": [[1, 1.0]]}))
    out = tmp_path / "o"
    code, _ = run(["run", path, "--out", str(out)])
    assert code == EXIT_OK
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "k,Z,logP,W"
    assert lines[1:] == [f"{k},1,0,1" for k in range(6)]
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and rep["config"]["experiment"]["params"]["n"] == 5


def test_delta_campaign_value(tmp_path):
    cfg = {"campaign": "delta", "model": simulate_cfg()["model"]}
    rep, files = cli.run_config(config.resolve(cfg, environ={}), str(tmp_path))
    assert rep.fits["value"] == pytest.approx(1.0, rel=1e-12)
    assert any(f.endswith("stats.csv") for f in files)


def test_seed_precedence(monkeypatch):
    cfg = simulate_cfg()
    cfg["seeds"] = {"traj_seed": 1}
    assert config.resolve(cfg, environ={})["seeds"] == {"traj_seed": 1, "env_seed": 0}
    assert config.resolve(cfg, environ={"BPRE_SEED": "7"})["seeds"]["traj_seed"] == 7
    got = config.resolve(cfg, [("seeds.traj_seed", 9)], environ={"BPRE_SEED": "7"})
    assert got["seeds"]["traj_seed"] == 9
    with pytest.raises(config.ConfigError):
        config.resolve(cfg, environ={"BPRE_SEED": "x"})


def test_env_seed_changes_run(tmp_path, monkeypatch):
    path = write(tmp_path, simulate_cfg(n=8))
    monkeypatch.setenv("BPRE_SEED", "3")
    run(["run", path, "--out", str(tmp_path / "a")])
    run(["run", path, "--out", str(tmp_path / "b")])
    monkeypatch.setenv("BPRE_SEED", "4")
    run(["run", path, "--out", str(tmp_path / "c")])
    a, b, c = ((tmp_path / d / "trajectory.csv").read_text() for d in "abc")
    assert a == b and a != c


def test_override_flags(tmp_path):
    path = write(tmp_path, simulate_cfg())
    code, _ = run(["run", path, "--params.n=3", "--out", str(tmp_path / "o")])
    assert code == EXIT_OK
    assert len((tmp_path / "o" / "trajectory.csv").read_text().splitlines()) == 5
    code, _ = run(["run", path, "--params.n", "2", "--out", str(tmp_path / "p")])
    assert len((tmp_path / "p" / "trajectory.csv").read_text().splitlines()) == 4


def test_hypothesis_violation_exit(tmp_path, capsys):
    cfg = {"campaign": "tail",
           "model": {"kind": "deterministic", "laws": [{"family": "poisson", "lambda": 2.0}]},
           "params": {"n_list": [2, 3, 4], "eps_list": [0.1], "reps": 100, "depth": 5}}
    code, _ = run(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == EXIT_ERROR
    assert "p_0(xi_0) = 0" in capsys.readouterr().err


def test_failed_check_exit_two(tmp_path):
    cfg = {"campaign": "delta", "model": simulate_cfg()["model"],
           "params": {"expected": [2.0], "rel_tol": 1e-9}}
    code, out = run(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == EXIT_FAILED
    assert "FAIL" in out


def test_samples_csv(tmp_path):
    cfg = simulate_cfg(n=3)
    cfg["params"].update({"reps": 50, "depth": 10})
    cfg["output"] = {"samples": True}
    rep, files = cli.run_config(config.resolve(cfg, environ={}), str(tmp_path))
    lines = (tmp_path / "samples.csv").read_text().splitlines()
    assert lines[0] == "rep,Wn,dW" and len(lines) == 51


def test_validate_ok(tmp_path):
    code, out = run(["validate", write(tmp_path, simulate_cfg())])
    assert code == EXIT_OK and out.startswith("ok:")
