import csv
import json
import math
import re
from pathlib import Path

import numpy as np
import pytest
import yaml

from sh2opt.cli import main
from sh2opt.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(tmp_path, **entries):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(entries))
    return path


def scalar_config(tmp_path, **over):
    cfg = dict(problem="scalar-gain", mu0=[2.0], distribution={"kind": "log-uniform", "support": [1e-3, 1e3]},
               M=10, policy={"kind": "power-law", "alpha0": 1.0, "p": 1.0}, N=500, trials=20, seed=0,
               checkpoint_every=50, output=str(tmp_path / "out"))
    cfg.update(over)
    return write_config(tmp_path, **cfg)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.yaml")):
        cfg = load_config(path)
        assert cfg.trials == 20


def test_unknown_config_key_is_an_error(tmp_path, capsys):
    path = scalar_config(tmp_path, learning_rate=0.1)
    assert main(["optimize", "--config", str(path)]) == 2
    assert "learning_rate" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        parse_config({"problem": "scalar-gain"})


def test_missing_config_file(tmp_path):
    assert main(["optimize", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_scalar_optimize_artifacts(tmp_path):
    path = scalar_config(tmp_path)
    assert main(["optimize", "--config", str(path)]) == 0
    out = tmp_path / "out"
    trials = sorted(out.glob("trial_*.csv"))
    assert len(trials) == 20
    for t in trials:
        rows = read_csv(t)
        assert len(rows) == 501
        assert abs(float(rows[-1]["mu_0"])) < 0.25
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["trial_files"] == [t.name for t in trials]
    assert len(meta["config_digest"]) == 64 and meta["version"]
    assert meta["seed"] == 0
    assert load_config(out / "config.yaml").digest() == meta["config_digest"]
    sidecar = json.loads((out / "trial_000.json").read_text())
    assert sidecar["seed"] == 0 and sidecar["config_digest"] == meta["config_digest"]
    summary = read_csv(out / "summary.csv")
    assert [int(r["k"]) for r in summary] == list(range(0, 501, 50))
    assert all(int(r["trials"]) == 20 for r in summary)
    first, last = summary[0], summary[-1]
    assert float(first["mean_cost"]) == pytest.approx(1.0)
    assert float(last["min_cost"]) <= float(last["mean_cost"]) <= float(last["max_cost"]) < 0.02


def test_zero_iterations_records_only_start(tmp_path):
    path = scalar_config(tmp_path, N=0, trials=1)
    assert main(["optimize", "--config", str(path)]) == 0
    rows = read_csv(tmp_path / "out" / "trial_000.csv")
    assert len(rows) == 1 and float(rows[0]["mu_0"]) == 2.0


def test_parallel_trials_match_sequential(tmp_path):
    seq = scalar_config(tmp_path, N=30, trials=4, output=str(tmp_path / "seq"))
    assert main(["optimize", "--config", str(seq), "--threads", "1"]) == 0
    assert main(["optimize", "--config", str(seq), "--threads", "4", "--out", str(tmp_path / "par")]) == 0
    for t in range(4):
        name = f"trial_{t:03d}.csv"
        a = [r for r in read_csv(tmp_path / "seq" / name)]
        b = [r for r in read_csv(tmp_path / "par" / name)]
        assert [r["mu_0"] for r in a] == [r["mu_0"] for r in b]


def test_seed_flag_changes_trajectories(tmp_path):
    path = scalar_config(tmp_path, N=5, trials=1)
    main(["optimize", "--config", str(path), "--out", str(tmp_path / "a")])
    main(["optimize", "--config", str(path), "--seed", "7", "--out", str(tmp_path / "b")])
    a = read_csv(tmp_path / "a" / "trial_000.csv")[-1]["mu_0"]
    b = read_csv(tmp_path / "b" / "trial_000.csv")[-1]["mu_0"]
    assert a != b
    assert json.loads((tmp_path / "b" / "metadata.json").read_text())["seed"] == 7


def test_diverged_trial_does_not_stop_others(tmp_path, capsys):
    path = write_config(tmp_path, problem="scalar-pole", mu0=[0.5],
                        distribution={"kind": "log-uniform", "support": [1e-3, 1e3]}, M=1,
                        policy={"kind": "constant", "alpha": 5.0}, N=3, trials=2, seed=0,
                        checkpoint_every=1, divergence_bound=100.0, output=str(tmp_path / "out"))
    assert main(["optimize", "--config", str(path)]) == 0
    meta = json.loads((tmp_path / "out" / "metadata.json").read_text())
    assert meta["terminations"] == {"0": "completed", "1": "diverged"}
    assert len(meta["trial_files"]) == 2
    sidecar = json.loads((tmp_path / "out" / "trial_001.json").read_text())
    assert "exceeds" in sidecar["message"]


def test_bode_wave_decays(tmp_path, capsys):
    path = write_config(tmp_path, problem="wave", distribution={"kind": "log-uniform", "support": [1e-2, 1e4]},
                        M=10, policy={"kind": "constant", "alpha": 0.0}, N=0)
    assert main(["bode", "--config", str(path), "--points", "20", "--lo", "1e-2", "--hi", "1e4"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert len(rows) == 20
    mags = np.array([float(r["abs_G_00"]) for r in rows])
    assert np.all(np.isfinite(mags))
    assert mags[-1] < 1e-3 < mags[0]
    assert all(r["flagged"] == "0" for r in rows)


def test_bode_zero_system(tmp_path, capsys):
    path = write_config(tmp_path, problem="scalar-gain", distribution={"kind": "log-uniform", "support": [1, 2]},
                        M=1, policy={"kind": "constant", "alpha": 0.0}, N=0)
    assert main(["bode", "--config", str(path), "--mu", "0", "--points", "5"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert [float(r["abs_G_00"]) for r in rows] == [0.0] * 5


def test_bode_flags_undamped_resonance(tmp_path, capsys):
    path = write_config(tmp_path, problem="wave", problem_options={"damping": 0.0},
                        distribution={"kind": "log-uniform", "support": [1e-2, 1e4]}, M=1,
                        policy={"kind": "constant", "alpha": 0.0}, N=0)
    out_csv = tmp_path / "bode.csv"
    assert main(["bode", "--config", str(path), "--omegas", "1.0", repr(math.pi / 2), "3.0",
                 "--csv", str(out_csv)]) == 0
    rows = read_csv(out_csv)
    assert [r["flagged"] for r in rows] == ["0", "1", "0"]
    assert "flagged" in capsys.readouterr().err


def test_verify_lemma(capsys):
    assert main(["verify", "lemma"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out


def test_verify_oracle_agreement(capsys):
    assert main(["verify", "oracle-agreement"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_verify_unknown_suite(capsys):
    with pytest.raises(SystemExit) as info:
        main(["verify", "everything"])
    assert info.value.code == 2
    assert "invalid choice" in capsys.readouterr().err


def test_h2norm_scalar(tmp_path, capsys):
    path = write_config(tmp_path, problem="scalar-pole", distribution={"kind": "log-uniform", "support": [1, 2]},
                        M=1, policy={"kind": "constant", "alpha": 0.0}, N=0)
    assert main(["h2norm", "--config", str(path), "--mu", "3"]) == 0
    cost = float(re.search(r"\(cost ([^)]+)\)", capsys.readouterr().out).group(1))
    assert cost == pytest.approx(3.0, abs=1e-10)


def test_grad_check_scalar(tmp_path, capsys):
    path = write_config(tmp_path, problem="scalar-gain", mu0=[2.0],
                        distribution={"kind": "log-uniform", "support": [1e-4, 1e4]}, M=10,
                        policy={"kind": "constant", "alpha": 0.0}, N=0)
    assert main(["grad-check", "--config", str(path), "--repetitions", "500"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_grad_check_without_realization_uses_differences(tmp_path, capsys):
    path = write_config(tmp_path, problem="wave", mu0=[-0.5, -1.0],
                        distribution={"kind": "log-uniform", "support": [1e-2, 1e4]}, M=200,
                        policy={"kind": "constant", "alpha": 0.0}, N=0, problem_options={"fd_order": 60})
    main(["grad-check", "--config", str(path), "--repetitions", "20", "-k", "1e9"])
    assert "central differences" in capsys.readouterr().out
