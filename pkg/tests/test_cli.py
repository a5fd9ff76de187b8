import json
import math
import subprocess
import sys

import numpy as np
import pytest

from aokrwalk import __version__
from aokrwalk.cli import build_config, main, parse_config, verify_manifest
from aokrwalk.errors import ConfigError
from aokrwalk.evolution import TALBOT, run_walk
from aokrwalk.observables import momentum_distribution


def write(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    return np.genfromtxt(path, delimiter=",", names=True)


MINIMAL = "coin: GH\nT: 15\nJ: 3\n"


# -- parsing


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL))
    w = cfg.ensemble.walk
    assert (w.k, w.tau_p, w.h, w.talbot) == (1.45, 0.005, 10, TALBOT)
    assert (w.T, w.J, w.coin_label) == (15, 3, "GH")
    assert cfg.defaults["k"] == 1.45 and cfg.defaults["talbot"] == TALBOT
    assert "coin" not in cfg.defaults


def test_range_error_names_key_and_line(tmp_path):
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, "coin: GH\nT: 15\nJ: 3\np_se: 1.5\n"))
    assert err.value.key == "p_se" and err.value.line == 4
    assert "p_se (line 4)" in str(err.value)


def test_tau_p_guard(tmp_path):
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, "tau_p: 2.0\n" + MINIMAL))
    assert err.value.key == "tau_p" and err.value.line == 1


def test_unknown_and_missing_keys(tmp_path):
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, MINIMAL + "kick: 3\n"))
    assert err.value.key == "kick" and err.value.line == 4
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, "coin: GH\nT: 15\n"))
    assert err.value.key == "J"
    with pytest.raises(ConfigError) as err:
        parse_config(write(tmp_path, "T: 15\nJ: 3\n"))
    assert err.value.key == "coin"


def test_type_and_format_errors(tmp_path):
    with pytest.raises(ConfigError, match="integer"):
        parse_config(write(tmp_path, "coin: GH\nT: 1.5\nJ: 3\n"))
    with pytest.raises(ConfigError, match="coin"):
        parse_config(write(tmp_path, "coin: H\nT: 15\nJ: 3\n"))
    with pytest.raises(ConfigError, match="mapping"):
        parse_config(write(tmp_path, "- 1\n- 2\n"))
    with pytest.raises(ConfigError, match="YAML"):
        parse_config(write(tmp_path, "coin: [GH\n"))
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.yaml")


def test_coin_forms(tmp_path):
    cfg = parse_config(write(tmp_path, f"gamma: {1.5 * math.pi}\nalpha: {0.5 * math.pi}\nT: 3\nJ: 3\n"))
    np.testing.assert_allclose(cfg.ensemble.walk.coin.matrix, 1j * np.array([[1, 1], [1, -1]]) / math.sqrt(2), atol=1e-15)
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, "coin: GH\ngamma: 1.0\nalpha: 0.0\nT: 3\nJ: 3\n"))
    cfg = parse_config(write(tmp_path, "init_coin: {gamma: 1.5707963267948966, alpha: 0.0}\n" + MINIMAL))
    assert cfg.ensemble.walk.init_coin.is_unitary()


def test_overrides_win(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL + "p_se: 0.1\n"), overrides={"p_se": 0.05, "seed": 9, "k": None})
    assert cfg.ensemble.walk.p_se == 0.05 and cfg.ensemble.master_seed == 9
    assert cfg.overrides == {"p_se": 0.05, "seed": 9}
    cfg = build_config("walk", {"coin": "GH", "T": 2, "J": 3}, overrides={"gamma": 0.0, "alpha": 0.0})
    assert cfg.ensemble.walk.coin_label.startswith("M(")


def test_command_specific_keys():
    scan = {"T": 3, "J": 3, "gamma_range": [0, 1, 2], "alpha_range": [0, 1, 2]}
    assert build_config("scan", scan).scan.gamma_range == (0.0, 1.0, 2)
    with pytest.raises(ConfigError):
        build_config("scan", {**scan, "coin": "GH"})
    with pytest.raises(ConfigError):
        build_config("scan", {**scan, "gamma_range": [0, 1]})
    sweep = {"coin": "GH", "T": 3, "p_list": [0.0, 0.1], "J_list": [2, 3]}
    assert build_config("sweep", sweep).J_list == [2, 3]
    with pytest.raises(ConfigError):
        build_config("sweep", {**sweep, "p_list": [2.0]})
    with pytest.raises(ConfigError):
        build_config("timeseries", {"coin": "GH", "T": 5, "J": 3, "p_list": [0.1]})


# -- commands


def run(args):
    return main([str(a) for a in args] + ["--quiet"])


def test_walk_command(tmp_path):
    cfg = write(tmp_path, "coin: GH\nT: 20\nJ: 3\nn_trajectories: 1\n")
    out = tmp_path / "out"
    assert run(["walk", "--config", cfg, "--out", out]) == 0
    data = read_csv(out / "distribution.csv")
    final = data[data["t"] == 20]["prob"]
    expected = momentum_distribution(run_walk(parse_config(cfg).ensemble.walk)[-1]).probs
    np.testing.assert_array_equal(final, expected)
    asym = read_csv(out / "asymmetry.csv")
    assert asym.size == 21
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] == __version__ and manifest["master_seed"] == 0
    assert {o["path"] for o in manifest["outputs"]} == {"distribution.csv", "asymmetry.csv"}
    assert manifest["defaults"]["k"] == 1.45
    assert verify_manifest(out) == []


def test_rerun_byte_identical(tmp_path):
    cfg = write(tmp_path, MINIMAL + "p_se: 0.1\nn_trajectories: 300\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["walk", "--config", cfg, "--out", a, "--threads", 1]) == 0
    assert run(["walk", "--config", cfg, "--out", b, "--threads", 3]) == 0
    for name in ("distribution.csv", "asymmetry.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    for m in (ma, mb):
        m.pop("started"), m.pop("finished")
    assert ma == mb


def test_override_recorded(tmp_path):
    cfg = write(tmp_path, MINIMAL + "n_trajectories: 20\n")
    out = tmp_path / "o"
    assert run(["walk", "--config", cfg, "--out", out, "--p-se", 0.05, "--seed", 4, "--trajectories", 30]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["overrides"] == {"p_se": 0.05, "seed": 4, "n_trajectories": 30}
    assert m["config"]["ensemble"]["walk"]["p_se"] == 0.05
    assert m["config"]["ensemble"]["n_trajectories"] == 30 and m["master_seed"] == 4


def test_event_log(tmp_path):
    cfg = write(tmp_path, MINIMAL + "p_se: 0.2\nn_trajectories: 10\n")
    out = tmp_path / "o"
    assert run(["walk", "--config", cfg, "--out", out, "--log-events"]) == 0
    lines = (out / "events.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    assert {"step", "subkick", "branch", "delta_beta"} <= set(rec)
    assert "events.jsonl" in {o["path"] for o in json.loads((out / "manifest.json").read_text())["outputs"]}
    assert run(["scan", "--config", cfg, "--out", tmp_path / "x", "--log-events"]) == 2


def test_unwritable_output(tmp_path):
    cfg = write(tmp_path, "T: 3\nJ: 3\ngamma_range: [0, 1, 2]\nalpha_range: [0, 1, 2]\nn_trajectories: 1\n")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(["scan", "--config", cfg, "--out", blocker / "sub"]) == 5
    assert blocker.read_text() == "x"


def test_failure_leaves_no_files(tmp_path):
    cfg = write(tmp_path, "coin: GH\nT: 10\nJ: 3\nk: 8.0\nn_max: 24\nedge_margin: 2\nn_trajectories: 1\n")
    out = tmp_path / "o"
    assert run(["walk", "--config", cfg, "--out", out]) == 3
    assert not out.exists()
    out.mkdir()
    assert run(["walk", "--config", cfg, "--out", out]) == 3
    assert list(out.iterdir()) == []


def test_config_error_exit(tmp_path, capsys):
    cfg = write(tmp_path, "coin: GH\nT: 15\nJ: 3\np_se: 1.5\n")
    assert run(["walk", "--config", cfg, "--out", tmp_path / "o"]) == 2
    assert "p_se (line 4)" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_scan_sweep_timeseries_commands(tmp_path):
    scan = write(tmp_path, "T: 3\nJ: 3\ngamma_range: [0, 3.14159, 2]\nalpha_range: [0, 3.14159, 3]\nn_trajectories: 1\n", "s.yaml")
    assert run(["scan", "--config", scan, "--out", tmp_path / "s"]) == 0
    rows = (tmp_path / "s" / "s_matrix.csv").read_text().splitlines()
    assert len(rows) == 4 and rows[0].count(",") == 2
    axes = json.loads((tmp_path / "s" / "scan.json").read_text())
    assert len(axes["alpha"]) == 3 and axes["n_sentinel"] == 0

    sweep = write(tmp_path, "coin: GH\nT: 4\np_list: [0.0, 0.2]\nJ_list: [1, 3]\nn_trajectories: 20\n", "w.yaml")
    assert run(["sweep", "--config", sweep, "--out", tmp_path / "w"]) == 0
    assert len((tmp_path / "w" / "sweep.csv").read_text().splitlines()) == 5

    ts = write(tmp_path, "coin: GH\nT: 12\nJ: 3\np_list: [0.1]\nn_trajectories: 50\n", "t.yaml")
    assert run(["timeseries", "--config", ts, "--out", tmp_path / "t"]) == 0
    fits = json.loads((tmp_path / "t" / "fits.json").read_text())
    assert fits[0]["early"]["t_window"] == [2, 4] and fits[0]["regime"] in ("quantum", "crossover", "classical")


def test_timeseries_fit_failure_exit(tmp_path):
    ts = write(tmp_path, "coin: GH\nT: 9\nJ: 3\np_list: [0.0]\nn_trajectories: 1\n")
    out = tmp_path / "t"
    assert run(["timeseries", "--config", ts, "--out", out]) == 4
    m = json.loads((out / "manifest.json").read_text())
    assert m["exit_code"] == 4
    assert json.loads((out / "fits.json").read_text())[0]["early"] is None


def test_manifest_detects_truncation(tmp_path):
    cfg = write(tmp_path, "coin: W\nT: 2\nJ: 1\nn_trajectories: 1\n")
    out = tmp_path / "o"
    assert run(["walk", "--config", cfg, "--out", out]) == 0
    data = out / "distribution.csv"
    data.write_bytes(data.read_bytes()[:-10])
    assert verify_manifest(out) == ["distribution.csv"]


def test_rate_command(capsys):
    assert main(["rate", "--tau-se", "1", "--delta", "-1000", "--Delta", "1000"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.58)
    assert main(["rate", "--tau-se", "1", "--delta", "0", "--Delta", "1000"]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "aokrwalk.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
