import json
import subprocess
import sys

import numpy as np
import pytest

from consensus_response import cli
from consensus_response import netgen as ng


def _run(tmp_path, *args):
    out = tmp_path / "out"
    code = cli.main([*args, "--output", str(out)])
    return code, out.read_text() if out.exists() else None


# configuration


def test_defaults_file_and_flags_precedence(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("command=spectrum\nmodel=ring\nn=9\nk=4\nppd=4\n")
    cfg = cli.parse_config(["--config", str(conf), "--n", "11"])
    assert cfg["n"] == 11 and cfg["k"] == 4 and cfg["ppd"] == 4
    assert cfg["omega0"] == 1.0


def test_unknown_key_and_flag_exit_code(tmp_path, capsys):
    conf = tmp_path / "c.conf"
    conf.write_text("command=spectrum\nmodel=ring\nn=9\nk=2\nwarp=9\n")
    assert cli.main(["--config", str(conf)]) == 2
    assert "warp" in capsys.readouterr().err
    assert cli.main(["spectrum", "--warp", "9"]) == 2


@pytest.mark.parametrize(
    "args",
    [
        ["spectrum", "--model", "ring", "--n", "9", "--k", "3"],
        ["spectrum", "--model", "mesh", "--n", "30", "--k", "4"],
        ["anneal", "--n", "6", "--omega", "0"],
        ["spectrum", "--model", "ring", "--n", "9", "--k", "2", "--restarts", "3"],
        ["spectrum", "--model", "ring", "--n", "9", "--k", "x"],
        ["spectrum", "--recipe", "nope"],
    ],
)
def test_config_errors_exit_2(args, capsys):
    assert cli.main(args) == 2
    assert "config error" in capsys.readouterr().err


def test_command_conflict(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("command=spectrum\n")
    with pytest.raises(cli.ConfigError, match="conflicts"):
        cli.parse_config(["anneal", "--config", str(conf)])


def test_recipes_parse():
    for name in ["ring_kstar", "caveman_kstar", "ring_weights", "anneal_small", "heading_ring"]:
        cfg = cli.parse_config(["--recipe", name])
        assert cfg["command"] in cli.COMMANDS


# commands


def test_complete_graph_spectrum(tmp_path):
    code, text = _run(tmp_path, "spectrum", "--model", "ring", "--n", "11", "--k", "10", "--omega-lo", "0", "--omega-hi", "0.1", "--scale", "linear", "--ppd", "3", "--format", "json")
    assert code == 0
    payload = json.loads(text)
    assert payload["h_squared"][0] == pytest.approx(10)
    np.testing.assert_allclose(payload["h_squared"], [10 / (1 + (10 * w) ** 2) for w in payload["omega"]])
    assert payload["config"]["k"] == "10"


def test_generate_round_trip(tmp_path):
    code, text = _run(tmp_path, "generate", "--model", "caveman", "--n", "12", "--k", "3")
    assert code == 0
    g = ng.parse_edge_list(text)
    assert g == ng.caveman(3, 3)


def test_spectrum_from_edge_list(tmp_path):
    path = tmp_path / "g.txt"
    ng.write_edge_list(ng.ring_lattice(9, 4), path)
    code, text = _run(tmp_path, "spectrum", "--graph", str(path), "--omega-lo", "0.1", "--omega-hi", "1", "--ppd", "2")
    assert code == 0
    assert text.splitlines()[-1].startswith("1.0,")


def test_embedded_config_replay_is_identical(tmp_path):
    first = tmp_path / "a.csv"
    assert cli.main(["kstar", "--model", "ring", "--n", "33", "--ppd", "4", "--output", str(first)]) == 0
    second = tmp_path / "b.csv"
    assert cli.main(["--config", str(first), "--output", str(second)]) == 0
    assert first.read_text() == second.read_text()


def test_json_replay(tmp_path):
    first = tmp_path / "a.json"
    assert cli.main(["calibrate", "--n", "11", "--output", str(first)]) == 0
    second = tmp_path / "b.json"
    assert cli.main(["--config", str(first), "--output", str(second)]) == 0
    assert first.read_text() == second.read_text()
    assert json.loads(first.read_text())["omega0"] == pytest.approx(2.8216, abs=1e-4)


def test_kstar_then_fit(tmp_path):
    curve = tmp_path / "k.csv"
    assert cli.main(["kstar", "--model", "ring", "--n", "257", "--omega-lo", "1e-3", "--omega-hi", "1", "--ppd", "8", "--output", str(curve)]) == 0
    code, text = _run(tmp_path, "fit", "--input", str(curve))
    assert code == 0
    payload = json.loads(text)
    assert 0.3 < payload["gamma"] < 1.0
    assert payload["K0"] > 0


def test_anneal_byte_identical(tmp_path):
    args = ["anneal", "--n", "6", "--omega", "0.3", "--steps", "300", "--restarts", "2", "--seed", "4"]
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert cli.main(args + ["--output", str(a), "--threads", "1"]) == 0
    assert cli.main(args + ["--output", str(b), "--threads", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_optimize_weights_outputs(tmp_path):
    trace = tmp_path / "t.csv"
    code, text = _run(tmp_path, "optimize-weights", "--n", "16", "--omega", "0.3", "--trace-output", str(trace))
    assert code == 0
    assert "distance,weight" in text
    assert "iter,cost,h_squared,constraint_norm" in trace.read_text()


def test_simulate_metrics(tmp_path):
    code, text = _run(tmp_path, "simulate", "--model", "ring", "--n", "11", "--k", "10", "--leader-freq", "0.05", "--duration", "20", "--format", "json")
    assert code == 0
    payload = json.loads(text)
    assert len(payload["H_i"]) == 10 and 0 <= payload["polarization"] <= 1


def test_computation_error_exit_1(tmp_path, capsys):
    path = tmp_path / "g.txt"
    ng.write_edge_list(ng.InteractionGraph(4, [(0, 1), (2, 3)]), path)
    code, _ = _run(tmp_path, "spectrum", "--graph", str(path), "--omega-lo", "0", "--omega-hi", "1", "--scale", "linear", "--ppd", "2")
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_atomic_write_leaves_no_partial_file(tmp_path, monkeypatch):
    target = tmp_path / "x.txt"
    target.write_text("old")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(OSError):
        cli.write_atomic(str(target), "new")
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "consensus_response.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip()
