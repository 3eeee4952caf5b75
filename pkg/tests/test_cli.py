import csv
import io
import socket
import subprocess
import sys
import threading

import pytest

from fourstate.cli import build_parser, main

# small lossless session that runs in well under a second
FAST_SESSION = ["--set", "code=peg-3-6-n4096", "--set", "k_rep=6", "--set", "batch_size=100000",
                "--set", "distance_km=0", "--set", "xi=0", "--set", "eta=1", "--set", "block_snr=2.0",
                "--set", "xi_tol=0.05", "--set", "t_tol=0.1"]


def report_values(text):
    out = {}
    for line in text.splitlines():
        parts = line.split()
        if len(parts) >= 2:
            try:
                out[parts[0]] = float(parts[1])
            except ValueError:
                pass
    return out


def read_rows(text):
    return list(csv.DictReader(io.StringIO(text)))


# -- keyrate ---------------------------------------------------------------

def test_keyrate_lossless(capsys):
    assert main(["keyrate", "--d", "0", "--xi", "0", "--eta", "1", "--beta", "1", "--alpha", "0.5"]) == 0
    vals = report_values(capsys.readouterr().out)
    assert vals["K_real"] > 0 and vals["I(x:y)"] > 0
    # the four-state correlation Z < Z_EPR leaves Eve a residue even on the identity channel
    assert vals["K_real"] == pytest.approx(vals["I(x:y)"] - vals["S(y:E)"], abs=1e-5)
    assert 0 < vals["S(y:E)"] < vals["I(x:y)"]


def test_keyrate_optimised(capsys, tmp_path):
    out = tmp_path / "k.csv"
    code = main(["keyrate", "--d", "50", "--xi", "0.004", "--eta", "0.6", "--beta", "0.8", "--optimize-alpha",
                 "--csv", str(out)])
    assert code == 0
    vals = report_values(capsys.readouterr().out)
    assert vals["K_real"] > 0 and 0.05 <= vals["alpha"] <= 1.5
    rows = read_rows(out.read_text())
    assert len(rows) == 1 and float(rows[0]["distance_km"]) == 50


@pytest.mark.parametrize("argv", [
    ["keyrate", "--d", "10", "--xi", "-1", "--beta", "0.8", "--alpha", "0.5"],
    ["keyrate", "--d", "-3", "--xi", "0.01", "--beta", "0.8", "--alpha", "0.5"],
    ["keyrate", "--d", "10", "--xi", "0.01", "--beta", "1.5", "--alpha", "0.5"],
    ["keyrate", "--d", "10", "--xi", "0.01", "--beta", "0.8", "--eta", "0"],
    ["keyrate", "--d", "10", "--xi", "0.01"],
    ["keyrate", "--d", "10", "--xi", "0.01", "--beta", "0.8", "--alpha", "0.5", "--va", "0.5"],
    ["nonsense"],
])
def test_invalid_flags_exit_2(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err


def test_keyrate_no_key_exit_3(capsys):
    assert main(["keyrate", "--d", "300", "--xi", "0.05", "--beta", "0.8", "--alpha", "0.5"]) == 3
    assert main(["keyrate", "--d", "300", "--xi", "0.05", "--beta", "0.8", "--optimize-alpha"]) == 3
    assert "no positive key" in capsys.readouterr().err


# -- curve -------------------------------------------------------------------

def test_curve_defaults_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["curve", "--out", str(a)]) == 0
    assert main(["curve", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = read_rows(a.read_text())
    xis = sorted({float(r["xi"]) for r in rows})
    assert xis == [0.002, 0.004, 0.006, 0.008, 0.01]
    dists = sorted({float(r["distance_km"]) for r in rows})
    assert dists[0] == 0 and dists[-1] == 400 and len(dists) == 81
    assert {float(r["beta"]) for r in rows} == {0.8}
    rate = {(float(r["xi"]), float(r["distance_km"])): float(r["key_rate"]) for r in rows}
    for d in dists:
        col = [rate[(x, d)] for x in xis]
        # top to bottom in xi; strict while the lower curve is still positive
        for hi, lo in zip(col, col[1:]):
            assert hi > lo or hi == lo == 0


def test_curve_single_point(capsys):
    assert main(["curve", "--d", "50", "--xi", "0.004"]) == 0
    rows = read_rows(capsys.readouterr().out)
    assert len(rows) == 1
    assert float(rows[0]["key_rate"]) > 0


def test_curve_rejects_bad_grid(capsys):
    assert main(["curve", "--d", "50:10"]) == 2
    assert main(["curve", "--xi", "0.01,-0.1", "--d", "5"]) == 2


# -- simulate ----------------------------------------------------------------

def test_simulate_rerun_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    argv = ["simulate", "--n", "100000", "--seed", "7", "--d", "20", "--xi", "0.01", "--va", "0.5"]
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    err = capsys.readouterr().err
    assert "seed 7" in err and "t_hat" in err
    assert len(a.read_text().splitlines()) == 100_001
    assert main(argv[:-2] + ["--seed", "8", "--va", "0.5", "--out", str(b)]) == 0
    assert a.read_bytes() != b.read_bytes()


def test_simulate_to_stdout(capsys):
    assert main(["simulate", "--n", "5", "--seed", "1", "--alpha", "0.5"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 6


def test_simulate_requires_amplitude(capsys):
    assert main(["simulate", "--n", "5", "--seed", "1"]) == 2
    assert main(["simulate", "--n", "0", "--seed", "1", "--alpha", "0.5"]) == 2


# -- reconcile -----------------------------------------------------------------

def test_reconcile_table_and_csv(tmp_path, capsys):
    out = tmp_path / "r.csv"
    argv = ["reconcile", "--krep", "8", "--snr-sweep", "0.05:0.2", "--trials", "3", "--csv", str(out)]
    assert main(argv) == 0
    text = capsys.readouterr().out
    assert "beta_measured" in text and "fer" in text
    rows = read_rows(out.read_text())
    assert [float(r["snr"]) for r in rows] == pytest.approx([0.05, 0.1, 0.15, 0.2])
    assert all(int(r["k_rep"]) == 8 for r in rows)
    first = out.read_text()
    assert main(argv) == 0
    assert out.read_text() == first


def test_reconcile_fer_bound_exit_4(capsys):
    # far below the code threshold every frame fails
    assert main(["reconcile", "--snr", "0.5", "--trials", "2", "--max-fer", "0.1", "--max-iters", "20"]) == 4
    assert main(["reconcile", "--snr", "3", "--trials", "2", "--max-fer", "0.1"]) == 0


def test_reconcile_bad_code(capsys):
    assert main(["reconcile", "--code", "no-such-code", "--snr", "1"]) == 2


# -- session -------------------------------------------------------------------

def test_session_both_loopback(tmp_path, capsys):
    key = tmp_path / "key"
    tr = tmp_path / "t.bin"
    assert main(["session", "--key-out", str(key), "--transcript-out", str(tr)] + FAST_SESSION) == 0
    ka = (tmp_path / "key.alice").read_text()
    kb = (tmp_path / "key.bob").read_text()
    assert ka == kb and len(ka.strip()) > 0 and set(ka.strip()) <= {"0", "1"}
    assert tr.stat().st_size > 0
    assert "transcript sha256" in capsys.readouterr().out


def test_session_abort_exit_5(capsys):
    assert main(["session"] + FAST_SESSION + ["--set", "t_tol=1e-5"]) == 5
    assert "ESTIMATION_OUT_OF_BOUNDS" in capsys.readouterr().err


def test_session_bad_setting_exit_2(capsys):
    assert main(["session", "--set", "nonsense=1"]) == 2
    assert main(["session", "--role", "alice"] + FAST_SESSION) == 2


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_session_separate_roles_over_tcp(tmp_path, capsys):
    port = _free_port()
    codes = {}

    def alice():
        codes["alice"] = main(["session", "--role", "alice", "--listen", f"127.0.0.1:{port}", "--timeout", "30",
                               "--key-out", str(tmp_path / "a.key")] + FAST_SESSION)

    th = threading.Thread(target=alice)
    th.start()
    codes["bob"] = main(["session", "--role", "bob", "--connect", f"127.0.0.1:{port}", "--timeout", "30",
                         "--key-out", str(tmp_path / "b.key")] + FAST_SESSION)
    th.join(60)
    assert codes == {"alice": 0, "bob": 0}
    assert (tmp_path / "a.key").read_text() == (tmp_path / "b.key").read_text()


def test_session_config_file(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    pairs = [FAST_SESSION[i + 1] for i in range(0, len(FAST_SESSION), 2)]
    cfg.write_text("# fast session\n" + "\n".join(p.replace("=", " = ") for p in pairs) + "\n")
    assert main(["--config", str(cfg), "session"]) == 0
    assert main(["--config", str(cfg), "session", "--set", "t_tol=1e-5"]) == 5


# -- config and help -----------------------------------------------------------

def test_config_supplies_defaults(tmp_path, capsys):
    cfg = tmp_path / "k.cfg"
    cfg.write_text("d = 0\nxi = 0\neta = 1\nbeta = 1  # perfect reconciliation\nalpha = 0.5\n")
    assert main(["--config", str(cfg), "keyrate"]) == 0
    base = report_values(capsys.readouterr().out)
    assert main(["--config", str(cfg), "keyrate", "--beta", "0.5"]) == 0
    over = report_values(capsys.readouterr().out)
    assert over["beta"] == 0.5 and over["K_real"] < base["K_real"]
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert main(["--config", str(bad), "keyrate"]) == 2
    assert main(["--config", str(tmp_path / "missing.cfg"), "keyrate"]) == 2


@pytest.mark.parametrize("command", ["keyrate", "curve", "simulate"])
def test_help_lists_units(command):
    ap = build_parser()
    sub = ap._subparsers._group_actions[0].choices[command]
    text = sub.format_help()
    assert "km" in text.lower()
    assert "shot-noise units" in text
    for action in sub._actions:
        if action.option_strings and action.dest != "help":
            assert action.help, action.option_strings


def test_every_seeded_command_is_documented():
    ap = build_parser()
    for name, sub in ap._subparsers._group_actions[0].choices.items():
        for action in sub._actions:
            if "--seed" in action.option_strings:
                assert "seed" in action.help


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fourstate", "--help"], capture_output=True, text=True, timeout=60)
    assert res.returncode == 0
    for command in ("keyrate", "curve", "simulate", "reconcile", "session"):
        assert command in res.stdout
