import subprocess
import sys

import numpy as np
import pytest

from nullwave.cli import SCHEMA, main, parse_config, resolve_key
from nullwave.errors import ConfigError
from nullwave.fields import read_snapshot

SMALL = ["grid.n=32", "grid.L=8", "time.t_end=0.5", "data.width=1.0", "diagnostics.every=1"]


def run_cli(*argv):
    return main([str(a) for a in argv])


# config ------------------------------------------------------------------------

def test_empty_config_gives_defaults():
    cfg = parse_config("")
    rc = cfg.run_config
    assert (rc.n, rc.L, rc.delta, rc.cfl, rc.tensor) == (64, 16.0, 1 / 24, 0.5, "mc-family")
    assert cfg["data.kind"] == "gaussian"


def test_sections_dotted_keys_and_overrides():
    text = "grid.n = 32\n[time]\nt_end = 2.5  # comment\n[physics]\nq0 = off\n"
    cfg = parse_config(text, ["t_end=4"])
    assert cfg["grid.n"] == 32 and cfg["time.t_end"] == 4.0 and cfg["physics.q0"] is False
    assert "t_end = 4.0" in cfg.echo()
    again = parse_config(cfg.echo())
    assert again.values == cfg.values


def test_delta_out_of_range_is_rejected():
    with pytest.raises(ConfigError, match=r"\(0, 1/12\)"):
        parse_config("physics.delta = 0.2")


@pytest.mark.parametrize(
    "text",
    ["grid.nn = 3", "[grid]\nsize = 3", "grid.n = sixty", "physics.q0 = maybe", "data.kind = square", "broken line"],
)
def test_bad_config_is_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_leaf_resolution():
    assert resolve_key("t_end") == "time.t_end"
    assert resolve_key("grid.n") == "grid.n"
    with pytest.raises(ConfigError):
        resolve_key("nope")
    leaves = [k.split(".", 1)[1] for k in SCHEMA]
    for k in SCHEMA:
        if leaves.count(k.split(".", 1)[1]) == 1:
            assert resolve_key(k.split(".", 1)[1]) == k


def test_unknown_override_exits_with_config_code(tmp_path, capsys):
    assert run_cli("simulate", "-o", tmp_path / "r", "bogus.key=1") == 4
    assert "unknown config key" in capsys.readouterr().err


def test_delta_override_exits_with_config_code(tmp_path, capsys):
    assert run_cli("simulate", "-o", tmp_path / "r", "physics.delta=0.2") == 4
    assert "(0, 1/12)" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert run_cli("simulate", "-c", tmp_path / "none.cfg", "-o", tmp_path / "r") == 4


# subcommands -----------------------------------------------------------------------

def test_validate_tensor_exit_codes(capsys, tmp_path):
    assert run_cli("validate-tensor", "zero") == 0
    assert run_cli("validate-tensor", "mc-family", "--c", "1 2 3 4") == 0
    assert run_cli("validate-tensor", "bad-000") == 1
    out = capsys.readouterr().out
    assert "passed" in out.lower() or "pass" in out.lower()
    assert run_cli("validate-tensor", tmp_path / "missing.txt") == 4


def test_simulate_zero_data(tmp_path):
    out = tmp_path / "zero"
    assert run_cli("simulate", "-o", out, *SMALL, "data.kind=zero") == 0
    lines = (out / "energies.csv").read_text().strip().split("\n")
    header = lines[0].split(",")
    assert len(lines) > 2
    for line in lines[1:]:
        row = dict(zip(header, map(float, line.split(","))))
        for col in ("e_nat", "ghost_flux_acc", "e_gst", "e_con", "e_tilde", "sup_w_weighted", "sup_dw_weighted"):
            assert row[col] == 0.0
    for name in ("config.txt", "sup_norms.csv", "decay_report.txt", "initial_norms.txt", "summary.txt"):
        assert (out / name).exists()


def test_simulate_artifacts_are_byte_identical(tmp_path):
    args = [*SMALL, "diagnostics.snapshot_every=2", "diagnostics.checkpoints=0.25 0.375 0.5"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("simulate", "-o", a, *args) == 0
    assert run_cli("simulate", "-o", b, *args) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert any(str(f).startswith("snapshots") for f in files)
    assert "scattering.csv" in {str(f) for f in files}
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()
    assert not list(a.rglob("*.tmp"))
    snap = read_snapshot(a / "snapshots" / "w_000002.nwv")
    assert snap.t > 0 and np.all(np.isfinite(snap.w))


def test_free_run_and_report(tmp_path, capsys):
    out = tmp_path / "free"
    assert run_cli("free-run", "-o", out, *SMALL) == 0
    cfg = parse_config((out / "config.txt").read_text())
    assert cfg["physics.tensor"] == "zero" and cfg["physics.q0"] is False and cfg["time.method"] == "exact"
    capsys.readouterr()
    assert run_cli("report", out, "--window", "0.1 0.5") == 0
    assert "rows = " in capsys.readouterr().out
    assert run_cli("report", tmp_path / "nowhere") == 4


def test_hyperbolicity_abort_exit_code(tmp_path):
    out = tmp_path / "bad"
    rc = run_cli(
        "simulate", "-o", out, *SMALL, "physics.tensor=bad-000", "data.amplitude=0", "data.velocity_amplitude=0.8"
    )
    assert rc == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "nullwave.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "0.1.0" in r.stdout
