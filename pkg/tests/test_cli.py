import csv
import json

import pytest

from quditlmg.cli import (EXIT_CAPACITY, EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, ConfigError, main,
                          run_sweep, validate_config)
from quditlmg.errors import CapacityError

STEADY = """\
mode: steady-observables
V: 1.0
grid:
  d: [2]
  N: [2, 3]
  dissipator: [spin-ladder]
  gammaI: {start: 0.5, stop: 1.0, num: 2}
  gammaC: [0.2]
"""


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_validate_ok():
    cfg = validate_config(STEADY)
    assert cfg.mode == "steady-observables"
    assert len(cfg.points()) == 4
    assert cfg.digest() == validate_config(STEADY + "output: elsewhere\n").digest()


@pytest.mark.parametrize("bad, needle", [
    ("mode: spectrum-gaps\ngrid: {N: [2], gammaI: [1], gammaX: [1]}\n", "gammaX"),
    ("mode: spectrum-gaps\ngrid: {N: [], gammaI: [1]}\n", "empty"),
    ("mode: spectrum-gaps\ngrid: {N: [2], gammaI: [-1]}\n", "negative"),
    ("mode: spectrum-gaps\nV: 0\ngrid: {N: [2], gammaI: [1]}\n", "V"),
    ("mode: nonsense\ngrid: {N: [2], gammaI: [1]}\n", "mode"),
    ("mode: [unclosed\n", "line"),
])
def test_validate_rejects(bad, needle):
    with pytest.raises(ConfigError) as exc:
        validate_config(bad)
    assert any(needle in line for line in exc.value.diagnostics)
    assert all(line.startswith("line") for line in exc.value.diagnostics)


def test_mode_mismatch():
    with pytest.raises(ConfigError):
        validate_config(STEADY, "spectrum-gaps")


def test_capacity_preflight(tmp_path):
    cfg = validate_config(STEADY.replace("N: [2, 3]", "N: [40]").replace("d: [2]", "d: [5]"))
    cfg.output = str(tmp_path / "o")
    with pytest.raises(CapacityError, match="C\\("):
        run_sweep(cfg, workers=1)
    path = _write(tmp_path, STEADY.replace("N: [2, 3]", "N: [40]").replace("d: [2]", "d: [5]"))
    assert main(["steady", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_CAPACITY


def test_rerun_is_byte_identical_and_cached(tmp_path):
    path = _write(tmp_path, STEADY)
    out = str(tmp_path / "out")
    assert main(["steady", "--config", path, "--out", out, "--workers", "1"]) == EXIT_OK
    first = (tmp_path / "out" / "steady-observables.csv").read_bytes()
    meta = json.loads((tmp_path / "out" / "steady-observables.meta.json").read_text())
    assert meta["n_points"] == 4 and meta["n_cached"] == 0 and meta["n_failed"] == 0
    assert main(["steady", "--config", path, "--out", out, "--workers", "1"]) == EXIT_OK
    assert (tmp_path / "out" / "steady-observables.csv").read_bytes() == first
    meta = json.loads((tmp_path / "out" / "steady-observables.meta.json").read_text())
    assert meta["n_cached"] == 4
    rows = list(csv.DictReader(line for line in first.decode().splitlines()
                               if not line.startswith("#")))
    assert [r["N"] for r in rows] == ["2", "2", "3", "3"]
    assert all(0 < float(r["purity"]) <= 1 for r in rows)


def test_resume_after_partial_cache(tmp_path):
    path = _write(tmp_path, STEADY)
    out = tmp_path / "out"
    assert main(["steady", "--config", path, "--out", str(out), "--workers", "1"]) == EXIT_OK
    first = (out / "steady-observables.csv").read_bytes()
    cached = sorted((out / ".cache").rglob("*.json"))
    cached[0].unlink()
    assert main(["steady", "--config", path, "--out", str(out), "--workers", "1"]) == EXIT_OK
    assert (out / "steady-observables.csv").read_bytes() == first
    meta = json.loads((out / "steady-observables.meta.json").read_text())
    assert meta["n_cached"] == 3


def test_partial_failure_exit_code(tmp_path):
    # gammaI = 0 with collective decay only has a degenerate steady state
    text = STEADY.replace("{start: 0.5, stop: 1.0, num: 2}", "[0.0, 1.0]").replace(
        "N: [2, 3]", "N: [2]")
    path = _write(tmp_path, text)
    assert main(["steady", "--config", path, "--out", str(tmp_path / "o"),
                 "--workers", "1"]) == EXIT_PARTIAL
    meta = json.loads((tmp_path / "o" / "steady-observables.meta.json").read_text())
    assert meta["n_failed"] == 1
    assert meta["points"][0]["error"] and meta["points"][1]["error"] is None


def test_config_errors_exit_code(tmp_path, capsys):
    assert main(["gaps", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    path = _write(tmp_path, "mode: spectrum-gaps\ngrid: {N: [2], gammaI: [1], bogus: 1}\n")
    assert main(["gaps", "--config", path, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err
    blocker = tmp_path / "file"
    blocker.write_text("x")
    path = _write(tmp_path, STEADY, "ok.yaml")
    assert main(["steady", "--config", path, "--out", str(blocker / "sub")]) == EXIT_CONFIG


def test_gaps_and_meanfield(tmp_path):
    gaps = _write(tmp_path, "mode: spectrum-gaps\ngrid: {N: [3], gammaI: [0.5], gammaC: [0.2]}\n",
                  "g.yaml")
    assert main(["gaps", "--config", gaps, "--out", str(tmp_path / "g"), "--workers", "1"]) == 0
    rows = list(csv.reader(l for l in (tmp_path / "g" / "spectrum-gaps.csv").read_text()
                           .splitlines() if not l.startswith("#")))
    assert len(rows) == 2
    mf = _write(tmp_path, "mode: meanfield-stream\noptions: {t_end: 20.0}\n"
                "grid: {d: [3], gammaI: [0.5], gammaC: [0.5]}\n", "m.yaml")
    assert main(["meanfield", "--config", mf, "--out", str(tmp_path / "m"),
                 "--workers", "1"]) == 0


def test_cavity_subcommand(tmp_path):
    path = _write(tmp_path, "mode: cavity-map\ncavity: {scenario: roundtrip, d: 4, N: 1000, "
                  "V: 1.0e4, gammaC: 2.0e4, g: 2.0e6, Delta: 1.0e11}\n")
    assert main(["cavity", "--config", path, "--out", str(tmp_path / "c")]) == EXIT_OK
    report = (tmp_path / "c" / "cavity_report.txt").read_text()
    assert "gamma_C" in report
    rows = list(csv.reader((tmp_path / "c" / "cavity_residuals.csv").read_text().splitlines()))
    assert len(rows) > 5


def test_cavity_invalid_hardware(tmp_path, capsys):
    path = _write(tmp_path, "mode: cavity-map\ncavity: {scenario: roundtrip, d: 4, N: 1000, "
                  "V: 1.0e4, gammaC: 2.0e4}\n")
    assert main(["cavity", "--config", path, "--out", str(tmp_path / "c")]) == EXIT_CONFIG
    assert "adiabatic" in capsys.readouterr().err
