import csv
import json
import subprocess
import sys

import pytest

from conftest import SCENARIO_DIR, SHIPPED
from qhpcsim.cli import SWEEP_COLUMNS, UsageError, main, parse_range

SHARED = str(SCENARIO_DIR / "shared_qpu.json")


def _copy_scenario(tmp_path, name, mutate):
    data = json.loads((SCENARIO_DIR / name).read_text())
    mutate(data)
    for f in SCENARIO_DIR.glob("*_isa.json"):
        (tmp_path / f.name).write_text(f.read_text())
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


@pytest.mark.parametrize("path", SHIPPED, ids=lambda p: p.stem)
def test_validate_shipped(path, capsys):
    assert main(["validate-scenario", str(path)]) == 0
    assert capsys.readouterr().out.strip() == "OK"


def test_validate_missing_opcode(tmp_path, capsys):
    p = _copy_scenario(tmp_path, "shared_qpu.json", lambda d: d["workload"]["opcodes"].update({"FOO": 1}))
    assert main(["validate-scenario", p]) == 1
    assert "'FOO'" in capsys.readouterr().out


def test_validate_dedicated_entangling(tmp_path, capsys):
    p = _copy_scenario(tmp_path, "dedicated.json", lambda d: d["workload"].update({"distributed": {"fraction": 0.3}}))
    assert main(["validate-scenario", p]) == 1
    assert "without quantum links" in capsys.readouterr().out


def test_validate_missing_file(tmp_path):
    assert main(["validate-scenario", str(tmp_path / "nope.json")]) == 1


def test_simulate_twice_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", SHARED, "--out", str(tmp_path / d), "--event-log"]) == 0
    for f in ("report.json", "events.log"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_csv(tmp_path):
    assert main(["simulate", SHARED, "--out", str(tmp_path), "--format", "csv", "--seed", "3"]) == 0
    rows = list(csv.reader((tmp_path / "report.csv").open()))
    assert rows[0] == ["section", "entity", "metric", "value"]
    assert ["meta", "", "seed", "3"] in rows


def test_simulate_bad_format_exits_nonzero(tmp_path):
    with pytest.raises(SystemExit) as ei:
        main(["simulate", SHARED, "--out", str(tmp_path), "--format", "xml"])
    assert ei.value.code != 0


def test_simulate_config_error_exit_code(tmp_path):
    p = _copy_scenario(tmp_path, "shared_qpu.json", lambda d: d.update({"horizon_ns": -1}))
    assert main(["simulate", p, "--out", str(tmp_path / "o")]) == 1


def test_env_var_default_out(tmp_path, monkeypatch):
    monkeypatch.setenv("QHPCSIM_OUT", str(tmp_path / "env"))
    assert main(["simulate", SHARED]) == 0
    assert (tmp_path / "env" / "report.json").is_file()


def test_parse_range():
    assert parse_range("1:5:1") == [1, 2, 3, 4, 5]
    assert parse_range("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_range("2:3:10") == [2]
    for bad in ("1:2", "1:2:0", "5:1:1", "a:2:1"):
        with pytest.raises(UsageError):
            parse_range(bad)


def _sweep_rows(out):
    with open(out / "sweep.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def test_sweep_five_points(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", SHARED, "--param", "architecture.qubits=4:8:1", "--out", str(out), "--seed", "10"]) == 0
    rows = _sweep_rows(out)
    assert [r["value"] for r in rows] == ["4", "5", "6", "7", "8"]
    assert [r["seed"] for r in rows] == [str(10 + i) for i in range(5)]
    assert [float(r["capacity_isolated_log2"]) for r in rows] == [4.0, 5.0, 6.0, 7.0, 8.0]
    assert [int(r["capacity_isolated_dim"]) for r in rows] == [2**n for n in range(4, 9)]
    assert list(rows[0]) == SWEEP_COLUMNS
    assert all((out / f"point_{i:03d}" / "report.json").is_file() for i in range(5))


def test_sweep_step_beyond_range_is_single_point(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", SHARED, "--param", "architecture.qubits=4:5:10", "--out", str(out)]) == 0
    assert len(_sweep_rows(out)) == 1


def test_sweep_unknown_path_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as ei:
        main(["sweep", SHARED, "--param", "architecture.nope=1:2:1", "--out", str(tmp_path)])
    assert ei.value.code == 2


def test_sweep_parallel_matches_serial(tmp_path):
    args = ["sweep", SHARED, "--param", "workload.arrival.rate_per_s=20000:40000:10000"]
    assert main(args + ["--out", str(tmp_path / "serial")]) == 0
    assert main(args + ["--out", str(tmp_path / "par"), "--workers", "2"]) == 0
    assert (tmp_path / "serial" / "sweep.csv").read_bytes() == (tmp_path / "par" / "sweep.csv").read_bytes()


def test_runs_are_order_independent(tmp_path):
    dedicated = str(SCENARIO_DIR / "dedicated.json")
    main(["simulate", SHARED, "--out", str(tmp_path / "a1")])
    main(["simulate", dedicated, "--out", str(tmp_path / "b1")])
    main(["simulate", dedicated, "--out", str(tmp_path / "b2")])
    main(["simulate", SHARED, "--out", str(tmp_path / "a2")])
    for x in ("a", "b"):
        assert (tmp_path / f"{x}1" / "report.json").read_bytes() == (tmp_path / f"{x}2" / "report.json").read_bytes()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "qhpcsim", "validate-scenario", SHARED],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0 and r.stdout.strip() == "OK"
