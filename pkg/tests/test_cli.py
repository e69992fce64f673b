import csv
import io
import json

import numpy as np
import pytest

from milnorbox.cli import main, read_config
from milnorbox.maps import GEOMETRY, get_map
from milnorbox.phase import Grid, cover_from_csv

REPORT_KEYS = {"map", "params", "attractors", "outliers", "nonwandering_remainder_csv_path"}
ATTRACTOR_KEYS = {"boxes_csv_path", "basin_fraction", "flags", "violations"}
FLAG_KEYS = {"has_delta_ball", "closure_of_interior", "transitive", "strongly_transitive", "sensitive",
             "sensitivity_r"}


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def validate_report(report):
    assert REPORT_KEYS <= set(report)
    for a in report["attractors"]:
        assert ATTRACTOR_KEYS <= set(a)
        assert FLAG_KEYS <= set(a["flags"])
        assert 0.0 <= a["basin_fraction"] <= 1.0


def analyze(tmp_path, *extra):
    out = tmp_path / "report.json"
    code = main(["analyze", *extra, "--out", str(out)])
    return code, out


def test_analyze_counterexample(tmp_path):
    code, out = analyze(tmp_path, "--map", "counterexample", "--delta", "0.4", "--depth", "8", "--grid", "101")
    assert code == 0
    report = json.loads(out.read_text())
    validate_report(report)
    assert len(report["attractors"]) == 1
    a = report["attractors"][0]
    assert a["violations"] and a["basin_fraction"] == 1.0
    grid = Grid.from_depth(get_map("counterexample").space, 8)
    cover = cover_from_csv((tmp_path / a["boxes_csv_path"]).read_text(), grid)
    assert cover.sorted_keys() == [(-1,), (128,)]
    rem = cover_from_csv((tmp_path / report["nonwandering_remainder_csv_path"]).read_text(), grid)
    assert not rem.keys


def test_analyze_octupling(tmp_path):
    code, out = analyze(tmp_path, "--map", "mtupling:8", "--delta", "0.1", "--depth", "10", "--grid", "20")
    assert code == 0
    report = json.loads(out.read_text())
    validate_report(report)
    [a] = report["attractors"]
    assert a["flags"]["transitive"] and a["flags"]["sensitive"]


def test_csv_round_trip(tmp_path):
    analyze(tmp_path, "--map", "counterexample", "--delta", "0.4", "--depth", "6", "--grid", "11")
    report = json.loads((tmp_path / "report.json").read_text())
    grid = Grid.from_depth(get_map("counterexample").space, 6)
    path = tmp_path / report["attractors"][0]["boxes_csv_path"]
    from milnorbox.phase import cover_to_csv
    assert cover_to_csv(cover_from_csv(path.read_text(), grid)) == path.read_text()


def test_validation_exit_codes(capsys, tmp_path):
    assert run(capsys, "analyze", "--map", "bogus")[0] == 2
    assert run(capsys, "analyze")[0] == 2
    assert run(capsys, "analyze", "--map", "counterexample", "--delta", "-1")[0] == 2
    assert run(capsys, "omega", "--map", "counterexample", "--x", "1.5")[0] == 2
    assert run(capsys, "omega", "--map", "counterexample")[0] == 2
    assert run(capsys, "nonsense")[0] == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert run(capsys, "analyze", "--config", str(bad))[0] == 2


def test_budget_exit_code(capsys):
    code, _, err = run(capsys, "wordsearch", "--center", "2.5,1.2", "--radius", "0.05", "--max-len", "4")
    assert code == 3 and "best distance" in err


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_omega_examples(capsys):
    code, out, _ = run(capsys, "omega", "--map", "counterexample", "--x", "0.3")
    assert code == 0 and len(_rows(out)) == 2
    code, out, _ = run(capsys, "omega", "--map", "mtupling:2", "--x", "0")
    assert code == 0 and len(_rows(out)) == 1
    code, out, _ = run(capsys, "omega", "--map", "skewproduct", "--x", "0.1,0,0", "--depth", "9")
    rows = _rows(out)
    assert code == 0 and rows
    for r in rows:
        lo = np.array([float(r["lo_2"]), float(r["lo_3"])])
        hi = np.array([float(r["hi_2"]), float(r["hi_3"])])
        in_D = lo[0] < GEOMETRY.d_cut
        has_q = np.all(lo <= GEOMETRY.q) and np.all(np.array(GEOMETRY.q) <= hi)
        assert in_D or has_q


def test_ifs_verify(capsys, tmp_path):
    code, out, _ = run(capsys, "ifs", "--verify", "--samples", "10000", "--boxes-out", str(tmp_path / "k.csv"),
                       "--depth", "4")
    rep = json.loads(out)
    assert code == 0
    assert rep["fiber_properties"]["pass"] == [True, True, True, True]
    assert len(rep["fiber_properties"]["margin"]) == 4
    assert (tmp_path / "k.csv").read_text().startswith("depth,")


def test_wordsearch(capsys):
    code, out, _ = run(capsys, "wordsearch", "--center", "-1.5,0.5", "--radius", "0.2")
    rep = json.loads(out)
    assert code == 0 and set(rep["word"]) <= set("246") and rep["certificate"]["holds"]
    code, out, _ = run(capsys, "wordsearch", "--radius", "10")
    assert json.loads(out)["word"] == ""


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# counterexample run\nmap = counterexample\ndelta = 0.4\ndepth=6\ngrid = 21\ntail = 300\n")
    assert read_config(cfg)["delta"] == "0.4"
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["analyze", "--config", str(cfg), "--out", str(a / "r.json")]) == 0
    assert main(["analyze", "--config", str(cfg), "--out", str(b / "r.json")]) == 0
    assert (a / "r.json").read_bytes() == (b / "r.json").read_bytes()
    assert (a / "attractor_0.csv").read_bytes() == (b / "attractor_0.csv").read_bytes()
    assert main(["analyze", "--config", str(cfg), "--depth", "7", "--out", str(a / "r7.json")]) == 0
    assert json.loads((a / "r7.json").read_text())["params"]["depth"] == 7
    assert json.loads((a / "r.json").read_text())["params"]["depth"] == 6


def test_worker_count_does_not_change_report(tmp_path):
    args = ["analyze", "--map", "counterexample", "--delta", "0.4", "--depth", "8", "--grid", "40"]
    assert main(args + ["--workers", "1", "--out", str(tmp_path / "w1" / "r.json")]) == 0
    assert main(args + ["--workers", "3", "--out", str(tmp_path / "w3" / "r.json")]) == 0
    assert (tmp_path / "w1" / "r.json").read_bytes() == (tmp_path / "w3" / "r.json").read_bytes()


@pytest.mark.parametrize("argv", [["--help"], ["analyze", "--help"]])
def test_help(capsys, argv):
    assert main(argv) == 0
    assert "usage" in capsys.readouterr().out
