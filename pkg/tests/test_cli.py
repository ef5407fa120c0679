import csv

import pytest

from cabsim import cli, simulator as sim

WL = "zipf:2000,0.9,30000,2"
BASE = ["--cache", "128", "--workload", WL]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_cab_writes_csvs(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["run", *BASE, "--adv", "cab", "--policy", "lru", "--budget", "20", "--out", str(out)]) == 0
    summary = rows(out / "summary.csv")
    assert len(summary) == 1
    cost = float(summary[0]["avg_cost_total"])
    assert 1 <= cost <= 4
    assert summary[0]["capacity"] == "128" and summary[0]["workload"] == WL
    segs = rows(out / "segments.csv")
    assert list(segs[0]) == sim.SEGMENT_COLUMNS
    assert f"avg_cost {cost:.6g}" in capsys.readouterr().out


def test_run_static_and_cf(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["run", *BASE, "--adv", "static:1000,40", "--out", str(out)]) == 0
    seg = rows(out / "segments.csv")[0]
    assert (seg["indicator_bits"], seg["update_interval"]) == ("1000", "40")
    assert cli.main(["run", *BASE, "--adv", "cf", "--out", str(out)]) == 0
    s = rows(out / "summary.csv")[0]
    h = float(s["hit_ratio"])
    assert float(s["avg_cost_total"]) == pytest.approx(1 + 3 * (1 - h), rel=1e-5)


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"# experiment\ncache = 128\nworkload = {WL}\nbudget = 7\nadv = cf\nout = {tmp_path / 'x'}\n")
    assert cli.main(["run", "--config", str(cfg), "--budget", "9"]) == 0
    s = rows(tmp_path / "x" / "summary.csv")[0]
    assert s["budget"] == "9" and s["advertiser"] == "cf"


def test_config_errors(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("cache = 128\nmystery = 1\n")
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert "mystery" in capsys.readouterr().err
    cfg.write_text("cache 128\n")
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert cli.main(["run", *BASE, "--budget", "zero"]) == 2
    assert cli.main(["run", *BASE, "--miss-penalty", "1"]) == 2
    assert cli.main(["run", *BASE, "--adv", "static:5"]) == 2
    assert cli.main(["run", "--workload", "zipf:1"]) == 2


def test_io_errors(tmp_path):
    assert cli.main(["run", "--workload", f"file:{tmp_path / 'missing.txt'}"]) == 1
    bad = tmp_path / "bad.txt"
    bad.write_text("a\nb c\n")
    assert cli.main(["run", "--cache", "4", "--workload", f"file:{bad}", "--out", str(tmp_path)]) == 1
    assert cli.main(["run", "--config", str(tmp_path / "nope.cfg")]) == 1


def test_file_workload(tmp_path):
    trace = tmp_path / "t.txt"
    trace.write_text("".join(f"k{i % 37}\n" for i in range(5000)))
    assert cli.main(["run", "--cache", "16", "--workload", f"file:{trace}", "--adv", "cf", "--out", str(tmp_path)]) == 0


def test_grid_outputs_table(tmp_path, capsys):
    out = tmp_path / "g"
    assert cli.main(["grid", *BASE, "--out", str(out), "--jobs", "2"]) == 0
    table = rows(out / "grid.csv")
    lim = sim.Scenario(capacity=128).limits
    assert len(table) == len(sim.size_grid(lim)) * len(sim.interval_grid(lim))
    feasible = [float(r["avg_cost"]) for r in table if r["feasible"] == "True"]
    best = float(capsys.readouterr().out.split("avg_cost")[1])
    assert best == pytest.approx(min(feasible), rel=1e-5)


def test_grid_empty_result(tmp_path, capsys):
    args = ["grid", "--cache", "64", "--workload", "zipf:100000,0,20000", "--budget", "0.5",
            "--imin-bpe", "15", "--out", str(tmp_path)]
    assert cli.main(args) == 3
    assert "no feasible static configuration" in capsys.readouterr().err


def test_sweep_budget(tmp_path):
    out = tmp_path / "w"
    assert cli.main(["sweep", "budget", "10", "20", "40", "80", *BASE, "--out", str(out)]) == 0
    s = rows(out / "summary.csv")
    assert [r["budget"] for r in s] == ["10", "20", "40", "80"]
    assert all(r["sweep_dimension"] == "budget" for r in s)


def test_single_value_sweep_equals_run(tmp_path):
    assert cli.main(["sweep", "cache", "128", *BASE, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", *BASE, "--out", str(tmp_path / "b")]) == 0
    a = rows(tmp_path / "a" / "summary.csv")[0]
    b = rows(tmp_path / "b" / "summary.csv")[0]
    assert a["avg_cost_total"] == b["avg_cost_total"]


def test_sweep_interval_and_bpe(tmp_path):
    out = tmp_path / "i"
    args = ["--adv", "static:1024,16:full", "--no-police", *BASE, "--out", str(out)]
    assert cli.main(["sweep", "interval", "16", "128", "1024", *args]) == 0
    fn = [float(r["fn_ratio"]) for r in rows(out / "summary.csv")]
    assert fn == sorted(fn)
    assert cli.main(["sweep", "bpe", "2", "8", *args]) == 0
    assert [r["advertiser"] for r in rows(out / "summary.csv")] == ["static:256,16:full", "static:1024,16:full"]
    assert cli.main(["sweep", "interval", "10", *BASE, "--adv", "cab"]) == 2
    assert cli.main(["sweep", "interval", "x", "--adv", "static:10,10", *BASE]) == 2


def test_bad_subcommand():
    with pytest.raises(SystemExit) as exc:
        cli.main(["launch"])
    assert exc.value.code == 2
