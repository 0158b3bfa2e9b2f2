import csv
import io

import pytest

from semicentral import cli
from semicentral.vcover import gen_gnp, to_dimacs


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr().out
    return code, out


def rows(text):
    return list(csv.DictReader(io.StringIO(text.split("cover:")[0])))


@pytest.fixture
def c5(tmp_path):
    p = tmp_path / "c5.dimacs"
    p.write_text("p edge 5 5\ne 1 2\ne 2 3\ne 3 4\ne 4 5\ne 5 1\n")
    return str(p)


def test_solve_p3_sequential(tmp_path, capsys):
    p = tmp_path / "p3.dimacs"
    p.write_text("p edge 3 2\ne 1 2\ne 2 3\n")
    code, out = run(capsys, "solve", str(p), "--scheduler", "sequential")
    (row,) = rows(out)
    assert code == 0 and row["mvc_size"] == "1"
    assert list(row) == cli.COLUMNS


def test_solve_c5_semi_and_central_agree(c5, capsys, tmp_path):
    log = tmp_path / "runs.csv"
    sizes = []
    for sched in ("semi", "central"):
        code, out = run(capsys, "solve", c5, "--workers", "4", "--scheduler", sched,
                        "--csv", str(log))
        assert code == 0
        sizes.append(rows(out)[0]["mvc_size"])
    assert sizes == ["3", "3"]
    logged = list(csv.DictReader(open(log)))
    assert len(logged) == 2 and logged[0]["failed_requests"] == "0"


def test_print_cover(c5, capsys):
    code, out = run(capsys, "solve", c5, "--workers", "2", "--print-cover")
    cover = [int(v) for v in out.split("cover:")[1].split()]
    assert code == 0 and len(cover) == 3


@pytest.mark.parametrize("transport", ["local", "tcp"])
def test_real_time_transports(c5, capsys, transport):
    code, out = run(capsys, "solve", c5, "--workers", "2", "--transport", transport,
                    "--term-timeout", "0.05")
    assert code == 0 and rows(out)[0]["mvc_size"] == "3"


def test_timeout_exit_code_and_row(capsys):
    code, out = run(capsys, "solve", "--gen", "150,0.1,1", "--scheduler", "sequential",
                    "--time-limit", "0.3")
    (row,) = rows(out)
    assert code == 2 and row["wall_seconds"] == "TIMEOUT" and row["mvc_size"] == "TIMEOUT"


def test_failures_exit_one(tmp_path, capsys):
    assert cli.main(["solve", str(tmp_path / "missing.dimacs")]) == 1
    assert cli.main(["solve", "--gen", "5,0.5,1", "--scheduler", "sequential",
                     "--workers", "3"]) == 1
    assert cli.main(["solve", "--scheduler", "bogus"]) == 1
    bad = tmp_path / "bad.dimacs"
    bad.write_text("e 1 2\n")
    assert cli.main(["solve", str(bad)]) == 1


def test_gen_count_zero_and_reproducible(tmp_path, capsys):
    assert cli.main(["gen", "--n", "10", "--p", "0.3", "--count", "0", "--outdir",
                     str(tmp_path / "none")]) == 0
    assert list((tmp_path / "none").iterdir()) == []
    for d in ("a", "b"):
        assert cli.main(["gen", "--n", "600", "--p", "4/(n-1)", "--count", "100", "--seed", "3",
                         "--outdir", str(tmp_path / d)]) == 0
    a = sorted((tmp_path / "a").iterdir())
    b = sorted((tmp_path / "b").iterdir())
    assert len(a) == 100
    assert [x.read_bytes() for x in a] == [y.read_bytes() for y in b]


def test_gen_unwritable(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["gen", "--n", "5", "--p", "0.5", "--outdir", str(blocker / "sub")]) == 1


def test_verify_corpus(tmp_path, capsys):
    cli.gen_files(12, 0.3, 20, 5, tmp_path)
    code, out = run(capsys, "verify", str(tmp_path))
    assert code == 0 and "20 instances, 0 failures" in out


def test_verify_flags_wrong_answers(tmp_path):
    cli.gen_files(10, 0.4, 3, 1, tmp_path)
    solvers = cli.default_solvers()
    solvers["stub"] = lambda g: 0
    report = cli.verify_dir(tmp_path, solvers)
    assert report and not any(r["ok"] for r in report)


def test_verify_empty_dir(tmp_path, capsys):
    assert cli.verify_dir(tmp_path) == []
    code, out = run(capsys, "verify", str(tmp_path))
    assert code == 0 and "0 instances" in out


def test_bench_speedup_column(capsys):
    code, out = run(capsys, "bench", "--gen", "30,0.2,1", "--workers", "1,2",
                    "--schedulers", "semi,central", "--term-timeout", "0.05",
                    "--transport", "local")
    table = rows(out)
    assert code == 0 and len(table) == 4
    assert list(table[0]) == cli.BENCH_COLUMNS
    for r in table:
        assert float(r["speedup"]) > 0
        if r["workers"] == "1":
            assert r["speedup"] == "1.000"


def test_add_speedups_with_supplied_sequential_time():
    rs = [{"scheduler": "semi", "encoding": "basic", "workers": 4, "wall_seconds": "2.0"}]
    assert cli.add_speedups(rs, seq_time=8.0)[0]["speedup"] == "4.000"
