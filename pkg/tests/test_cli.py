import pytest

from treedomain.cli import main


def test_gen_then_check_roundtrip(tmp_path, capsys):
    dump = tmp_path / "dump.txt"
    assert main(["gen", "--depth", "2", "--ranks", "3", "--out", str(dump)]) == 0
    assert main(["check", "--dumps", str(dump)]) == 0
    assert "passed" in capsys.readouterr().out


def test_check_reports_violation_with_exit_one(tmp_path, capsys):
    dump = tmp_path / "dump.txt"
    main(["gen", "--depth", "1", "--ranks", "2", "--out", str(dump)])
    text = dump.read_text()
    lines = text.splitlines()
    victim = next(i for i, ln in enumerate(lines)
                  if ln.startswith("grid") and "neighbors=-" not in ln.split()[5])
    # swap a populated neighbor slot for a bogus uid
    fields = lines[victim].split()
    slots = fields[5][len("neighbors="):].split(",")
    slots[[i for i, s in enumerate(slots) if s != "-"][0]] = "1.999.0"
    fields[5] = "neighbors=" + ",".join(slots)
    lines[victim] = " ".join(fields)
    dump.write_text("\n".join(lines) + "\n")
    assert main(["check", "--dumps", str(dump)]) == 1
    assert "violation" in capsys.readouterr().out


def test_fuzz_command(tmp_path, capsys):
    assert main(["fuzz", "--seed", "2", "--ops", "5", "--ranks", "3",
                 "--depth", "1", "--max-depth", "2"]) == 0
    assert "fuzz passed" in capsys.readouterr().out


def test_tables_command_matches_paper(tmp_path):
    out = tmp_path / "tables"
    assert main(["tables", "--ranks", "6", "--out", str(out)]) == 0
    regular = (out / "pattern_regular.csv").read_text()
    joined = (out / "pattern_joined.csv").read_text()
    assert regular.splitlines()[5] == "5,5,4,3,2,1,0"
    assert joined.splitlines()[1] == "1 & 7,1,0,5,4,3,2"


def test_bench_and_report_commands(tmp_path, capsys):
    out = tmp_path / "bench"
    assert main(["bench", "--from", "2", "--to", "3", "--ranks", "2,4",
                 "--mode", "both", "--out", str(out), "--plot"]) == 0
    assert (out / "bench_summary.csv").exists()
    assert (out / "bench_summary.png").exists()
    assert (out / "stats_decentral_r2.csv").exists()
    figure = tmp_path / "fig.png"
    assert main(["report", "--summary", str(out / "bench_summary.csv"),
                 "--out", str(figure)]) == 0
    assert figure.exists() and figure.stat().st_size > 0


def test_usage_error_exit_code(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["gen", "--depth", "0", "--ranks", "2", "--out", "-"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["bench", "--from", "2", "--to", "4", "--ranks", "2"])
    assert err.value.code == 2


def test_gen_writes_to_stdout(capsys):
    assert main(["gen", "--depth", "1", "--ranks", "2"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("domain factor=2,2,2")
