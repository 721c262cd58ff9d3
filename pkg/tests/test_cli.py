import bisect
import csv

import pytest

from iotsec.cli import EXIT_CONFIG, EXIT_LEDGER, EXIT_OK, dispatch
from iotsec.ledger import read_chain


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert dispatch(["run", "--config", "default", "--out", str(out)]) == EXIT_OK
    return out


def test_run_writes_reports(run_dir):
    for name in ("overhead.csv", "op_counts.csv", "costs.csv", "peak_memory.csv", "attacks.csv",
                 "compliance.csv", "census.csv", "risk_trace.csv", "events.jsonl", "summary.txt", "ledger.chain"):
        assert (run_dir / name).stat().st_size > 0, name


def test_verify_untouched_chain(run_dir, capsys):
    assert dispatch(["verify-ledger", str(run_dir / "ledger.chain")]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "Ok"


def test_verify_tampered_chain(run_dir, tmp_path, capsys):
    data = bytearray((run_dir / "ledger.chain").read_bytes())
    blocks = read_chain(run_dir / "ledger.chain")
    starts, pos = [], 0
    for b in blocks:
        starts.append(pos)
        pos += 4 + len(b.encode())
    off = len(data) // 3
    data[off] ^= 0x40
    bad = tmp_path / "tampered.chain"
    bad.write_bytes(bytes(data))
    expected = bisect.bisect_right(starts, off) - 1
    assert dispatch(["verify-ledger", str(bad)]) == EXIT_LEDGER
    captured = capsys.readouterr()
    assert captured.out.strip() == f"FirstBadIndex({expected})"
    assert f"FirstBadIndex({expected})" in captured.err


def test_sweep_twenty_rows(tmp_path):
    assert dispatch(["sweep", "--max", "10000", "--step", "500", "--out", str(tmp_path)]) == EXIT_OK
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["N", "mean_latency_s", "p95_latency_s", "backlog"]
    assert len(rows) - 1 == 20


def test_config_error_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("fleet.count = 0\n")
    assert dispatch(["run", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "fleet.count" in err and len(err.strip().splitlines()) == 1


def test_unknown_key_exit_1(tmp_path, capsys):
    p = tmp_path / "typo.cfg"
    p.write_text("fleeet.count = 10\n")
    assert dispatch(["score", "--config", str(p), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "fleeet" in capsys.readouterr().err


def test_missing_chain_exit_1(tmp_path):
    assert dispatch(["verify-ledger", str(tmp_path / "missing.chain")]) == EXIT_CONFIG


def test_score_existing_log(run_dir, tmp_path, capsys):
    assert dispatch(["score", "--log", str(run_dir / "events.jsonl"), "--out", str(tmp_path)]) == EXIT_OK
    assert "compliance 82%" in capsys.readouterr().out
    assert (tmp_path / "compliance.csv").read_text() == (run_dir / "compliance.csv").read_text()


def test_identical_invocations_identical_files(run_dir, tmp_path):
    assert dispatch(["run", "--out", str(tmp_path)]) == EXIT_OK
    for p in run_dir.iterdir():
        assert (tmp_path / p.name).read_bytes() == p.read_bytes(), p.name


def test_mode_and_seed_flags(tmp_path):
    assert dispatch(["run", "--mode", "perimeter", "--seed", "7", "--out", str(tmp_path)]) == EXIT_OK
    summary = (tmp_path / "summary.txt").read_text()
    assert summary.startswith("mode perimeter toggles ----- seed 7")
    assert not (tmp_path / "ledger.chain").exists()
