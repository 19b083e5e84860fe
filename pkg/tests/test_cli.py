import json

import pytest

from skim.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["fixture", "--seed", "1", "--n", "12", "--m", "24", "--k", "8",
                 "--outliers", "2x100", "--out", str(d / "fx.skb")]) == 0
    assert main(["calibrate", "--in", str(d / "fx.skb"), "--out", str(d / "cal.skb")]) == 0
    assert main(["record-errors", "--in", str(d / "cal.skb"), "--out", str(d / "E.skb")]) == 0
    return d


def test_quantize_trace_and_report(workdir, capsys):
    d = workdir
    capsys.readouterr()
    rc = main(["quantize", "--in", str(d / "cal.skb"), "--errors", str(d / "E.skb"),
               "--bit", "3.25", "--out", str(d / "q.skq"), "--trace", "--oracle"])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "step,loss,lr"
    step, loss, lr = lines[1].split(",")
    assert int(step) == 0 and float(loss) >= 0 and float(lr) == 0.01
    report = json.loads((d / "q.json").read_text())
    assert report["avg_bits"] >= 3.25
    assert main(["report", "--in", str(d / "q.json"), "--out", str(d / "rep")]) == 0
    for name in ("layer_rows.csv", "layer_bits.csv", "layer_trace.csv", "layer_bits.png", "layer_loss.png"):
        assert (d / "rep" / name).stat().st_size > 0
    rows = (d / "rep" / "layer_rows.csv").read_text().splitlines()
    assert rows[0].startswith("row,bits,final_error") and len(rows) == 13


def test_uniform_3bit(workdir):
    d = workdir
    assert main(["quantize", "--in", str(d / "cal.skb"), "--bit", "3", "--no-scale", "--no-mixed",
                 "--out", str(d / "u.skq")]) == 0
    report = json.loads((d / "u.json").read_text())
    assert report["size"]["label_bits_per_weight"] == 3.0
    assert main(["dequantize", "--in", str(d / "u.skq"), "--out", str(d / "u.skb")]) == 0


def test_usage_errors(workdir, capsys):
    d = workdir
    assert main(["quantize", "--in", str(d / "cal.skb"), "--bit", "5", "--out", str(d / "x.skq")]) == 2
    assert "must lie in" in capsys.readouterr().err
    assert main(["quantize", "--in", str(d / "cal.skb"), "--bit", "3.5", "--no-mixed",
                 "--out", str(d / "x.skq")]) == 2
    assert main(["bogus"]) == 2


def test_bad_inputs(workdir, tmp_path):
    bad = tmp_path / "bad.skb"
    bad.write_bytes(b"NOPE" + b"\0" * 16)
    assert main(["calibrate", "--in", str(bad), "--out", str(tmp_path / "o.skb")]) == 1
    assert main(["dequantize", "--in", str(bad), "--out", str(tmp_path / "o.skb")]) == 1
    assert main(["calibrate", "--in", str(tmp_path / "missing.skb"), "--out", str(tmp_path / "o.skb")]) == 1


def test_oracle_check(capsys):
    assert main(["oracle-check", "--seed", "7", "--trials", "30"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4
