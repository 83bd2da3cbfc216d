import numpy as np
import pytest

from hrsowc import dnn
from hrsowc.cli import main
from hrsowc.dataset import load


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_channel_csv(capsys):
    code, out, _ = run(capsys, "channel", "--seed", "1")
    lines = out.splitlines()
    assert code == 0 and lines[0] == "user,ap,gain" and len(lines) == 1 + 24
    k, l, g = lines[5].split(",")
    assert (k, l) == ("2", "1") and float(g) >= 0


def test_global_flags_before_or_after_command(capsys):
    a = run(capsys, "--seed", "3", "channel")[1]
    b = run(capsys, "channel", "--seed", "3")[1]
    assert a == b


@pytest.mark.parametrize("scheme,first", [("hrs-uniform", "oc"), ("rs", "c"), ("oma", "p")])
def test_rates_csv(capsys, scheme, first):
    code, out, _ = run(capsys, "rates", "--scheme", scheme)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "message,user,group,sinr,rate"
    assert lines[1].startswith(first + ",1,")
    assert lines[-1].startswith("sum_rate=")
    body = [l.split(",") for l in lines[1:-1]]
    total = sum(float(r[4]) for r in body if r[0] == "p")
    common = {(r[0], r[2] if r[0] == "ic" else None): float(r[4]) for r in body if r[0] != "p"}
    assert float(lines[-1].split("=")[1]) == pytest.approx(total + sum(common.values()), rel=1e-12)


def test_optimize_csv_and_infeasible_exit(capsys, tmp_path):
    code, out, _ = run(capsys, "optimize", "--utility", "sum")
    lines = out.splitlines()
    assert code == 0 and lines[0] == "slot,index,power"
    assert [l.split(",")[0] for l in lines[1:10]] == ["oc", "ic", "ic"] + ["p"] * 6
    assert lines[-2:] == ["feasible=true", "qos_met=true"]
    cfg = tmp_path / "c.yaml"
    cfg.write_text("power: {r_min: 1000}\nsolver: {max_iter: 20}\n")
    code, out, _ = run(capsys, "--config", str(cfg), "optimize")
    assert code == 2 and "qos_met=false" in out


def test_usage_errors_exit_1(capsys, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["nosuchcommand"])
    assert e.value.code == 1
    with pytest.raises(SystemExit) as e:
        main(["rates", "--scheme", "best"])
    assert e.value.code == 1
    bad = tmp_path / "c.yaml"
    bad.write_text("colour: red\n")
    assert run(capsys, "--config", str(bad), "channel")[0] == 1
    assert run(capsys, "rates", "--scheme", "dnn")[0] == 1
    assert run(capsys, "sweep", "--variable", "snr", "--values", "50")[0] == 1
    assert run(capsys, "eval", "--dataset", str(tmp_path / "none.csv"), "--model", "x")[0] == 1


def test_dataset_train_eval_report_roundtrip(capsys, tmp_path):
    data, model = tmp_path / "d.csv", tmp_path / "m.txt"
    assert run(capsys, "gen-dataset", "--n", "10", "--seed", "2", "--out", str(data))[0] == 0
    assert len(load(data)) == 10
    hist = tmp_path / "h.csv"
    assert run(capsys, "train", "--dataset", str(data), "--epochs", "3", "--batch", "4",
               "--out", str(model), "--history", str(hist))[0] == 0
    assert hist.read_text().splitlines()[0] == "epoch,train_rmse,val_rmse"
    assert dnn.load(model).spec.output_dim == 9
    code, out, _ = run(capsys, "eval", "--dataset", str(data), "--model", str(model))
    assert code == 0 and "mean_sum_rate_ratio=" in out and "feasible_fraction=1.0" in out

    code, report, _ = run(capsys, "report", "--model", str(model))
    assert code == 0 and "[dnn]" in report
    got = dict(l.split("=", 1) for l in report.splitlines() if l.startswith("dnn_gap="))
    sums = {}
    section = None
    for line in report.splitlines():
        if line.startswith("["):
            section = line.strip("[]")
        elif "sum_rate=" in line:
            sums[section] = float(line.split("=")[1])
    assert float(got["dnn_gap"]) == 1 - sums["dnn"] / sums["opt"]

    # report sum rates equal the rates subcommand
    for scheme, name in (("hrs", "opt"), ("hrs-uniform", "hrs-uniform"), ("rs", "rs"),
                         ("oma", "oma"), ("dnn", "dnn")):
        _, out, _ = run(capsys, "rates", "--scheme", scheme, "--model", str(model))
        assert float(out.splitlines()[-1].split("=")[1]) == sums[name]


def test_sweep_cli_writes_file(capsys, tmp_path):
    out = tmp_path / "s.csv"
    code, _, _ = run(capsys, "sweep", "--variable", "beamwaist", "--values", "5", "20",
                     "--trials", "1", "--schemes", "oma", "--out", str(out))
    assert code == 0
    assert out.read_text().splitlines()[1:] == [l for l in out.read_text().splitlines()[1:]]
    assert len(out.read_text().splitlines()) == 3
