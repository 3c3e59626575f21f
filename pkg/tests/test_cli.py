import csv
import json
import math

import pytest

from pelab.cli import (
    EXPERIMENTS,
    ConfigError,
    load_config,
    main,
    parse_config,
    resolve_config_path,
)


def run(*argv):
    return main(list(argv) + ["--quiet"])


def summary(out):
    return json.loads((out / "summary.json").read_text())


def write_cfg(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_certify_eg31(tmp_path):
    assert run("certify", "--config", "eg31.json", "--out", str(tmp_path)) == 0
    cert = json.loads((tmp_path / "udpe.json").read_text())["result"]
    assert cert["mu"] == pytest.approx(4.0, rel=0.05)
    assert cert["T"] == pytest.approx(2 * math.pi)
    assert all(c["status"] == "PASS" for c in summary(tmp_path)["checks"])


def test_certify_counterexample_exit_2(tmp_path):
    assert run("certify", "--config", "x2_wrt_x1.json", "--out", str(tmp_path)) == 2
    m = summary(tmp_path)["metrics"]["x2_wrt_x1"]["udpe"]
    assert m["status"] == "counterexample" and m["x"] == [1.0, 0.0]


def test_missing_file_exit_1(tmp_path, capsys):
    assert run("certify", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)) == 1
    assert "not found" in capsys.readouterr().err


def test_bad_json_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "name": "x",\n  "system": {"name": "rotation",}\n}\n')
    assert run("certify", "--config", str(p), "--out", str(tmp_path)) == 1
    assert "line 3" in capsys.readouterr().err


@pytest.mark.parametrize("mutate, key", [
    (lambda c: c["system"].update(name="nosuch"), "system.name"),
    (lambda c: c["analysis"][0].update(op="nosuch"), "analysis[0].op"),
    (lambda c: c.update(extra=1), "extra"),
    (lambda c: c["analysis"].append(dict(c["analysis"][0])), "analysis[1].id"),
])
def test_parse_rejects_with_key(mutate, key):
    cfg = load_config("rotation_simulate.json").to_dict()
    mutate(cfg)
    with pytest.raises(ConfigError) as exc:
        parse_config(cfg)
    assert exc.value.key == key


def test_unknown_op_exit_1(tmp_path, capsys):
    cfg = load_config("rotation_simulate.json").to_dict()
    cfg["analysis"][0]["op"] = "integrate_everything"
    assert run("simulate", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)) == 1
    assert "analysis[0].op" in capsys.readouterr().err


@pytest.mark.parametrize("name", ["eg31.json", "mrac_pe.json", "necessity.json", "slotli_nope.json"])
def test_config_round_trip(name):
    cfg = load_config(name)
    again = parse_config(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()
    raw = json.loads(resolve_config_path(name).read_text())
    assert {k: v for k, v in cfg.to_dict().items() if k in raw} == raw


def test_simulate_rotation_csv_and_svg(tmp_path):
    assert run("simulate", "--config", "rotation_simulate.json", "--out", str(tmp_path)) == 0
    rows = list(csv.DictReader((tmp_path / "sim.csv").open()))
    norms = [float(r["norm"]) for r in rows if r["run"] == "0"]
    zeros = [float(r["norm"]) for r in rows if r["run"] == "1"]
    assert max(abs(v - 1.0) for v in norms) < 1e-9
    assert all(v == 0.0 for v in zeros)
    svg = (tmp_path / "sim.svg").read_text()
    assert 'width="800"' in svg and 'height="500"' in svg
    assert svg.count("<polyline") == 2


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", "--config", "rotation_simulate.json", "--out", str(a)) == 0
    assert run("simulate", "--config", "rotation_simulate.json", "--out", str(b)) == 0
    for name in ("sim.csv", "sim.json", "sim.svg", "summary.json", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_uniformity_inverse_time(tmp_path):
    assert run("uniformity", "--config", "inverse_time_uniformity.json", "--out", str(tmp_path)) == 0
    rows = list(csv.DictReader((tmp_path / "uniformity_settling.csv").open()))
    for r in rows:
        assert float(r["T"]) == pytest.approx(9 * (1 + float(r["t0"])), rel=0.02)
    rep = json.loads((tmp_path / "uniformity.json").read_text())["result"]
    assert rep["verdict"] == "non_uniform"


def test_uniformity_exp_decay(tmp_path):
    assert run("uniformity", "--config", "exp_decay_uniformity.json", "--out", str(tmp_path)) == 0
    rep = json.loads((tmp_path / "uniformity.json").read_text())["result"]
    assert rep["verdict"] == "uniform"


def test_uniformity_short_horizon_inconclusive_exit_0(tmp_path):
    cfg = load_config("exp_decay_uniformity.json").to_dict()
    cfg["analysis"][0]["params"]["horizon"] = 0.5
    cfg["checks"] = []
    assert run("uniformity", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)) == 0
    rep = json.loads((tmp_path / "uniformity.json").read_text())["result"]
    assert rep["verdict"] == "inconclusive"


def test_step_override_and_env_out(tmp_path, monkeypatch):
    monkeypatch.setenv("PELAB_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--config", "rotation_simulate.json", "--step", "0.05", "--quiet"]) == 0
    rows = list(csv.DictReader((tmp_path / "env" / "sim.csv").open()))
    ts = [float(r["t"]) for r in rows if r["run"] == "0"]
    # rows are written every 10 steps
    assert ts[1] - ts[0] == pytest.approx(10 * 0.05)


def test_command_without_matching_ops_is_error(tmp_path):
    assert run("certify", "--config", "rotation_simulate.json", "--out", str(tmp_path)) == 1


def test_reproduce_unknown_lists_names(tmp_path, capsys):
    assert run("reproduce", "nosuch", "--out", str(tmp_path)) == 1
    err = capsys.readouterr().err
    for name in EXPERIMENTS:
        assert name in err


def test_reproduce_eg31(tmp_path, capsys):
    assert main(["reproduce", "eg31", "--out", str(tmp_path)]) == 0
    d = tmp_path / "eg31"
    assert (d / "configs" / "eg31.json").exists()
    assert (d / "configs" / "x2_wrt_x1.json").exists()
    assert "FAIL" not in capsys.readouterr().out
    assert (d / "summary.csv").exists()


def test_reproduce_slotli_pe(tmp_path, capsys):
    assert main(["reproduce", "slotli-pe", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "param_error_final < 1e-3: PASS" in out


def test_help_documents_flags(capsys):
    with pytest.raises(SystemExit):
        main(["certify", "--help"])
    text = capsys.readouterr().out
    for flag in ("--config", "--out", "--seed", "--threads", "--step", "--quiet"):
        assert flag in text
