import json
import os

import pytest

from adbo.cli import (
    EXIT_CONFIG,
    EXIT_DIVERGED,
    EXIT_OK,
    ExperimentConfig,
    compare_runs,
    config_from_dict,
    config_to_dict,
    main,
    parse_config,
    read_trace,
    run_experiment,
    write_trace,
)
from adbo.engine import TraceRow
from adbo.exceptions import ConfigError

MINIMAL = {"algorithm": "adbo", "problem": "toy_quadratic"}


def _write(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


def test_minimal_config_defaults():
    cfg = config_from_dict(MINIMAL)
    assert (cfg.N, cfg.S, cfg.tau) == (18, 9, 15)
    assert cfg.eta_lambda == 0.1
    assert cfg.T1_resolved == 100_000
    assert config_from_dict({"algorithm": "cpbo", "problem": "toy_quadratic"}).T1_resolved == 500


@pytest.mark.parametrize("bad, key", [
    ({"S": 0}, "S"),
    ({"S": 30}, "S"),
    ({"eps": 0}, "eps"),
    ({"bogus": 1}, "bogus"),
    ({"n_samples": 10}, "n_samples"),
    ({"stragglers": [40]}, "stragglers"),
])
def test_validation_names_key(bad, key):
    with pytest.raises(ConfigError, match=key):
        config_from_dict({**MINIMAL, **bad})


def test_missing_required_key():
    with pytest.raises(ConfigError, match="problem"):
        config_from_dict({"algorithm": "adbo"})


def test_single_problem_source():
    raw = {"algorithm": "adbo", "problem": "hypercleaning", "dataset": "x.csv", "n_samples": 50}
    with pytest.raises(ConfigError, match="n_samples"):
        config_from_dict(raw)


def test_cpbo_needs_single_worker():
    with pytest.raises(ConfigError, match="N"):
        config_from_dict({"algorithm": "cpbo", "problem": "toy_quadratic", "N": 2})


def test_flag_overrides_file(tmp_path):
    path = _write(tmp_path, {**MINIMAL, "seed": 3})
    assert parse_config(path).seed == 3
    assert parse_config(path, {"seed": 7, "out": None}).seed == 7


def test_bad_json_and_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        parse_config(bad)
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.json")


@pytest.mark.parametrize("raw", [
    MINIMAL,
    {**MINIMAL, "N": 4, "S": 2, "toy_a": [1, 2, 3, 4], "stragglers": [0, 1], "eps": 0.003},
    {"algorithm": "sdbo", "problem": "hypercleaning", "N": 4, "S": 4, "corruption": 0.3},
    {"algorithm": "adbo", "problem": "regcoef", "dataset": "d.svm", "dataset_format": "libsvm"},
    {"algorithm": "cpbo", "problem": "toy_quadratic", "T1": 20},
])
def test_config_round_trip(raw):
    cfg = config_from_dict(raw)
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
    assert again == cfg and isinstance(again, ExperimentConfig)


def test_trace_csv_round_trip(tmp_path):
    rows = [TraceRow(1, 0.1, 1 / 3, 2e-17, 123456789.123456789, 2, 0.7, (0, 3)),
            TraceRow(2, 1e300, -0.0, 0.0, 5e-324, 0, 1e-6, ())]
    path = tmp_path / "t.csv"
    write_trace(rows, path)
    assert read_trace(path) == rows


def test_read_trace_names_bad_line(tmp_path):
    path = tmp_path / "t.csv"
    write_trace([TraceRow(1, 0.5, 1.0, 0.0, 0.1, 0, 1.0, (0,))], path)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("2,oops,1,0,0,0,1,0\n")
    with pytest.raises(ValueError, match="line 3"):
        read_trace(path)


def _rows(times, Fs):
    return [TraceRow(i + 1, t, F, 0.0, 0.0, 0, 0.0, (0,)) for i, (t, F) in enumerate(zip(times, Fs))]


def test_compare_examples():
    a = _rows([1.0, 2.0, 3.0], [3.0, 2.0, 1.0])
    assert compare_runs(a, a, 2.0).ratio == 1.0
    b = _rows([4.0, 8.0, 12.0], [3.0, 2.0, 1.0])
    rep = compare_runs(a, b, 1.5)
    assert rep.ratio == 0.25 and (rep.time_a, rep.time_b) == (3.0, 12.0)
    never = compare_runs(a, b, 0.0)
    assert never.ratio is None and "unreached" in str(never)


def test_reference_run_and_determinism(tmp_path, capsys):
    cfg_path = _write(tmp_path, {**MINIMAL, "max_iter": 5000})
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", "--config", str(cfg_path), "--seed", "7", "--out", str(out1)]) == EXIT_OK
    assert main(["run", "--config", str(cfg_path), "--seed", "7", "--out", str(out2)]) == EXIT_OK
    assert out1.read_bytes() == out2.read_bytes()
    assert read_trace(out1)[-1].gap_sq <= 1e-3
    assert "gap_sq=" in capsys.readouterr().out


def test_compare_subcommand(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_trace(_rows([1.0, 2.0], [2.0, 1.0]), a)
    write_trace(_rows([4.0, 8.0], [2.0, 1.0]), b)
    assert main(["compare", "--a", str(a), "--b", str(b), "--target", "1.0"]) == EXIT_OK
    assert "ratio=0.25" in capsys.readouterr().out


def test_invalid_dataset_exits_2_without_trace(tmp_path):
    out = tmp_path / "t.csv"
    cfg_path = _write(tmp_path, {"algorithm": "adbo", "problem": "hypercleaning", "N": 2, "S": 1,
                                 "dataset": str(tmp_path / "missing.csv")})
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_config_error_exit_code(tmp_path, capsys):
    cfg_path = _write(tmp_path, {**MINIMAL, "S": 0})
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "t.csv")]) == EXIT_CONFIG
    assert "S:" in capsys.readouterr().err


def test_divergence_keeps_partial_trace(tmp_path):
    cfg = config_from_dict({**MINIMAL, "N": 2, "S": 2, "eta_x": 5, "eta_y": 5, "eta_v": 5, "eta_z": 5,
                            "eta_lambda": 5, "eta_theta": 5, "gap_tol": 0, "max_iter": 5000})
    out = tmp_path / "t.csv"
    code, trace = run_experiment(cfg, out)
    assert code == EXIT_DIVERGED and trace
    assert read_trace(out) == trace


def test_cpbo_and_logistic_runs(tmp_path):
    cfg = config_from_dict({"algorithm": "cpbo", "problem": "toy_quadratic", "max_iter": 50})
    code, trace = run_experiment(cfg, tmp_path / "c.csv")
    assert code == EXIT_OK and trace[-1].active == (0,)
    cfg = config_from_dict({"algorithm": "sdbo", "problem": "hypercleaning", "N": 2, "S": 2,
                            "n_samples": 60, "n_features": 4, "max_iter": 20, "gap_tol": 0})
    code, trace = run_experiment(cfg, tmp_path / "h.csv")
    assert code == EXIT_OK and len(trace) == 20


def test_log_level_env(tmp_path, monkeypatch):
    cfg_path = _write(tmp_path, {**MINIMAL, "max_iter": 5})
    monkeypatch.setenv("BILEVEL_LOG", "loud")
    assert main(["run", "--config", str(cfg_path), "--out", os.fspath(tmp_path / "t.csv")]) == EXIT_CONFIG
