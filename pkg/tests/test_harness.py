import math

import numpy as np
import pytest

from noisydiff import harness
from noisydiff.harness import (ExperimentConfig, ExperimentReport, ObservationFormatError, Scenario, aggregate,
                               config_from_dict, load_config, parse_step, read_observations, read_report,
                               run_experiment, run_replication, write_observations, write_report)
from noisydiff.model import BENCH_OU_ALPHA, BENCH_OU_BETA, BENCH_OU_X0, default_ou_boxes


def small_config(**kw) -> ExperimentConfig:
    ba, bb = default_ou_boxes(2)
    base = dict(alpha=BENCH_OU_ALPHA, beta=BENCH_OU_BETA, x0=BENCH_OU_X0, box_alpha=ba, box_beta=bb,
                scenarios=(Scenario("zero", np.zeros((2, 2))), Scenario("small", 1e-4 * np.eye(2))),
                n=1000, h=1000 ** -0.7, replications=4, seed=11, methods=("lmm", "lga"), n_starts=2)
    base.update(kw)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# observation files

def test_read_observations_with_time_column(tmp_path):
    f = tmp_path / "obs.csv"
    f.write_text("t,y1\n0,0\n0.5,1\n1.0,2\n")
    Y, h = read_observations(f)
    assert h == 0.5 and Y.shape == (3, 1)
    np.testing.assert_array_equal(Y[:, 0], [0, 1, 2])


def test_read_observations_headerless(tmp_path):
    f = tmp_path / "obs.csv"
    f.write_text("1,2\n3,4\n5,6\n")
    Y, h = read_observations(f)
    assert h is None and Y.shape == (3, 2)
    assert read_observations(f, h=0.1)[1] == 0.1


@pytest.mark.parametrize("text,match", [
    ("t,y1\n0,0\n0.5,1\n1.0000011,2\n", "equally spaced"),
    ("t,y1\n0,0\n0.5\n1.0,2\n", "fields"),
    ("t,y1\n0,0\n0.5,abc\n1.0,2\n", "non-numeric"),
])
def test_read_observations_errors(tmp_path, text, match):
    f = tmp_path / "obs.csv"
    f.write_text(text)
    with pytest.raises(ObservationFormatError, match=match):
        read_observations(f)


def test_observation_round_trip(tmp_path):
    Y = np.random.default_rng(0).normal(size=(50, 2))
    f = tmp_path / "obs.csv"
    write_observations(f, Y, 0.01)
    Z, h = read_observations(f)
    np.testing.assert_array_equal(Z, Y)
    assert h == pytest.approx(0.01, rel=1e-12)


# ---------------------------------------------------------------------------
# configuration

def test_parse_step():
    assert parse_step("n^-0.7", 10 ** 6) == pytest.approx(6.309573e-5, rel=1e-6)
    assert parse_step(0.01, 10) == 0.01
    assert parse_step("0.25", 10) == 0.25


def test_load_config(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text("""
[scheme]
n = 5000
h = "n^-0.7"

[[scenario]]
name = "zero"
lambda_scale = 0.0

[[scenario]]
name = "full"
Lambda = [[1.0, 0.2], [0.2, 0.5]]

[run]
replications = 3
seed = 5
methods = ["lmm", "lga"]
""")
    cfg = load_config(f)
    assert cfg.n == 5000 and cfg.h == pytest.approx(5000 ** -0.7)
    assert [s.name for s in cfg.scenarios] == ["zero", "full"]
    np.testing.assert_array_equal(cfg.scenarios[1].Lambda, [[1.0, 0.2], [0.2, 0.5]])
    assert cfg.methods == ("lmm", "lga") and cfg.replications == 3
    np.testing.assert_array_equal(cfg.alpha, BENCH_OU_ALPHA)
    full = harness.full_scale(cfg)
    assert (full.n, full.replications) == (10 ** 6, 1000)


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(replications=0)
    with pytest.raises(ValueError):
        small_config(methods=("mle",))
    with pytest.raises(ValueError):
        config_from_dict({"scenario": [{"Lambda": [[1.0, 0.0], [0.0, -1.0]]}]})


# ---------------------------------------------------------------------------
# experiments

def test_single_replication_has_zero_sd():
    cfg = small_config(replications=1, methods=("lmm",), scenarios=(Scenario("zero", np.zeros((2, 2))),))
    rep = run_experiment(cfg)
    assert len(rep.rows) == 3 + 3 + 6
    assert len({r["parameter"] for r in rep.rows}) == len(rep.rows)
    assert all(r["sd"] == 0.0 and r["n_ok"] == 1 for r in rep.rows)


@pytest.fixture(scope="module")
def small_outcomes():
    cfg = small_config()
    return cfg, [run_replication(cfg, r) for r in range(cfg.replications)]


def test_aggregation_matches_two_pass_oracle(small_outcomes):
    cfg, outcomes = small_outcomes
    rep = aggregate(cfg, list(reversed(outcomes)))
    for sc in cfg.scenarios:
        for method in cfg.methods:
            vals = np.array([o["scenarios"][sc.name]["estimates"][method] for o in outcomes])
            R = vals.shape[0]
            rows = [r for r in rep.rows if r["scenario"] == sc.name and r["method"] == method]
            for i, row in enumerate(rows):
                mean = sum(vals[:, i]) / R
                var = sum((v - mean) ** 2 for v in vals[:, i]) / (R - 1)
                assert row["mean"] == pytest.approx(mean, rel=1e-12, abs=1e-15)
                assert row["sd"] == pytest.approx(math.sqrt(var), rel=1e-12, abs=1e-15)


def test_row_order_and_truth(small_outcomes):
    cfg, outcomes = small_outcomes
    rep = aggregate(cfg, outcomes)
    keys = [(r["scenario"], r["method"]) for r in rep.rows]
    assert keys == sorted(keys, key=lambda k: (k[0] != "zero", k[1] != "lmm"))
    assert rep.row("small", "lmm", "Lambda11")["true_value"] == 1e-4
    assert rep.row("small", "lga", "alpha1")["true_value"] == 1.0
    with pytest.raises(KeyError):
        rep.row("small", "lga", "Lambda11")


def test_parallel_matches_serial():
    cfg = small_config(replications=3, methods=("lmm",))
    serial = run_experiment(cfg, threads=1)
    parallel = run_experiment(cfg, threads=2)
    assert serial.rows == parallel.rows
    assert serial.rejection == parallel.rejection
    for key, arr in serial.estimates.items():
        np.testing.assert_array_equal(arr, parallel.estimates[key])


def test_failures_are_counted_and_excluded(monkeypatch):
    real = harness.adaptive_estimate
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 2:
            raise np.linalg.LinAlgError("injected")
        return real(*args, **kwargs)

    monkeypatch.setattr(harness, "adaptive_estimate", flaky)
    cfg = small_config(replications=3, methods=("lmm",), scenarios=(Scenario("zero", np.zeros((2, 2))),))
    rep = run_experiment(cfg)
    row = rep.row("zero", "lmm", "alpha1")
    assert (row["failures"], row["n_ok"]) == (1, 2)
    assert rep.total_failures == 1
    assert rep.estimates[("zero", "lmm")].shape == (2, 12)


# ---------------------------------------------------------------------------
# report files

def test_empty_report_is_header_only(tmp_path):
    cfg = small_config(scenarios=())
    rep = aggregate(cfg, [])
    path, rej = write_report(rep, tmp_path / "r.csv")
    assert path.read_text().strip() == ",".join(harness.REPORT_COLUMNS)
    assert rej.read_text().strip() == ",".join(harness.REJECTION_COLUMNS)


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_report_round_trip(tmp_path, small_outcomes, fmt):
    cfg, outcomes = small_outcomes
    rep = aggregate(cfg, outcomes)
    path = write_report(rep, tmp_path / f"r.{fmt}", fmt)[0]
    back = read_report(path)
    assert len(back.rows) == len(rep.rows)
    for a, b in zip(rep.rows, back.rows):
        assert list(b) == list(harness.REPORT_COLUMNS)
        for col in harness.REPORT_COLUMNS:
            if isinstance(a[col], float):
                assert b[col] == pytest.approx(a[col], rel=1e-12)
            else:
                assert b[col] == a[col]
    assert [r["rate"] for r in back.rejection] == [r["rate"] for r in rep.rejection]


def test_report_rejection_lookup():
    rep = ExperimentReport(rejection=[{"scenario": "a", "level": 0.05, "rate": 0.1}])
    assert rep.rejection_rate("a", 0.05) == 0.1
    with pytest.raises(KeyError):
        rep.rejection_rate("a", 0.01)
