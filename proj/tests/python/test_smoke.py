import json
import math

import pytest

import pycombo


def small_config(**overrides):
    config = {
        "workers": 6,
        "dim": 12,
        "segments": 3,
        "replicas": 2,
        "local_steps": 3,
        "rounds": 5,
        "seed": 4,
        "net": {"model_bytes": 1000000},
    }
    config.update(overrides)
    return json.dumps(config)


def records(text):
    return [json.loads(line) for line in text.splitlines()]


def test_make_scheme_equal_split():
    assert pycombo.make_scheme(10, 3) == [(0, 4), (4, 7), (7, 10)]
    with pytest.raises(pycombo.ComboError) as err:
        pycombo.make_scheme(3, 4)
    assert err.value.code == "invalid-scheme"


def test_aggregate_model_weighted_mean():
    out = pycombo.aggregate_model([0.0, 0.0], 0, [(0, [4.0, 8.0], 1)], 1, {0: 1, 1: 3})
    assert out == [3.0, 6.0]
    joiner = pycombo.aggregate_model(None, 9, [(0, [1.0], 1), (0, [3.0], 2), (1, [5.0], 1), (1, [7.0], 2)], 2,
                                     {1: 1, 2: 1})
    assert joiner == [2.0, 6.0]


def test_plan_pulls_distinct_targets():
    plan = pycombo.plan_pulls(0, list(range(1, 21)), 10, 2, 1, 7)
    assert len(plan) == 20
    assert len({target for _, _, target in plan}) == 20
    assert plan == pycombo.plan_pulls(0, list(range(1, 21)), 10, 2, 1, 7)


def test_allocate_rates_shares_ingress():
    rates = pycombo.allocate_rates([(s, 0) for s in range(1, 21)])
    assert all(math.isclose(r, 5e6) for r in rates)


def test_bound_starts_at_initial_distance():
    assert pycombo.theorem1_bound(1.0, 10.0, 0.1, 1, 0.2, 0.05, 1.0, 0) == pytest.approx(1.0)
    assert pycombo.theorem1_bound(1.0, 10.0, 0.1, 1, 0.2, 0.05, 1.0, 1) == pytest.approx(0.97)


def test_run_attach_report_pipeline():
    trace = pycombo.run(small_config())
    recs = records(trace)
    assert recs[0]["type"] == "init"
    assert sum(r["type"] == "worker" for r in recs) == 30
    assert trace == pycombo.run(small_config())

    net = json.dumps({"model_bytes": 1000000})
    timeline = pycombo.attach_times(trace, net)
    assert records(timeline)[0]["type"] == "timeline"

    tables = pycombo.report([timeline], ["small"], "loss", 1e9)
    assert set(tables) == {"curves.csv", "worker_curves.csv", "time_to_target.csv", "sync_vs_S.csv",
                           "ttt_vs_R.csv", "ttt_by_mode.csv"}
    assert "small,combo,6,3,2,4,loss" in tables["time_to_target.csv"]


def test_invalid_config_names_constraint():
    with pytest.raises(pycombo.ComboError) as err:
        pycombo.run(small_config(replicas=6))
    assert err.value.code == "invalid-config"
    assert "replicas (R)" in str(err.value)


def test_validate_config_fills_defaults():
    full = json.loads(pycombo.validate_config("{}"))
    assert full["segments"] == 10
    assert full["replicas"] == 2
    assert full["local_steps"] == 40
