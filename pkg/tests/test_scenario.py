from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import uwballoc
from uwballoc.allocator import equal_power_allocation, interference_control
from uwballoc.channel import ChannelRealization, LinkBudget
from uwballoc.errors import ConfigError
from uwballoc.interference import BandPlan, PrimaryUserBand, overlap_factors
from uwballoc.mac import UserProfile
from uwballoc.scenario import (CSV_COLUMNS, ScenarioConfig, apply_overrides, build_quality_matrix,
                               config_from_dict, config_to_dict, interference_reduction_ratio,
                               load_config, load_config_dict, power_satisfaction,
                               rate_satisfaction, rows_csv, run_scenario, run_trial, summary_csv,
                               user_seed, user_reduction_ratio)

SCENARIOS = Path(uwballoc.__file__).parent / "scenarios"
P_T = 1.174e-4


def _flat(shadow=1.0):
    return ChannelRealization(shadow, np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64),
                              np.zeros(1), np.ones(1))


def _small(**run):
    data = load_config_dict(SCENARIOS / "scenario1.toml")
    data["run"].update({"n_trials": 3, **run})
    data["primary"]["bandwidths_mhz"] = [5.0, 50.0]
    return config_from_dict(data)


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("name", ["scenario1.toml", "scenario2.toml", "ith_levels.toml"])
def test_shipped_configs_load(name):
    cfg = load_config(SCENARIOS / name)
    assert cfg.n_trials >= 500
    assert cfg.channel.model == "CM1"
    assert cfg.total_power == pytest.approx(1.1742e-4, rel=1e-3)


def test_overrides():
    data = {"run": {"n_trials": 5}, "users": [{"qos_class": "HQoS", "requested_rate": 320.0}]}
    out = apply_overrides(data, ["run.n_trials=1", "run.algorithms=[\"optimal\"]",
                                 "users.0.requested_rate=160.0", "channel.pathloss_db=40",
                                 "primary.placement=band"])
    assert out["run"] == {"n_trials": 1, "algorithms": ["optimal"]}
    assert out["users"][0]["requested_rate"] == 160.0
    assert out["channel"]["pathloss_db"] == 40
    assert out["primary"]["placement"] == "band"
    assert data["run"]["n_trials"] == 5  # input untouched
    cfg = config_from_dict(out)
    assert cfg.primary.placement == ("band",)


@pytest.mark.parametrize("bad", ["run.n_trials", "=3", "users.7.id=1", "run.n_trials.x=1"])
def test_bad_overrides(bad):
    data = {"run": {"n_trials": 5}, "users": [{"qos_class": "HQoS", "requested_rate": 320.0}]}
    with pytest.raises(ConfigError):
        apply_overrides(data, [bad])


@pytest.mark.parametrize("data", [
    {"bogus": {}},
    {"run": {"n_trial": 3}, "users": [{"qos_class": "HQoS", "requested_rate": 320.0}]},
    {"users": [{"qos_class": "HQoS", "requested_rate": 320.0, "colour": "red"}]},
    {"users": [{"qos_class": "HQoS", "requested_rate": 100.0}]},
    {"users": [{"requested_rate": 320.0}]},
    {"users": []},
    {"run": {"n_trials": 0}, "users": [{"qos_class": "HQoS", "requested_rate": 320.0}]},
    {"users": [{"qos_class": "HQoS", "requested_rate": 320.0}], "solver": {"delta": -1}},
    {"users": [{"qos_class": "HQoS", "requested_rate": 320.0}], "primary": {"placement": "moon"}},
    {"users": [{"qos_class": "HQoS", "requested_rate": 320.0}], "channel": {"model": "CM7"}},
    {"users": [{"id": 1, "qos_class": "HQoS", "requested_rate": 320.0},
               {"id": 1, "qos_class": "SQoS", "requested_rate": 53.3}]},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_round_trip():
    cfg = load_config(SCENARIOS / "scenario1.toml")
    again = config_from_dict(config_to_dict(cfg))
    assert config_to_dict(again) == config_to_dict(cfg)
    assert again.solver == cfg.solver and again.users == cfg.users


def test_bad_toml(tmp_path):
    p = tmp_path / "broken.toml"
    p.write_text("[run\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(OSError):
        load_config(tmp_path / "missing.toml")


# ---------------------------------------------------------- quality matrix

def test_quality_matrix_shape():
    lam = [1.85, 1.49, 1.49]
    E = build_quality_matrix([_flat()] * 3, BandPlan(), LinkBudget(), lam, P_T)
    assert E.shape == (3, 3) and E.size == 9
    assert np.all(E > 0)


def test_flat_channels_give_equal_entries():
    E = build_quality_matrix([_flat()] * 3, BandPlan(), LinkBudget(), [1.5] * 3, P_T)
    assert np.allclose(E, E[0, 0], rtol=1e-12)
    noise = 10 ** (-10.74) * 1e-3 * 4.125
    assert E[0, 0] == pytest.approx(10 ** -3.6 / noise / 128, rel=1e-12)


def test_pathloss_three_db_halves_the_row():
    near = LinkBudget(pathloss_db=36.0)
    far = LinkBudget(pathloss_db=36.0 + 10 * np.log10(2))
    E = build_quality_matrix([_flat()] * 3, BandPlan(), [near, far, near], [1.5] * 3, P_T)
    assert np.allclose(E[1], E[0] / 2, rtol=1e-12)


def test_user_seeds_distinct_and_stable():
    seeds = {user_seed(1, t, u) for t in range(50) for u in range(3)}
    assert len(seeds) == 150
    assert user_seed(1, 2, 3) == user_seed(1, 2, 3)


# ---------------------------------------------------------------- metrics

def _controlled(primary):
    profiles = [UserProfile(0, "HQoS", 53.3), UserProfile(1, "SQoS", 53.3),
                UserProfile(2, "SQoS", 53.3)]
    E = np.full((3, 3), 1e3) + np.diag([1e6] * 3)
    base = equal_power_allocation(profiles, E, P_T)
    return base, interference_control(base, [primary], profiles, E)


def test_metrics_without_overlap():
    base, out = _controlled(PrimaryUserBand(3.432, 20.0, 1e3))
    assert np.all(power_satisfaction(out) == 1.0)
    assert np.all(rate_satisfaction(out, base) == 1.0)
    assert np.all(interference_reduction_ratio(out) == 0.0)
    assert np.all(user_reduction_ratio(out) == 0.0)


def test_zero_power_user_counts_as_satisfied():
    base, out = _controlled(PrimaryUserBand(3.432, 20.0, 1e3))
    empty = replace(out, power=np.zeros((3, 3)), reductions=np.zeros((3, 3)))
    assert np.all(power_satisfaction(empty) == 1.0)


def test_sqos_annulment_metrics():
    primary = PrimaryUserBand(3.96, 50.0, 0.0)
    base, out = _controlled(primary)
    # annulment removes the overlapped subcarriers; the rest of the band still leaks
    ov = overlap_factors(primary)
    assert user_reduction_ratio(out)[1] == pytest.approx(ov.in_overlap_sum / ov.per_band[1],
                                                         rel=1e-12)
    assert user_reduction_ratio(out)[1] > 0.97
    f = 13 / 128
    assert power_satisfaction(out)[1] == pytest.approx(1 - f, rel=1e-12)
    assert 0 < rate_satisfaction(out, base)[1] < 1
    # a fully overlapped band would be fully annulled
    full = replace(out, reductions=np.where(np.arange(9).reshape(3, 3) == 4, out.power, 0.0))
    assert power_satisfaction(full)[1] == 0.0


def test_metric_ranges_on_run():
    report = run_scenario(_small())
    for r in report.rows:
        assert 0.0 <= r.power_satisfaction <= 1.0
        assert 0.0 <= r.i_reduction_ratio <= 1.0
        assert r.rate_satisfaction >= 0.0
        if r.qos_class == "HQoS":
            assert r.rate_satisfaction <= 1.0


# -------------------------------------------------------------------- runs

def test_row_counts():
    cfg = _small()
    report = run_scenario(cfg)
    assert len(report.rows) == 3 * 2 * 2 * 3  # trials x algorithms x bandwidths x users
    for algo in ("optimal", "suboptimal"):
        for bw in (5.0, 50.0):
            assert len(report.select(algorithm=algo, bandwidth_mhz=bw)) == 9
    summary = report.summary()
    assert len(summary) == 2 * 2 * 2  # algorithms x bandwidths x classes
    assert sum(e["n"] for e in summary) == len(report.rows)
    assert rows_csv(report).splitlines()[0].split(",") == list(CSV_COLUMNS)


def test_deterministic_and_order_independent():
    cfg = _small()
    a = rows_csv(run_scenario(cfg))
    assert rows_csv(run_scenario(cfg)) == a
    reverse = run_scenario(cfg, trials=[2, 1, 0])
    assert rows_csv(reverse) == a
    merged = run_scenario(cfg, trials=[1]).merge(run_scenario(cfg, trials=[0, 2]))
    assert rows_csv(merged) == a
    assert rows_csv(run_scenario(replace(cfg, workers=2))) == a


def test_seed_changes_results():
    a = rows_csv(run_scenario(_small()))
    b = rows_csv(run_scenario(_small(seed=99)))
    assert a != b


def test_threshold_levels_sweep():
    cfg = _small()
    cfg = replace(cfg, primary=replace(cfg.primary, i_th_fraction=(0.25, 0.75)),
                  algorithms=("suboptimal",), n_trials=1)
    rows = run_trial(cfg, 0)
    levels = sorted({r.i_th_level for r in rows})
    assert levels == [0.25, 0.75]
    hq = {r.i_th_level: r.i_reduction_ratio for r in rows if r.qos_class == "HQoS"
          and r.bandwidth_mhz == 50.0}
    assert hq[0.25] >= hq[0.75]


def test_absolute_threshold():
    cfg = _small()
    cfg = replace(cfg, primary=replace(cfg.primary, i_th_mw=1e9), n_trials=1)
    rows = run_trial(cfg, 0)
    assert all(r.power_red_w == 0.0 for r in rows)
    assert {r.i_th_level for r in rows} == {1e9}


def test_summary_csv_formats_nan_as_empty():
    cfg = replace(_small(), n_trials=1)
    cfg = replace(cfg, primary=replace(cfg.primary, i_th_mw=1e9))
    text = summary_csv(run_scenario(cfg))
    assert "nan" not in text.lower()


def test_scenario_config_direct():
    with pytest.raises(ConfigError):
        ScenarioConfig(users=(UserProfile(0, "HQoS", 320.0),), algorithms=("greedy",))
