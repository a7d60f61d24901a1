import json
import math

import numpy as np
import pytest

from sgldvr.dynamics import DecaySchedule, SgldVrConfig, run_baseline, trial_init
from sgldvr.errors import ConfigError
from sgldvr.experiments import (
    CAMPAIGN_NAMES,
    CampaignResult,
    Verdict,
    brownian_joint_frequency,
    campaign_spec,
    classification_benchmark,
    escape_batch_projection,
    first_order_campaign,
    fit_inverse_t,
    map_trials,
    reachability_campaign,
    recurrence_campaign,
    run_campaign,
    saddle_escape_campaign,
    select_eta0,
    stopping_times,
    variance_reduction_campaign,
)
from sgldvr.objectives import make_binary_classifier, make_quadratic, make_saddle_quadratic


def _square(trials):
    return [k * k for k in trials]


# small pieces


def test_verdict_margin():
    assert Verdict("m", "<=", 1.0, 0.25, 5).margin == 0.75
    assert not Verdict("m", ">=", 1.0, 0.25, 5).passed
    assert Verdict("m", ">=", 1.0, 1.0, 5).passed
    with pytest.raises(ValueError):
        Verdict("m", "==", 1.0, 1.0, 5).margin


def test_map_trials_order_independent_of_jobs():
    assert map_trials(_square, range(7), 1) == map_trials(_square, range(7), 3) == [k * k for k in range(7)]


def test_fit_inverse_t_exact():
    C, r2 = fit_inverse_t([1, 2, 4], [3.0, 1.5, 0.75])
    assert C == pytest.approx(3.0) and r2 == pytest.approx(1.0)


def test_stopping_times():
    f = [5, 1, 5, 1, 1, 5, 1]
    assert stopping_times(f, 2.0, -1.0, 3) == [1, 3, 4]
    assert stopping_times(f, 2.0, 2.5, 3) == [4, 6, None]
    assert stopping_times(f, 0.5, -1.0, 2) == [None, None]


def test_escape_batch_projection():
    sch = DecaySchedule(1.0)
    noise = np.ones(20)
    part = [1, 3, 8]
    i, proj = escape_batch_projection(noise, sch, part, 5)
    assert i == 1
    assert proj == pytest.approx(sum(math.sqrt(sch.eta(l)) for l in range(3, 8)) ** 2)
    assert escape_batch_projection(noise, sch, part, 1)[0] == -1


# reachability


def test_walk_frequency_zero_radius():
    freq, se = brownian_joint_frequency(2, 0.0, 1.0, [0.5, 0.5], 5000, 16, 0)
    assert freq == 0.0 and se == 0.0


def test_walk_frequency_large_radius():
    freq, _ = brownian_joint_frequency(1, 50.0, 1.0, [0.0], 2000, 16, 0)
    assert freq == 1.0


def test_reachability_walk_part():
    res = reachability_campaign(n_walks=2000, seed=1, n_steps=16)
    assert res.passed
    assert res.summary["vacuous_settings"] == len(res.rows)
    zero = [r for r in res.rows if r["r"] == 0.0]
    assert zero and all(r["frequency"] == 0.0 for r in zero)


def test_reachability_dimension_check():
    with pytest.raises(ConfigError):
        reachability_campaign([{"d": 4, "r": 1.0, "t_n": 1.0, "z_star": [0.0] * 4}], 100, 0)


def test_reachability_dynamics_small():
    dyn = {
        "objective": {"id": "quadratic", "d": 2, "scale": 1.0},
        "config": {"batch_size": 1, "epoch_length": 10, "horizon": 10, "schedule": {"eta0": 0.2, "rho0": 0.1}},
        "n_trials": 6,
        "eps_tilde": 0.2,
        "horizon_cap": 400,
    }
    res = reachability_campaign(n_walks=500, seed=2, n_steps=8, dynamics=dyn)
    v = res.verdict("dynamics_max_frequency_drop_with_horizon")
    assert v.passed and v.n_trials == 6
    freqs = list(res.summary["dynamics_hit_frequency"].values())
    assert freqs == sorted(freqs)


# first order


def _fo(seed=3, jobs=1, horizons=(100, 200, 400)):
    obj, meta = make_quadratic(4, 0.5)
    config = SgldVrConfig(1, 10, 400, DecaySchedule(0.5, 1e-2))
    return first_order_campaign(obj, meta, config, 0.1, 6, seed, horizons=horizons, jobs=jobs)


def test_first_order_small():
    res = _fo()
    mm = res.summary["mean_min_grad_sq"]
    assert mm == sorted(mm, reverse=True)
    assert res.verdict("max_increase_of_mean_min_grad_sq").passed
    assert len(res.rows) == 6


def test_first_order_noiseless_full_batch_always_hits():
    obj, meta = make_quadratic(3, 1.0)
    config = SgldVrConfig(3, 10, 200, DecaySchedule(0.3, 0.0), "without_replacement")
    res = first_order_campaign(obj, meta, config, 0.1, 5, 0, horizons=(200,))
    assert all(r["tau_fsp"] is not None for r in res.rows)
    assert res.summary["survival"]["200"] == 0.0


def test_censoring_monotone_in_horizon():
    short = _fo(horizons=(100,))
    long = _fo(horizons=(100, 400))
    for a, b in zip(short.rows, long.rows):
        if a["tau_fsp"] is not None:
            assert b["tau_fsp"] == a["tau_fsp"]
        elif b["tau_fsp"] is not None:
            assert b["tau_fsp"] > 100


def test_campaign_deterministic_and_jobs_invariant(tmp_path):
    a = _fo(jobs=1)
    b = _fo(jobs=2)
    pa, ja = a.write(tmp_path / "a")
    pb, jb = b.write(tmp_path / "b")
    assert pa.read_bytes() == pb.read_bytes()
    ja_d, jb_d = json.loads(ja.read_text()), json.loads(jb.read_text())
    ja_d.pop("provenance"), jb_d.pop("provenance")
    assert ja_d == jb_d
    c = _fo(jobs=1)
    pc, jc = c.write(tmp_path / "c")
    assert jc.read_bytes() == ja.read_bytes()


def test_first_order_eps_check():
    obj, meta = make_quadratic(2, 1.0)
    with pytest.raises(ConfigError):
        first_order_campaign(obj, meta, SgldVrConfig(1, 10, 100, DecaySchedule(0.1)), 0.0, 2, 0)


# recurrence


def test_recurrence_refuses_small_delta():
    obj, meta = make_quadratic(1, 1.0)
    config = SgldVrConfig(1, 100, 1000, DecaySchedule(0.245, 0.1))
    with pytest.raises(ConfigError, match="delta too small"):
        recurrence_campaign(obj, meta, config, 0.01, 2, 2, 0)


def test_recurrence_small():
    obj, meta = make_quadratic(1, 1.0)
    config = SgldVrConfig(1, 100, 6000, DecaySchedule(0.245, 0.1))
    res = recurrence_campaign(obj, meta, config, 0.75, 3, 4, 0)
    assert res.verdict("min_visits_per_trial").measured >= 1
    for r in res.rows:
        taus = [r[f"tau_{j}"] for j in (1, 2, 3) if r[f"tau_{j}"] is not None]
        assert taus == sorted(taus) and len(set(taus)) == len(taus)


# saddle


def test_saddle_needs_q():
    obj, meta = make_quadratic(2, 1.0)
    with pytest.raises(ConfigError):
        saddle_escape_campaign(obj, meta, SgldVrConfig(1, 10, 100, DecaySchedule(1.0, 0.01)), 0.1, 2, 0)


def test_saddle_small():
    obj, meta = make_saddle_quadratic(2, 1.0, 1.0)
    config = SgldVrConfig(1, 10, 2000, DecaySchedule(1.0, 1e-2))
    res = saddle_escape_campaign(obj, meta, config, 0.1, 8, 0)
    assert res.verdict("escape_fraction_noiseless").measured == 0.0
    assert res.verdict("escape_fraction").measured >= 0.5


# classification


def test_select_eta0_prefers_stable():
    obj, _, _ = make_binary_classifier(200, (4, 4), 0, lipschitz_pairs=0)
    config = SgldVrConfig(20, 5, 5, DecaySchedule(1.0, 1e-2))
    x0 = trial_init(obj.d, 0, 0, 0.5)
    eta, report = select_eta0(obj, config, [0.1, 1e6], x0, 0)
    assert eta == 0.1
    assert not report["grid"][repr(1e6)]["stable"]


def test_classification_small():
    config = SgldVrConfig(20, 5, 100, DecaySchedule(1.0, 1e-2))
    res = classification_benchmark(200, (4, 4), config, 2, 0, eta_grid=[1.0])
    by_trial = {}
    for r in res.rows:
        by_trial.setdefault(r["trial"], set()).add(r["initial_train_error"])
    assert all(len(v) == 1 for v in by_trial.values())  # shared initialization
    assert {r["method"] for r in res.rows} == {"sgd", "sgld", "sgld-vr"}


def test_sgld_without_noise_matches_sgd_on_classifier():
    obj, _, _ = make_binary_classifier(200, (4, 4), 0, lipschitz_pairs=0)
    config = SgldVrConfig(20, 5, 50, DecaySchedule(1.0, 0.0))
    x0 = trial_init(obj.d, 0, 0, 0.5)
    a = run_baseline(obj, config, x0, 1, "sgd", record_iterates=True)
    b = run_baseline(obj, config, x0, 1, "sgld", record_iterates=True)
    np.testing.assert_array_equal(a.iterates, b.iterates)


# variance


def test_variance_small_passes():
    obj, meta = make_quadratic(10, 1.0)
    config = SgldVrConfig(1, 10, 50, DecaySchedule(0.02, 0.0), "without_replacement")
    res = variance_reduction_campaign(obj, meta, config, 10, 5000, 0)
    assert res.passed
    # probes at epoch boundaries sit on the snapshot: zero SVRG variance
    at_snap = [r for r in res.rows if r["t"] % 10 == 0]
    assert at_snap and all(r["var_svrg"] == pytest.approx(0.0, abs=1e-20) and r["var_sgd"] > 0 for r in at_snap)


def test_variance_full_batch_zero():
    obj, meta = make_quadratic(4, 1.0)
    config = SgldVrConfig(4, 10, 30, DecaySchedule(0.02, 0.0), "without_replacement")
    res = variance_reduction_campaign(obj, meta, config, 5, 200, 0)
    assert all(r["var_svrg"] < 1e-25 and r["var_sgd"] < 1e-25 for r in res.rows)


# specs and dispatch


def test_campaign_spec_merge():
    spec = campaign_spec("variance", {"params": {"mc_batches": 10}})
    assert spec["params"]["mc_batches"] == 10 and spec["params"]["n_probe_points"] == 100
    assert campaign_spec("variance")["params"]["mc_batches"] == 100_000
    with pytest.raises(ConfigError):
        campaign_spec("nope")


def test_every_name_has_a_spec():
    for name in CAMPAIGN_NAMES:
        assert campaign_spec(name)


def test_run_campaign_output_files(tmp_path):
    spec = campaign_spec("variance", {"params": {"n_probe_points": 4, "mc_batches": 500}})
    res = run_campaign("variance", spec, 0)
    assert isinstance(res, CampaignResult)
    csv_path, json_path = res.write(tmp_path)
    header = csv_path.read_text().splitlines()[0]
    assert header.startswith("probe,t,")
    data = json.loads(json_path.read_text())
    assert {"verdicts", "constants", "summary", "passed"} <= set(data)
    assert all({"margin", "n_trials", "passed"} <= set(v) for v in data["verdicts"])


def test_censored_cells_written(tmp_path):
    res = CampaignResult("x", 0, {}, [{"a": None, "b": 1.5, "c": True}], [Verdict("m", "<=", math.inf, 1.0, 1)])
    csv_path, json_path = res.write(tmp_path)
    assert csv_path.read_text().splitlines()[1] == "censored,1.5,1"
    assert json.loads(json_path.read_text())["verdicts"][0]["threshold"] == "inf"
