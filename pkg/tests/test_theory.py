import itertools
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgldvr.dynamics import DecaySchedule
from sgldvr.errors import ConfigError, InfeasibleHyperparametersError, SizeLimitError
from sgldvr.objectives import ObjectiveMetadata, make_quadratic
from sgldvr.theory import (
    batch_sums,
    brownian_p1,
    brownian_p1_bound,
    closed_form_c0,
    drift_bound_check,
    ergodicity_horizon,
    grad_norm_bound,
    recurrence_constants,
    saddle_quantities,
    stepsize_batch_partition,
    subset_variance,
    subset_variance_oracle,
    theory_report,
    validate_hyperparams,
    weight_sequences,
)

# Lyapunov weights


def test_single_backward_step():
    seq = weight_sequences(np.full(10, 0.01), 2.0, 1.0, 10)
    assert seq.c[10] == 0.0
    assert seq.c[9] == pytest.approx(1e-5, rel=1e-12)


def test_zero_lipschitz_collapses():
    eta = np.linspace(0.1, 0.01, 5)
    seq = weight_sequences(eta, 2.0, 0.0, 5)
    assert np.all(seq.c == 0.0)
    np.testing.assert_array_equal(seq.gamma, eta)


def _recursion_oracle(eta0, beta, L, B_e):
    # plain loop, independent of the vectorized code path and of the closed form
    c = 0.0
    for _ in range(B_e):
        c = c * (1 + beta * eta0 + 2 * eta0**2 * L**2 / B_e) + eta0**2 * L**3 / B_e
    return c


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-4, 0.5), st.floats(0.1, 10.0), st.floats(0.01, 5.0), st.integers(1, 200))
def test_closed_form_matches_recursion(eta0, beta, L, B_e):
    seq = weight_sequences(np.full(B_e, eta0), beta, L, B_e)
    cf = closed_form_c0(eta0, beta, L, B_e)
    assert seq.c[0] == pytest.approx(cf, rel=1e-12)
    assert _recursion_oracle(eta0, beta, L, B_e) == pytest.approx(cf, rel=1e-12)


def test_weight_sequence_length_error():
    with pytest.raises(ValueError):
        weight_sequences(np.ones(3), 2.0, 1.0, 4)


# feasibility


def test_feasible_small_stepsize():
    feas = validate_hyperparams(1e-3, 2.0, 1.0, 10)
    assert feas.feasible and feas.reason is None
    assert feas.c0 < 1e-5
    assert feas.lhs == pytest.approx(1e-3, rel=1e-2)


@pytest.mark.parametrize("L", [0.5, 1.0, 4.0])
def test_infeasible_large_stepsize(L):
    feas = validate_hyperparams(2.0 / L, 2.0, L, 10)
    assert not feas.feasible and feas.lhs >= 2.0
    assert "eta0*L" in feas.reason


@pytest.mark.parametrize("eta0", [0.1, 10.0, 1e4])
def test_zero_lipschitz_always_feasible(eta0):
    feas = validate_hyperparams(eta0, 2.0, 0.0, 10)
    assert feas.feasible and feas.c0 == 0.0


# first-order bound


def test_grad_norm_bound_example():
    assert grad_norm_bound(1.0, 1000, 0.5, 1.0, 0.0, 10, 1.0, 1.0) == pytest.approx(0.012, rel=1e-12)


def test_grad_norm_bound_zero():
    assert grad_norm_bound(0.0, 50, 0.3, 2.0, 0.1, 4, 1.0, 0.0) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 10.0), st.integers(1, 10**6), st.floats(0.01, 1.0), st.floats(0.0, 5.0))
def test_grad_norm_bound_halves(Delta_f, T, gmin, c0):
    b1 = grad_norm_bound(Delta_f, T, gmin, 1.0, c0, 3, 1.0)
    b2 = grad_norm_bound(Delta_f, 2 * T, gmin, 1.0, c0, 3, 1.0)
    assert b2 == pytest.approx(b1 / 2, rel=1e-12)


def test_grad_norm_bound_infeasible():
    with pytest.raises(InfeasibleHyperparametersError):
        grad_norm_bound(1.0, 10, 0.0, 1.0, 0.0, 1, 1.0)


# stepsize batches


def test_constant_partition_gaps():
    part = stepsize_batch_partition([0.1] * 20, 0.3)
    assert part[0] == 0
    assert set(np.diff(part)) == {3}


def test_partition_invalid_delta():
    with pytest.raises(ConfigError):
        stepsize_batch_partition([0.1] * 5, 0.0)


def test_partition_batch_sums_unit_schedule():
    sch = DecaySchedule(1.0, 0.0, 1.0, 1)
    for delta in (0.2, 0.5, 1.0):
        part = stepsize_batch_partition(sch, delta, 200_000)
        sums = batch_sums(sch, part)
        starts = np.array([sch.eta(n) for n in part[:-1]])
        assert np.all(sums >= delta)
        assert np.all(sums < delta + starts)
        assert np.all(delta + starts <= 2 * delta)
        # closed sums over [n_k, n_{k+1}] satisfy the two-sided property with slack
        closed = sums + np.array([sch.eta(n) for n in part[1:]])
        assert np.all(closed >= delta) and np.all(closed <= 2 * delta + starts)


@pytest.mark.parametrize("delta", [0.3, 0.5, 1.0])
def test_partition_ratio_tends_to_exp_delta(delta):
    sch = DecaySchedule(1.0, 0.0, 1.0, 1)
    part = stepsize_batch_partition(sch, delta, 2_000_000)
    ratio = part[-1] / part[-2]
    assert abs(ratio / math.exp(delta) - 1) < 0.05


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.001, 1.0), min_size=1, max_size=60), st.floats(0.01, 2.0))
def test_partition_property_on_lists(etas, delta):
    part = stepsize_batch_partition(etas, delta)
    if not part:
        assert all(e > delta for e in etas)
        return
    assert etas[part[0]] <= delta and all(e > delta for e in etas[: part[0]])
    for a, b in zip(part[:-1], part[1:]):
        s = math.fsum(etas[a:b])
        assert s >= delta
        # minimality: dropping the last element falls short
        assert math.fsum(etas[a : b - 1]) < delta


# recurrence constants


def _meta(L=0.0, mu1=4.0, mu2=1.0, psi1=0.0, psi2=0.0):
    return ObjectiveMetadata(grad_lipschitz=L, reg_mu1=mu1, reg_psi1=psi1, reg_mu2=mu2, reg_psi2=psi2)


def test_alpha_example():
    rc = recurrence_constants(_meta(), DecaySchedule(0.5, 0.0), 10, 1, 0.5, f_x0=1.0)
    assert rc.C1 == 0.5
    assert rc.alpha == pytest.approx(1 - 2 * math.exp(-1), rel=1e-12)
    assert rc.alpha == pytest.approx(0.26424, abs=1e-5)


def test_expected_tau_example():
    rc = recurrence_constants(_meta(), DecaySchedule(0.5, 0.0), 10, 1, 0.5, f_x0=1.0)
    rc = replace(rc, K=2.0)
    assert rc.expected_tau_bound(1) == pytest.approx(21.92, abs=0.01)


def test_noise_free_level_vanishes():
    # psi1 = psi2 = 0 and rho0 = 0: B is proportional to eta_{n0}, which goes to 0 with delta
    meta = _meta(L=1.0, mu1=2.0, mu2=1.0)
    levels = []
    for delta in (1e-2, 1e-4, 1e-6):
        rc = recurrence_constants(meta, DecaySchedule(0.1, 0.0), 10, 2, delta, f_x0=1.0)
        assert rc.eta_n0 <= delta
        levels.append(rc.level)
    assert levels[0] > levels[1] > levels[2] and levels[-1] < 1e-10


def test_recurrence_infeasible():
    with pytest.raises(InfeasibleHyperparametersError):
        recurrence_constants(_meta(L=4.0), DecaySchedule(1.0, 0.0), 10, 1, 0.5, f_x0=1.0)


def test_delta_too_small_flag():
    rc = recurrence_constants(_meta(), DecaySchedule(0.5, 0.0), 10, 1, 0.01, f_x0=1.0)
    assert rc.alpha <= 0 and rc.delta_too_small


def test_n0_is_first_index_below_delta():
    sch = DecaySchedule(3.0, 0.0, 1.0, 1)
    rc = recurrence_constants(_meta(L=0.01), sch, 10, 1, 0.25, f_x0=1.0)
    assert sch.eta(rc.n0) <= 0.25 < sch.eta(rc.n0 - 1)
    assert stepsize_batch_partition(sch, 0.25, 100)[0] == rc.n0


# reachability


@pytest.mark.parametrize("r,rho0", [(0.0, 1.0), (1.0, 0.0), (0.0, 0.0)])
def test_p1_boundary_zeros(r, rho0):
    assert brownian_p1(r, rho0, 1.0, [0.5]) == 0.0


@pytest.mark.parametrize("t_n", [0.01, 0.25, 1.0, 4.0, 100.0])
def test_p1_vacuous_at_unit_radius(t_n):
    b = brownian_p1_bound(1.0, 1.0, t_n, [0.0])
    assert b.reflection_base < 0 and b.p1 == 0.0


def test_reflection_factor_maximum_value():
    b = brownian_p1_bound(1.0, 1.0, 1.0, [0.0])
    assert b.reflection_base == pytest.approx(4 / math.sqrt(2 * math.pi) * math.exp(-0.5) - 1, rel=1e-12)
    assert b.reflection_base == pytest.approx(-0.03212, abs=1e-5)


def test_p1_monotone_in_radius():
    for d in (1, 2, 3):
        z = np.full(d, 0.3)
        vals = [brownian_p1(r, 1.0, 0.5, z) for r in np.linspace(0, 5, 200)]
        assert np.all(np.diff(vals) >= 0)
        assert all(0.0 <= v <= 1.0 for v in vals)


def test_ergodicity_monotonicity():
    meta = ObjectiveMetadata(grad_lipschitz=1.0, reg_mu1=2.0, reg_psi1=0.1, reg_mu2=2.0, reg_psi2=0.1)
    sch = DecaySchedule(0.1, 0.1)

    def H(d=2, eps=0.1, p=0.1):
        return ergodicity_horizon(meta, sch, 10, d, eps, p, np.ones(d), 2.0)

    assert H(p=0.05) == pytest.approx(2 * H(p=0.1), rel=1e-12)
    hs = [H(d=d) for d in range(1, 11)]
    assert np.all(np.diff(hs) > 0)
    big = [H(eps=e) * e for e in (1e3, 1e4, 1e5)]
    assert big[-1] == pytest.approx(big[-2], rel=1e-2)
    assert H(eps=1e5) < H(eps=1e3)


# saddle


def test_saddle_example():
    sq = saddle_quantities(0.1, 1.0, 1.0, 0.5, range(3))
    assert sq.zeta == pytest.approx(0.025, rel=1e-12)
    assert sq.radius == pytest.approx(math.sqrt(3) * 0.1, rel=1e-12)
    assert sq.Q == pytest.approx(0.0275, rel=1e-12)
    assert sq.radius**2 - sq.Q == pytest.approx(0.0025, rel=1e-9)


def test_saddle_Q_below_r_squared_sweep():
    rng = np.random.default_rng(0)
    for L, q, eps in np.exp(rng.uniform(-5, 5, size=(1000, 3))):
        sq = saddle_quantities(eps, L, q, 0.5, [])
        assert sq.Q < sq.radius**2


def test_saddle_scaling_slopes():
    eps = np.geomspace(1e-4, 1e-1, 10)
    rows = np.array([[s.zeta, s.radius, s.Q] for s in (saddle_quantities(e, 2.0, 0.7, 0.5, []) for e in eps)])
    slopes = np.polyfit(np.log(eps), np.log(rows), 1)[0]
    np.testing.assert_allclose(slopes, [2.0, 1.0, 2.0], rtol=0.01)


def test_saddle_d3_uses_sqrt_pi():
    sq = saddle_quantities(0.1, 1.0, 1.0, 0.5, [5, 6], d=3)
    for Ti, Pi in zip(sq.escape_times, sq.constrained_probs):
        assert Pi == pytest.approx(min(1.0, (sq.radius**2 - sq.Q) / (Ti * math.sqrt(math.pi))), rel=1e-12)


def test_saddle_low_dimension_marker():
    assert saddle_quantities(0.1, 1.0, 1.0, 0.5, [1], d=2).constrained_probs is None


def test_saddle_escape_time_closed_form_vs_sum():
    sch = DecaySchedule(1.0, 0.0, 1.0, 1)
    closed = saddle_quantities(0.1, 1.0, 1.0, 0.5, range(8, 12), eta0=1.0)
    direct = saddle_quantities(0.1, 1.0, 1.0, 0.5, range(8, 12), schedule=sch)
    assert all(Td > 0 for Td in direct.escape_times)
    # both grow like e^{i delta / 2}
    r_closed = np.diff(np.log(closed.escape_times))
    r_direct = np.diff(np.log(direct.escape_times))
    np.testing.assert_allclose(r_closed, 0.25, rtol=1e-12)
    np.testing.assert_allclose(r_direct, 0.25, atol=0.1)


def test_saddle_invalid():
    with pytest.raises(ValueError):
        saddle_quantities(0.1, 1.0, 0.0, 0.5, [])


# subset selection


def test_subset_variance_example():
    assert subset_variance([1.0, 2.0, 3.0], 2) == pytest.approx(1 / 6, rel=1e-14)
    assert subset_variance_oracle([1.0, 2.0, 3.0], 2) == pytest.approx(1 / 6, rel=1e-14)


def test_subset_variance_trivial_cases():
    assert subset_variance([1.0, 5.0, 2.0], 3) == 0.0
    assert subset_variance([[1.0, 2.0], [1.0, 2.0]], 1) == 0.0
    assert subset_variance_oracle([0.0, 0.0, 0.0, 0.0], 2) == 0.0
    with pytest.raises(ValueError):
        subset_variance([1.0, 2.0], 3)
    with pytest.raises(ValueError):
        subset_variance([1.0], 1)


def test_subset_variance_random_vectors():
    a = np.random.default_rng(0).standard_normal((6, 3))
    for b in range(1, 7):
        assert abs(subset_variance(a, b) - subset_variance_oracle(a, b)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 12), st.integers(1, 4), st.integers(0, 10**6), st.data())
def test_subset_variance_matches_enumeration(N, d, seed, data):
    b = data.draw(st.integers(1, N))
    assert math.comb(N, b) <= 10**4
    a = np.random.default_rng(seed).standard_normal((N, d))
    assert abs(subset_variance(a, b) - subset_variance_oracle(a, b)) <= 1e-12


def test_oracle_size_limit():
    with pytest.raises(SizeLimitError):
        subset_variance_oracle(np.arange(40.0), 20)


def test_oracle_is_brute_force():
    a = np.array([0.5, -1.0, 3.0, 2.0])
    means = [np.mean(s) for s in itertools.combinations(a, 2)]
    assert subset_variance_oracle(a, 2) == pytest.approx(np.var(means), rel=1e-14)


# bounded drift


def test_drift_zero_noise_and_zero_weights():
    assert drift_bound_check(1.0, 1.0, 100, 0, noise="zero") == 1.0
    assert drift_bound_check(1.0, 1.0, 100, 0, weights="zero") == 1.0


def test_drift_gaussian_probability():
    d = 5
    assert drift_bound_check(float(d), 1.0, 10_000, 1, d=d) >= 0.5


def test_drift_too_few_trials():
    with pytest.raises(ValueError):
        drift_bound_check(1.0, 1.0, 99, 0)


# report


def test_theory_report_contents():
    obj, meta = make_quadratic(2, 1.0)
    rep = theory_report(obj.spec, meta, 2, DecaySchedule(0.05, 0.01), 10, f_x0=1.0)
    assert rep["feasibility"]["feasible"]
    assert rep["objective"] == obj.spec
    assert "recurrence" in json.dumps(rep, default=float)
