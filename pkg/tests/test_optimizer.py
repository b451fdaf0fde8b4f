import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sh2opt.benchmarks.scalar import constant_family, gain_family, pole_family, random_affine_family
from sh2opt.benchmarks.wave import PDController
from sh2opt.optimizer import (ConstantStep, ExplicitStep, HalvingStep, PiecewiseStep, PowerLawStep,
                              estimate_local_constants, iteration_seed, observer_schedule, policy_from_spec,
                              probe_points, run_trials, sgd_run, stability_budget, validate_policy)
from sh2opt.oracle import exact_cost, exact_gradient
from sh2opt.sampling import LogUniform

DIST = LogUniform(1e-3, 1e3)


# step-size policies

def test_observer_schedule_values():
    pol = observer_schedule()
    assert pol(0) == 1e-4 and pol(20) == 1e-4
    assert pol(21) == 5e-5 and pol(40) == 5e-5
    assert pol(41) == 2.5e-5 and pol(60) == 2.5e-5
    assert pol(61) == pytest.approx(1.25e-5, rel=1e-15)
    assert pol(100) == pytest.approx(61 / 100 * 1.25e-5, rel=1e-15)


def test_observer_schedule_recorded_in_run():
    rec = sgd_run(constant_family(), np.array([1.0]), observer_schedule(), DIST, 1, 101, seed=0)
    assert rec.alphas[100] == pytest.approx(7.625e-6, rel=1e-15)


def test_observer_schedule_is_theta_one_over_k():
    rep = validate_policy(observer_schedule())
    assert rep.theta_power and rep.l2_summable
    assert rep.decay_exponent == 1.0
    head = np.sum(observer_schedule().steps(100_000) ** 2)
    assert head < rep.sum_squares < head + 1.25e-5**2 * 61**2 / 99_999


def test_basel_sum():
    a = 0.3
    rep = validate_policy(PowerLawStep(a, 1.0), budget=a * a * math.pi**2 / 6 * (1 + 1e-12))
    assert rep.sum_squares == pytest.approx(a * a * math.pi**2 / 6, rel=1e-12)
    assert rep.within_budget
    assert not validate_policy(PowerLawStep(a, 1.0), budget=0.99 * a * a * math.pi**2 / 6).within_budget


def test_power_law_horizon_sum():
    pol = PowerLawStep(0.5, 0.75, offset=2.0)
    assert pol.sum_squares(50) == pytest.approx(np.sum(pol.steps(50) ** 2), rel=1e-14)
    assert pol.sum_squares() == pytest.approx(0.25 * sum((k + 2.0) ** -1.5 for k in range(2_000_000))
                                              + 0.25 * 2 / math.sqrt(2_000_001.5), rel=1e-6)


def test_constant_step_not_l2():
    rep = validate_policy(ConstantStep(0.1))
    assert rep.sum_squares == math.inf
    assert not rep.l2_summable and not rep.theta_power


def test_halving_and_explicit_sums():
    assert HalvingStep(1e-2, 200).sum_squares() == pytest.approx(200 * 1e-4 / (1 - 0.25), rel=1e-12)
    assert ExplicitStep([0.3, 0.2, 0.1]).sum_squares() == pytest.approx(0.14)
    assert ExplicitStep([0.3, 0.2, 0.1])(5) == 0.0


def test_cap_applied_and_checked():
    pol = PowerLawStep(2.0, 1.0, alpha_max=0.5)
    assert pol(0) == 0.5 and pol(3) == 0.5 and pol(4) == pytest.approx(0.4)
    assert not validate_policy(PowerLawStep(2.0, 1.0), cap=1.0).within_cap
    assert validate_policy(pol, cap=0.5).within_cap


@settings(max_examples=50, deadline=None)
@given(alpha0=st.floats(1e-6, 10.0), p=st.floats(0.55, 2.0), k=st.integers(0, 10_000))
def test_power_law_nonnegative_and_bounded(alpha0, p, k):
    pol = PowerLawStep(alpha0, p, alpha_max=1.0)
    assert 0.0 <= pol(k) <= 1.0
    assert math.isfinite(pol.sum_squares())


def test_policy_from_spec():
    assert isinstance(policy_from_spec({"kind": "halving", "alpha0": 1e-2, "period": 200}), HalvingStep)
    assert isinstance(policy_from_spec({"kind": "observer"}), PiecewiseStep)
    with pytest.raises(ValueError):
        policy_from_spec({"kind": "adam"})
    with pytest.raises(ValueError):
        policy_from_spec({"kind": "constant", "alpha": 0.1, "beta": 2})


def test_policy_roundtrip_through_dict():
    for pol in (ConstantStep(0.2), PowerLawStep(0.1, 0.8), HalvingStep(1e-2, 200), observer_schedule(),
                ExplicitStep([0.1, 0.05])):
        again = policy_from_spec(pol.to_dict())
        np.testing.assert_array_equal(again.steps(300), pol.steps(300))


# stability budget

def test_budget_unit_constants():
    b = stability_budget(1, 1, 1, 1, 1)
    assert (b.R_star, b.budget, b.cap) == (5.0, 0.2, 1.0)


def test_budget_zero_variance():
    b = stability_budget(2.0, 3.0, 0.0, 0.1, 0.5)
    assert b.R_star == 2 * 3.0 * 4.0
    assert b.budget == pytest.approx(0.1 * 0.5 / (2 * 3.0 * 4.0))


def test_budget_linear_in_delta():
    assert stability_budget(1.3, 0.7, 2.1, 0.2, 1.0).budget == pytest.approx(
        2 * stability_budget(1.3, 0.7, 2.1, 0.1, 1.0).budget, rel=1e-15)


def test_budget_rejects_bad_inputs():
    for args in [(1, 0, 1, 1, 1), (1, 1, 1, 0, 1), (1, 1, 1, 1, -1), (-1, 1, 1, 1, 1), (1, 1, math.nan, 1, 1)]:
        with pytest.raises(ValueError):
            stability_budget(*args)
    assert stability_budget(0, 1, 0, 1, 1).budget == math.inf


# local constants

def test_local_constants_gain_family():
    pts = probe_points([0.0], [2.0], count=5)
    lc = estimate_local_constants(gain_family(), pts)
    assert lc.K == pytest.approx(1.0, rel=1e-12)
    assert lc.L == pytest.approx(0.5, rel=1e-12)
    assert lc.heuristic


def test_local_constants_constant_family():
    lc = estimate_local_constants(constant_family(2), probe_points([0.0, 0.0], [1.0, 1.0]))
    assert lc.K == pytest.approx(0.0, abs=1e-15) and lc.L == pytest.approx(0.0, abs=1e-15)


def test_local_constants_sigma_scaling():
    pts = np.array([[1.0], [2.0]])
    s1 = estimate_local_constants(gain_family(), pts, DIST, M=1, repetitions=2000, seed=1).sigma
    s10 = estimate_local_constants(gain_family(), pts, DIST, M=10, repetitions=2000, seed=2).sigma
    assert 0.07 < s10**2 / s1**2 < 0.13


def test_local_constants_single_point_rejected():
    with pytest.raises(ValueError):
        estimate_local_constants(gain_family(), np.array([[1.0]]))
    with pytest.raises(ValueError):
        probe_points([1.0], [0.0])


# descent loop

def test_exact_gradient_recursion():
    fam = gain_family()
    rec = sgd_run(fam, np.array([2.0]), ConstantStep(0.5), DIST, 1, 30,
                  gradient=lambda m: exact_gradient(fam, m))
    np.testing.assert_allclose(rec.mus[:, 0], 2.0 * 0.75 ** np.arange(31), rtol=1e-13)


def test_zero_gradient_fixed_point():
    rec = sgd_run(constant_family(2), np.array([0.3, -1.0]), ConstantStep(1.0), DIST, 5, 10, seed=3)
    np.testing.assert_array_equal(rec.mus, np.tile([0.3, -1.0], (11, 1)))


def test_zero_iterations():
    rec = sgd_run(gain_family(), np.array([2.0]), ConstantStep(1.0), DIST, 5, 0, cost=lambda m: 1.0)
    assert rec.mus.shape == (1, 1) and rec.iterations == 0
    assert rec.checkpoints == {0: 1.0}


def test_replay_reproduces_iterates():
    fam, mu0 = random_affine_family(n=5, n_params=3, seed=2)
    rec = sgd_run(fam, mu0, PowerLawStep(0.05), DIST, 4, 25, seed=9)
    np.testing.assert_allclose(rec.replay(), rec.mus, rtol=0, atol=1e-14)


def test_bit_identical_reruns_and_thread_independence():
    fam, mu0 = random_affine_family(n=5, n_params=3, seed=2)
    a = run_trials(fam, mu0, PowerLawStep(0.05), DIST, 8, 15, seed=4, trials=3, threads=1)
    b = run_trials(fam, mu0, PowerLawStep(0.05), DIST, 8, 15, seed=4, trials=3, threads=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.mus, y.mus)
    assert not np.array_equal(a[0].mus, a[1].mus)


def test_iteration_seed_streams_differ():
    draw = [np.random.default_rng(iteration_seed(0, t, k)).random() for t in range(3) for k in range(3)]
    assert len(set(draw)) == 9
    assert np.random.default_rng(iteration_seed(0, 1, 2)).random() == draw[5]


def test_projection_onto_box_is_flagged():
    pd = PDController()
    rec = sgd_run(pd, np.array([-0.01, -0.01]), ConstantStep(10.0), DIST, 1, 1,
                  gradient=lambda m: np.array([-1.0, 0.5]))
    np.testing.assert_array_equal(rec.mus[1], [0.0, -5.01])
    assert rec.projected[0]


def test_divergence_guard_stops_run():
    fam = pole_family()
    rec = sgd_run(fam, np.array([0.5]), ConstantStep(1.0), DIST, 1, 5, cost=lambda m: exact_cost(fam, m),
                  checkpoint_every=1, divergence_bound=10.0, gradient=lambda m: np.array([1.0]))
    assert rec.termination == "diverged"
    assert rec.iterations == 1 and rec.checkpoints[1] == math.inf


def test_evaluation_failure_keeps_partial_record():
    def gradient(m):
        if m[0] < 0:
            raise ZeroDivisionError("pole on the imaginary axis")
        return np.array([1.0])

    rec = sgd_run(pole_family(), np.array([0.5]), ConstantStep(1.0), DIST, 1, 5, gradient=gradient)
    assert rec.termination == "evaluation-failed"
    assert rec.iterations == 1 and rec.mus.shape == (2, 1)


def test_descent_in_expectation():
    fam = gain_family()
    mu0 = np.array([2.0])
    # L = 1/2 on this family, so alpha = 1 respects the 1/L cap
    finals = [sgd_run(fam, mu0, ConstantStep(1.0), DIST, 1, 1, seed=s).mus[1] for s in range(1000)]
    mean_cost = np.mean([exact_cost(fam, m) for m in finals])
    assert mean_cost < exact_cost(fam, mu0)


def test_record_serialization(tmp_path):
    fam, mu0 = random_affine_family(n=4, n_params=2, seed=1)
    rec = sgd_run(fam, mu0, PowerLawStep(0.05), DIST, 3, 4, seed=0, cost=lambda m: exact_cost(fam, m),
                  checkpoint_every=2)
    rec.write(tmp_path / "run")
    lines = (tmp_path / "run.csv").read_text().splitlines()
    assert lines[0].startswith("k,alpha,mu_0,mu_1,estimate_norm,checkpoint_cost")
    assert len(lines) == 1 + 5
    meta = json.loads((tmp_path / "run.json").read_text())
    assert meta["iterations"] == 4 and set(meta["checkpoints"]) == {"0", "2", "4"}
