import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sh2opt.benchmarks.scalar import constant_family, gain_family, random_affine_family
from sh2opt.estimator import (EstimateAborted, estimate_gradient, estimator_bias_probe, integrand,
                              repeated_estimates)
from sh2opt.oracle import exact_gradient
from sh2opt.sampling import LogUniform
from sh2opt.systems import ParameterBox, ParametrizedSystem


class FunctionFamily(ParametrizedSystem):
    n_params, shape, domain = 1, (1, 1), ParameterBox.unbounded(1)

    def __init__(self, fun):
        self.fun = fun

    def freqresp_with_gradient(self, mu, omegas):
        return self.fun(mu, np.atleast_1d(omegas))


def zero_family():
    return FunctionFamily(lambda mu, w: (np.zeros((w.size, 1, 1), complex), np.zeros((1, w.size, 1, 1), complex)))


def test_integrand_scalar_gain():
    assert integrand(gain_family(), np.array([2.0]), 0.0)[0] == pytest.approx(1 / math.pi, rel=1e-14)
    w = 3.0
    assert integrand(gain_family(), np.array([2.0]), w)[0] == pytest.approx(2 / (2 * math.pi * (1 + w**2)))


def test_integrand_zero_system():
    np.testing.assert_array_equal(integrand(zero_family(), np.array([1.0]), np.array([0.0, 5.0])), 0.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), w=st.floats(1e-3, 1e3))
def test_integrand_conjugate_symmetry(seed, w):
    fam, mu = random_affine_family(n=5, n_params=2, seed=seed)
    f = integrand(fam, mu, np.array([w, -w]))
    np.testing.assert_allclose(f[1], np.conj(f[0]), rtol=1e-10, atol=1e-15)


def test_mean_of_single_sample_estimates_matches_gradient():
    # the stored per-sample terms of one M=1e5 call are 1e5 independent M=1 estimates
    est = estimate_gradient(gain_family(), np.array([2.0]), LogUniform(1e-3, 1e3), 100_000, seed=11)
    terms = est.re_f[:, 0] / est.densities
    se = terms.std(ddof=1) / math.sqrt(terms.size)
    assert abs(terms.mean() - 1.0) <= 3 * se


def test_single_sample_record_reconstructs():
    est = estimate_gradient(gain_family(), np.array([2.0]), LogUniform(1e-3, 1e3), 1, seed=12)
    np.testing.assert_array_equal(est.recompute(), est.estimate)
    assert est.estimate[0] == est.re_f[0, 0] / est.densities[0]


def test_recompute_identity_many_samples():
    fam, mu = random_affine_family(n=6, n_params=3, seed=1)
    est = estimate_gradient(fam, mu, LogUniform(1e-3, 1e3), 257, seed=13)
    np.testing.assert_allclose(est.recompute(), est.estimate, rtol=0, atol=1e-14 * np.abs(est.estimate).max())
    assert np.all(est.densities > 0)


def test_zero_system_estimate():
    est = estimate_gradient(zero_family(), np.array([1.0]), LogUniform(1e-3, 1e3), 50, seed=0)
    np.testing.assert_array_equal(est.estimate, 0.0)
    np.testing.assert_array_equal(est.sample_variance, 0.0)


def test_estimates_are_real():
    fam, mu = random_affine_family(n=6, n_params=3, seed=2)
    est = estimate_gradient(fam, mu, LogUniform(1e-3, 1e3), 20, seed=0)
    assert est.estimate.dtype == np.float64


def test_determinism_across_workers():
    fam, mu = random_affine_family(n=6, n_params=3, seed=3)
    dist = LogUniform(1e-3, 1e3)
    a = estimate_gradient(fam, mu, dist, 400, seed=5, workers=1).estimate
    b = estimate_gradient(fam, mu, dist, 400, seed=5, workers=4).estimate
    np.testing.assert_array_equal(a, b)


def test_record_cap_keeps_running_sums():
    dist = LogUniform(1e-3, 1e3)
    full = estimate_gradient(gain_family(), np.array([2.0]), dist, 500, seed=8)
    capped = estimate_gradient(gain_family(), np.array([2.0]), dist, 500, seed=8, record_cap=10)
    np.testing.assert_array_equal(full.estimate, capped.estimate)
    assert capped.omegas.size == 10 and not capped.complete
    with pytest.raises(ValueError):
        capped.recompute()


def test_failed_sample_aborts_estimate():
    def bad(mu, w):
        if np.any(np.abs(w) > 1.0):
            raise ZeroDivisionError("pole")
        return np.ones((w.size, 1, 1), complex), np.ones((1, w.size, 1, 1), complex)

    with pytest.raises(EstimateAborted):
        estimate_gradient(FunctionFamily(bad), np.array([1.0]), LogUniform(1e-3, 1e3), 50, 0)


def test_invalid_sample_count():
    with pytest.raises(ValueError):
        estimate_gradient(gain_family(), np.array([1.0]), LogUniform(1e-3, 1e3), 0)


def test_csv_export(tmp_path):
    est = estimate_gradient(gain_family(), np.array([2.0]), LogUniform(1e-3, 1e3), 4, seed=1)
    est.to_csv(tmp_path / "samples.csv")
    lines = (tmp_path / "samples.csv").read_text().splitlines()
    assert lines[0] == "omega,p,re_f_0" and len(lines) == 5


def test_bias_probe_covering_support():
    fam, mu = random_affine_family(n=6, n_params=3, seed=4)
    probe = estimator_bias_probe(fam, mu, LogUniform(1e-4, 1e5), 10, 2000, exact_gradient(fam, mu), seed=3)
    assert np.all(probe.within(3.0))


def test_bias_probe_detects_truncation():
    fam = gain_family()
    mu = np.array([2.0])
    probe = estimator_bias_probe(fam, mu, LogUniform(1e4, 1e6), 10, 200, exact_gradient(fam, mu), seed=3)
    assert not np.any(probe.within(3.0))
    # the excluded band carries almost the whole gradient
    assert probe.bias[0] == pytest.approx(-1.0, abs=1e-3)


def test_bias_probe_zero_system():
    probe = estimator_bias_probe(constant_family(1, 0.0), np.array([1.0]), LogUniform(1e-3, 1e3), 5, 20,
                                 np.zeros(1))
    np.testing.assert_array_equal(probe.bias, 0.0)


def test_variance_scales_with_sample_count():
    mu = np.array([2.0])
    dist = LogUniform(1e-3, 1e3)
    v1 = repeated_estimates(gain_family(), mu, dist, 1, 10_000, seed=20).var(axis=0, ddof=1)
    v10 = repeated_estimates(gain_family(), mu, dist, 10, 10_000, seed=21).var(axis=0, ddof=1)
    ratio = (v1 / 10) / v10
    assert 0.8 <= ratio[0] <= 1.25


def test_unbiased_many_repetitions():
    fam, mu = random_affine_family(n=6, n_params=3, seed=5)
    est = repeated_estimates(fam, mu, LogUniform(1e-4, 1e5), 4, 10_000, seed=6)
    se = est.std(axis=0, ddof=1) / math.sqrt(est.shape[0])
    assert np.all(np.abs(est.mean(axis=0) - exact_gradient(fam, mu)) <= 4 * se)
