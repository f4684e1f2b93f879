import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from dppsnn.errors import ContractViolation
from dppsnn.point_process import (ConstantIntensity, IntensityModel, SpikeTrain, TimeVaryingIntensity,
                                  compensator_at, compensator_mc, log_likelihood,
                                  poisson_times_from_uniforms, rescaled_intervals,
                                  sample_homogeneous_poisson, thin_with_noise, thinning_sample)

from conftest import merge_sparse_columns


def onehot_train(times, dims, D, T):
    marks = np.zeros((len(times), D))
    marks[np.arange(len(times)), dims] = 1.0
    return SpikeTrain(times, marks, T)


class SelfExciting(IntensityModel):
    """History-dependent test model: rate 0.5 + 0.4 per event in the last unit of time, capped."""

    dim = 1

    def intensities(self, t, history):
        recent = np.sum(history.times > t - 1.0)
        return [min(0.5 + 0.4 * recent, 3.0)]

    def upper_bound(self):
        return 3.0


class Overshooting(IntensityModel):
    dim = 1

    def intensities(self, t, history):
        return [5.0]

    def upper_bound(self):
        return 2.0


# -- SpikeTrain ----------------------------------------------------------------


def test_train_validation():
    with pytest.raises(ValueError):
        SpikeTrain([2.0, 1.0], np.eye(2), 3.0)
    with pytest.raises(ValueError):
        SpikeTrain([1.0, 1.0], np.eye(2), 3.0)
    with pytest.raises(ValueError):
        SpikeTrain([0.0], np.ones((1, 1)), 3.0)
    with pytest.raises(ValueError):
        SpikeTrain([4.0], np.ones((1, 1)), 3.0)
    with pytest.raises(ValueError):
        SpikeTrain([1.0], np.ones((2, 1)), 3.0)
    with pytest.raises(ValueError):
        SpikeTrain.empty(1, 0.0)


@given(st.lists(st.floats(0.001, 10.0), min_size=0, max_size=20, unique=True), st.floats(0.0, 11.0))
def test_history_before_is_strict_prefix(times, t):
    times = sorted(times)
    tr = onehot_train(times, [0] * len(times), 1, 10.0)
    h = tr.history_before(t)
    assert list(h.times) == [s for s in times if s < t]


def test_restrict_and_merge():
    tr = onehot_train([1.0, 2.0, 3.0], [0, 1, 2], 3, 5.0)
    obs = tr.restrict([0, 2])
    assert list(obs.times) == [1.0, 3.0]
    hid = tr.restrict([1])
    back = obs.merge(hid)
    np.testing.assert_array_equal(back.times, tr.times)
    np.testing.assert_array_equal(back.marks, tr.marks)
    assert list(tr.dims()) == [0, 1, 2]
    assert len(tr.events) == 3 and tr.events[1].time == 2.0
    with pytest.raises(ValueError):
        tr.merge(SpikeTrain.empty(2, 5.0))


def test_from_events():
    tr = SpikeTrain.from_events([(0.5, [1.0, 0.0]), (0.7, [0.0, 1.0])], 1.0)
    assert tr.dim == 2 and len(tr) == 2
    assert len(SpikeTrain.from_events([], 1.0, dim=3)) == 0
    with pytest.raises(ValueError):
        SpikeTrain.from_events([], 1.0)


# -- homogeneous Poisson --------------------------------------------------------


def test_poisson_mean_count():
    rng = np.random.default_rng(0)
    counts = [len(sample_homogeneous_poisson(2.0, 5.0, rng)) for _ in range(10**4)]
    assert abs(np.mean(counts) - 10.0) <= 0.3


def test_poisson_inverse_cdf_gap():
    assert poisson_times_from_uniforms(np.array([math.exp(-2.0)]), 1.0)[0] == pytest.approx(2.0, rel=1e-15)


def test_poisson_tiny_horizon_is_empty():
    assert len(sample_homogeneous_poisson(1.0, 1e-12, np.random.default_rng(0))) == 0


@pytest.mark.parametrize("rate,horizon", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0)])
def test_poisson_rejects_bad_arguments(rate, horizon):
    with pytest.raises(ValueError):
        sample_homogeneous_poisson(rate, horizon, np.random.default_rng(0))


@given(st.floats(0.1, 50.0), st.floats(0.1, 20.0), st.integers(0, 2**32 - 1))
def test_poisson_output_increasing_within_horizon(rate, horizon, seed):
    t = sample_homogeneous_poisson(rate, horizon, np.random.default_rng(seed))
    assert np.all(np.diff(t) > 0.0)
    assert t.size == 0 or (t[0] > 0.0 and t[-1] <= horizon)


def test_poisson_count_distribution():
    rng = np.random.default_rng(1)
    counts = np.array([len(sample_homogeneous_poisson(1.5, 2.0, rng)) for _ in range(5000)])
    k = np.arange(8)
    observed = np.array([np.sum(counts == i) for i in k[:-1]] + [np.sum(counts >= k[-1])])
    pmf = stats.poisson.pmf(k[:-1], 3.0)
    expected = 5000 * np.append(pmf, 1.0 - pmf.sum())
    assert stats.chisquare(observed, expected).pvalue > 0.01


# -- thinning -------------------------------------------------------------------


def test_thinning_constant_mean_count():
    rng = np.random.default_rng(2)
    model = ConstantIntensity([1.0], upper_bound=4.0)
    counts = [len(thinning_sample(model, 100.0, rng)) for _ in range(1000)]
    assert abs(np.mean(counts) - 100.0) <= 10.0


def test_thinning_zero_model_is_empty():
    model = ConstantIntensity([0.0, 0.0], upper_bound=3.0)
    assert len(thinning_sample(model, 50.0, np.random.default_rng(0))) == 0


def test_thinning_category_fractions():
    rng = np.random.default_rng(3)
    model = ConstantIntensity([1.0, 3.0], upper_bound=8.0)
    dims = np.concatenate([thinning_sample(model, 100.0, rng).dims() for _ in range(50)])
    assert abs(np.mean(dims == 1) - 0.75) <= 0.02


def test_thinning_rejects_bound_violation():
    with pytest.raises(ContractViolation):
        thinning_sample(Overshooting(), 10.0, np.random.default_rng(0))


@given(st.integers(0, 2**32 - 1))
def test_thinning_output_is_simple_and_one_hot(seed):
    tr = thinning_sample(SelfExciting(), 20.0, np.random.default_rng(seed))
    assert np.all(np.diff(tr.times) > 0.0)
    assert np.all(tr.marks.sum(axis=1) == 1.0)


def test_thinning_rate_invariance():
    # doubling the proposal rate leaves the count distribution unchanged
    rng = np.random.default_rng(4)
    a = [len(thinning_sample(SelfExciting(), 10.0, rng)) for _ in range(1500)]

    class Looser(SelfExciting):
        def upper_bound(self):
            return 6.0

    b = [len(thinning_sample(Looser(), 10.0, rng)) for _ in range(1500)]
    edges = np.arange(0, max(max(a), max(b)) + 2)
    ha, _ = np.histogram(a, edges)
    hb, _ = np.histogram(b, edges)
    assert stats.chi2_contingency(merge_sparse_columns(np.array([ha, hb]))).pvalue > 0.01


def test_thin_with_noise_is_deterministic():
    rng = np.random.default_rng(5)
    props = sample_homogeneous_poisson(3.0, 10.0, rng)
    u = rng.random(len(props))
    a = thin_with_noise(SelfExciting(), 10.0, props, u)
    b = thin_with_noise(SelfExciting(), 10.0, props, u)
    np.testing.assert_array_equal(a.times, b.times)


def test_thinning_clamped_history_conditions_but_is_not_output():
    clamp = onehot_train([1.0, 1.1, 1.2], [0, 0, 0], 1, 5.0)
    rng = np.random.default_rng(6)
    tr = thinning_sample(SelfExciting(), 5.0, rng, clamped_history=clamp)
    assert not set(tr.times) & set(clamp.times)


# -- compensator and likelihood ---------------------------------------------------


def test_compensator_constant_is_exact():
    model = ConstantIntensity([2.0])
    tr = SpikeTrain.empty(1, 5.0)
    for M in (1, 7, 100):
        assert compensator_mc(model, tr, M, np.random.default_rng(M)) == pytest.approx(10.0, rel=1e-15)


def test_compensator_zero_model():
    assert compensator_mc(ConstantIntensity([0.0]), SpikeTrain.empty(1, 5.0), 10, np.random.default_rng(0)) == 0.0


def test_compensator_rejects_zero_samples():
    with pytest.raises(ValueError):
        compensator_mc(ConstantIntensity([1.0]), SpikeTrain.empty(1, 5.0), 0, np.random.default_rng(0))


def test_compensator_linear_ramp():
    model = TimeVaryingIntensity(lambda t: [t], 1, 10.0)
    tr = SpikeTrain.empty(1, 10.0)
    rng = np.random.default_rng(7)
    errs = []
    for M in (100, 10000):
        est = [compensator_mc(model, tr, M, rng) for _ in range(200)]
        assert abs(np.mean(est) - 50.0) <= 3.0 * np.std(est) / math.sqrt(len(est))
        errs.append(np.std(est))
    # standard error shrinks as 1/sqrt(M)
    assert errs[1] / errs[0] == pytest.approx(0.1, rel=0.2)


def test_compensator_unbiased_for_history_dependent_model():
    tr = thinning_sample(SelfExciting(), 10.0, np.random.default_rng(8))
    grid = (np.arange(20000) + 0.5) / 20000 * 10.0
    exact = compensator_at(SelfExciting(), tr, grid)
    rng = np.random.default_rng(9)
    est = np.array([compensator_mc(SelfExciting(), tr, 20, rng) for _ in range(1000)])
    assert abs(est.mean() - exact) <= 3.0 * est.std() / math.sqrt(len(est))


def test_log_likelihood_examples():
    rng = np.random.default_rng(0)
    tr = onehot_train([1.0, 2.0], [0, 0], 1, 3.0)
    assert log_likelihood(ConstantIntensity([1.0]), tr, 5, rng) == pytest.approx(-3.0, abs=1e-15)
    assert log_likelihood(ConstantIntensity([2.0]), SpikeTrain.empty(1, 5.0), 5, rng) == pytest.approx(-10.0)


@given(st.lists(st.floats(0.01, 10.0), max_size=15, unique=True), st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_log_likelihood_poisson_closed_form(times, r0, r1):
    times = sorted(times)
    dims = [i % 2 for i in range(len(times))]
    tr = onehot_train(times, dims, 2, 10.0)
    n1 = sum(dims)
    expect = (len(times) - n1) * math.log(r0) + n1 * math.log(r1) - (r0 + r1) * 10.0
    got = log_likelihood(ConstantIntensity([r0, r1]), tr, 3, np.random.default_rng(0))
    assert got == pytest.approx(expect, rel=1e-12, abs=1e-12)


def test_log_likelihood_impossible_event():
    tr = onehot_train([1.0], [1], 2, 3.0)
    assert log_likelihood(ConstantIntensity([1.0, 0.0]), tr, 5, np.random.default_rng(0)) == -math.inf


# -- time rescaling -------------------------------------------------------------------


def test_rescaled_intervals_constant():
    tr = onehot_train([1.0, 2.0, 4.0], [0, 0, 0], 1, 5.0)
    np.testing.assert_allclose(rescaled_intervals(ConstantIntensity([3.0]), tr, 4), [3.0, 6.0], rtol=1e-14)


def test_rescaled_intervals_zero_intensity():
    tr = onehot_train([1.0, 2.0], [0, 0], 1, 5.0)
    assert rescaled_intervals(ConstantIntensity([0.0]), tr, 3)[0] == 0.0


def test_rescaled_intervals_errors():
    tr = onehot_train([1.0, 2.0], [0, 0], 1, 5.0)
    with pytest.raises(ValueError):
        rescaled_intervals(ConstantIntensity([1.0]), tr, 1)
    with pytest.raises(ValueError):
        rescaled_intervals(ConstantIntensity([1.0]), SpikeTrain.empty(1, 5.0), 4)


def test_rescaled_intervals_of_self_exciting_samples_are_exponential():
    # one long train: pooling many short ones biases the gaps low by about 1 / Lambda(T)
    tr = thinning_sample(SelfExciting(), 3000.0, np.random.default_rng(10))
    iv = rescaled_intervals(SelfExciting(), tr, 50)
    assert len(iv) > 2000
    assert stats.kstest(iv, "expon").pvalue > 0.01
