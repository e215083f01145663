import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ziptail import dgp
from ziptail.tail_core import (
    INT64_MAX,
    EmptySampleError,
    SampleBatch,
    admissible_range,
    attach_ci,
    beta_hat,
    beta_hat_averaged,
    deviation_bound,
    empirical_survival,
    exceedance_counts,
    find_plateau,
    k_ln_rule,
    level_threshold,
    normal_quantile,
    stability_scan,
    studentized_ci,
    studentized_half_width,
    studentized_statistic,
)

SMALL = [1, 2, 3, 10, 100]

batches = st.lists(st.integers(min_value=1, max_value=10**12), min_size=1, max_size=1000)
skewed = st.lists(
    st.one_of(st.integers(1, 30), st.integers(1, 10**6), st.integers(1, INT64_MAX)),
    min_size=1, max_size=400,
)


def naive_counts(values, levels):
    return [sum(1 for v in values if v > math.exp(l)) for l in levels]


# --- batches and thresholds ---------------------------------------------------


def test_batch_rejects_empty_and_nonpositive():
    with pytest.raises(EmptySampleError, match="empty sample"):
        SampleBatch([])
    with pytest.raises(ValueError):
        SampleBatch([1, 0, 3])
    with pytest.raises(ValueError):
        SampleBatch([1.5, 2.0])


def test_batch_is_read_only():
    b = SampleBatch([3, 1, 2])
    assert b.n == 3 and len(b) == 3
    with pytest.raises(ValueError):
        b.values[0] = 7


@pytest.mark.parametrize("level,expected", [(0, 1), (1, 2), (2, 7), (3, 20), (10, 22026), (20, 485165195)])
def test_level_threshold_small(level, expected):
    assert level_threshold(level) == expected


def test_level_threshold_matches_high_precision_floor():
    mpmath = pytest.importorskip("mpmath")
    mpmath.mp.dps = 50
    for level in range(0, 44):
        assert level_threshold(level) == int(mpmath.floor(mpmath.exp(level)))
    # e**44 > 2**63 - 1
    assert level_threshold(44) == INT64_MAX


# --- empirical survival ---------------------------------------------------------


def test_empirical_survival_hand_counts():
    curve = empirical_survival(SampleBatch(SMALL), [0, 1])
    assert curve.at(0) == pytest.approx(0.8)
    assert curve.at(1) == pytest.approx(0.6)
    assert list(curve.counts) == [4, 3]


@settings(max_examples=200, deadline=None)
@given(batches, st.lists(st.integers(0, 30), min_size=1, max_size=12))
def test_streaming_counts_equal_naive_recount(values, levels):
    got = exceedance_counts(np.array(values, dtype=np.int64), levels)
    assert list(got) == naive_counts(values, levels)


@settings(max_examples=150, deadline=None)
@given(batches)
def test_survival_curve_is_monotone(values):
    curve = empirical_survival(SampleBatch(values), range(0, 30))
    p = np.asarray(curve.probs)
    assert np.all(np.diff(p) <= 0)
    assert np.all((p >= 0) & (p <= 1))


# --- point estimator ---------------------------------------------------------------


def test_beta_hat_hand_example():
    est = beta_hat(SampleBatch(SMALL), 0)
    assert est.beta_hat == pytest.approx(math.log(0.8) - math.log(0.6), rel=1e-12)
    assert est.beta_hat == pytest.approx(0.287682, abs=1e-6)
    assert not est.degenerate


def test_beta_hat_all_values_above_next_level():
    est = beta_hat(SampleBatch([50, 60, 70]), 2)
    assert est.beta_hat == 0.0 and not est.degenerate


def test_beta_hat_degenerate_when_nothing_exceeds():
    est = beta_hat(SampleBatch([1, 2, 3]), 3)
    assert est.beta_hat == 0.0 and est.degenerate


@settings(max_examples=150, deadline=None)
@given(skewed, st.integers(0, 12), st.randoms(use_true_random=False))
def test_beta_hat_permutation_invariant(values, k, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    a = beta_hat(SampleBatch(values), k)
    b = beta_hat(SampleBatch(shuffled), k)
    assert a == b


@settings(max_examples=150, deadline=None)
@given(skewed, st.integers(0, 12))
def test_beta_hat_is_nonnegative(values, k):
    est = beta_hat(SampleBatch(values), k)
    assert est.beta_hat >= 0
    if est.degenerate:
        assert est.beta_hat == 0


# --- averaged estimator ---------------------------------------------------------


def test_averaged_brute_force_window():
    b = SampleBatch(SMALL + [5, 30, 400, 2000])
    direct = [beta_hat(b, j).beta_hat for j in (1, 2, 3)]
    est = beta_hat_averaged(b, 2, 1)
    assert est.beta_hat == pytest.approx(sum(direct) / 3, rel=1e-14)
    assert est.m == 1


def test_averaged_window_must_stay_above_zero():
    with pytest.raises(ValueError, match="window exceeds level"):
        beta_hat_averaged(SampleBatch(SMALL), 1, 1)


def test_averaged_propagates_degenerate_terms():
    b = SampleBatch([1, 3, 9, 25])  # nothing above e**4
    est = beta_hat_averaged(b, 2, 1)
    assert est.degenerate
    direct = [beta_hat(b, j).beta_hat for j in (1, 2, 3)]
    assert direct[-1] == 0.0
    assert est.beta_hat == pytest.approx(sum(direct) / 3)


@settings(max_examples=100, deadline=None)
@given(skewed, st.integers(1, 12))
def test_averaging_with_zero_width_is_identity(values, k):
    b = SampleBatch(values)
    assert beta_hat_averaged(b, k, 0) == beta_hat(b, k)


# --- deviation bound and Bernstein coverage -------------------------------------------


def test_deviation_bound_example():
    b = deviation_bound(10**4, 0.05, 0.1)
    assert b.u_n == pytest.approx(3.68888e-4, rel=1e-5)
    assert b.applicable
    assert b.bound == pytest.approx(0.36442, rel=1e-4)
    assert 16 * b.u_n == pytest.approx(5.902e-3, rel=1e-3)


def test_deviation_bound_flags_small_tail_mass():
    b = deviation_bound(1000, 0.05, 0.01)
    assert not b.applicable
    assert b.bound == pytest.approx(6 * math.sqrt(math.log(40) / 1000 / 0.01))


@pytest.mark.parametrize("delta,p", [(0.0, 0.1), (0.5, 0.1), (0.1, 0.0), (0.1, 1.5)])
def test_deviation_bound_rejects_bad_arguments(delta, p):
    with pytest.raises(ValueError):
        deviation_bound(100, delta, p)


@pytest.mark.parametrize("n,k,delta", [(2000, 3, 0.1), (500, 2, 0.2), (10**4, 5, 0.05)])
def test_bernstein_coverage(n, k, delta):
    spec = dgp.HeavyTailSpec(0.5)
    p_k = dgp.tail_prob(spec, k)
    u = math.log(2 / delta) / n
    assert p_k >= 4 * u
    reps = 600
    fails = 0
    for r in range(reps):
        b = dgp.sample(spec, dgp.replicate_rng(7, n, k, r), n)
        p_hat = empirical_survival(b, [k]).probs[0]
        fails += abs(p_hat - p_k) > 2 * math.sqrt(p_k * u)
    assert fails / reps <= delta + 0.02


# --- confidence intervals ---------------------------------------------------------------


def test_normal_quantile_accuracy():
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-8)
    assert normal_quantile(0.5) == pytest.approx(0.0, abs=1e-12)
    assert normal_quantile(0.995) == pytest.approx(2.5758293035489, abs=1e-8)


def test_half_width_example():
    hw = studentized_half_width(0.5, 10**4, 0.1, 0.95)
    assert hw == pytest.approx(1.959964 * math.sqrt(0.648721 / 1000), rel=1e-5)
    assert hw == pytest.approx(0.049921, abs=1e-6)


def test_half_width_needs_tail_mass():
    with pytest.raises(ValueError, match="no tail mass"):
        studentized_half_width(0.5, 100, 0.0, 0.95)


@settings(max_examples=100, deadline=None)
@given(skewed, st.integers(0, 8), st.sampled_from([0.8, 0.9, 0.95, 0.99]))
def test_ci_brackets_estimate(values, k, level):
    est = beta_hat(SampleBatch(values), k)
    if est.p_hat_k == 0:
        return
    est = attach_ci(est, level)
    lo, hi = est.ci[0], est.ci[1]
    assert 0 <= lo <= est.beta_hat <= hi


def test_ci_widens_with_level():
    b = dgp.sample(dgp.HeavyTailSpec(0.5), np.random.default_rng(1), 5000)
    a = studentized_ci(b, 3, 0.9)
    c = studentized_ci(b, 3, 0.99)
    assert c.ci[1] - c.ci[0] > a.ci[1] - a.ci[0]


def test_studentized_statistic_sign_and_scale():
    est = beta_hat(SampleBatch(SMALL), 0)
    s = studentized_statistic(est, 0.0)
    expected = math.sqrt(5 * 0.8) * est.beta_hat / math.sqrt(math.expm1(est.beta_hat))
    assert s == pytest.approx(expected)


# --- level selection -----------------------------------------------------------------


def test_k_ln_rule_examples():
    assert k_ln_rule(10**6, 1.0) == 14
    assert k_ln_rule(round(math.exp(10)), 0.5) == 5


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10**9), st.floats(0.1, 2.0))
def test_k_ln_rule_squares(n, A):
    k1, k2 = k_ln_rule(n, A), k_ln_rule(n * n, A)
    assert abs(k2 - 2 * k1) <= 1


def test_k_ln_rule_rejects_bad_input():
    with pytest.raises(ValueError):
        k_ln_rule(1)
    with pytest.raises(ValueError):
        k_ln_rule(10, 0.0)


def test_scan_beyond_data_is_all_degenerate():
    rows = stability_scan(SampleBatch(SMALL), range(6, 10))
    assert len(rows) == 4
    assert all(r.degenerate and math.isnan(r.ci_lo) for r in rows)


def test_scan_matches_pointwise_estimates():
    b = dgp.sample(dgp.HeavyTailSpec(0.5), np.random.default_rng(3), 20000)
    for r in stability_scan(b, range(0, 9)):
        est = studentized_ci(b, r.k)
        assert r.beta_hat == est.beta_hat
        assert (r.ci_lo, r.ci_hi) == pytest.approx(est.ci[:2])


def test_scan_exact_pareto_mid_range():
    n = 10**5
    b = dgp.sample(dgp.HeavyTailSpec(0.5), dgp.replicate_rng(12345, 0), n)
    ks = admissible_range(b)
    mid = [k for k in ks if 3 <= k <= k_ln_rule(n)]
    rows = stability_scan(b, mid)
    assert abs(np.mean([r.beta_hat for r in rows]) - 0.5) <= 0.1


def test_scan_zeta_plateau():
    n = 10**6
    b = dgp.sample_zeta(dgp.ZetaSpec(1.15), dgp.replicate_rng(12345, 1), n)
    lo, hi = math.ceil(math.log(n) - 3), math.floor(math.log(n))
    rows = stability_scan(b, range(lo, hi + 1))
    assert all(abs(r.beta_hat - 0.15) < 0.02 for r in rows)
    assert len(find_plateau(rows, 0.15, 0.02)) == len(rows)


def test_admissible_range_requires_five_exceedances():
    b = SampleBatch([1] * 10 + [100] * 5 + [1000] * 4)
    ks = admissible_range(b)
    for k in ks:
        assert empirical_survival(b, [k + 1]).counts[0] >= 5
    assert empirical_survival(b, [ks[-1] + 2]).counts[0] < 5


def test_find_plateau_picks_longest_consecutive_run():
    rows = stability_scan(dgp.sample(dgp.HeavyTailSpec(0.5), np.random.default_rng(2), 10**5),
                          range(0, 10))
    run = find_plateau(rows, 0.5, 0.08)
    assert run == list(range(run[0], run[0] + len(run)))
    assert all(abs(rows[k].beta_hat - 0.5) <= 0.08 for k in run)
