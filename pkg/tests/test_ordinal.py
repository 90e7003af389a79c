from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from soccerfactor.ordinal import (
    expected_goals,
    log_pmf_and_grads,
    ordered_logistic_log_pmf,
    ordered_logistic_probs,
)


def cdf_difference_oracle(eta, cuts):
    """P(c) = F(z_{c+1} - eta) - F(z_c - eta) with the logistic CDF, per category."""
    ext = np.concatenate([[-np.inf], cuts, [np.inf]])
    return np.array([expit(ext[c + 1] - eta) - expit(ext[c] - eta) for c in range(4)])


cut_strategy = st.tuples(st.floats(-10, 10), st.floats(0.01, 5), st.floats(0.01, 5)).map(
    lambda t: np.array([t[0], t[0] + t[1], t[0] + t[1] + t[2]]))


def test_symmetric_example():
    p = np.exp([ordered_logistic_log_pmf(c, 0.0, [-1.0, 0.0, 1.0]) for c in range(4)])
    np.testing.assert_allclose(p, [0.26894, 0.23106, 0.23106, 0.26894], atol=1e-5)


def test_half_at_first_cutpoint():
    assert np.exp(ordered_logistic_log_pmf(0, 4.0, [4.0, 5.0, 6.0])) == pytest.approx(0.5)


def test_rejects_unordered_cutpoints():
    with pytest.raises(ValueError):
        ordered_logistic_log_pmf(1, 0.0, [0.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        ordered_logistic_probs(0.0, [2.0, 1.0, 3.0])


def test_rejects_bad_category():
    with pytest.raises(ValueError):
        ordered_logistic_log_pmf(4, 0.0, [0.0, 1.0, 2.0])


@settings(max_examples=200)
@given(st.floats(-50, 50), cut_strategy)
def test_matches_cdf_oracle_and_sums_to_one(eta, cuts):
    logp = np.array([ordered_logistic_log_pmf(c, eta, cuts) for c in range(4)])
    assert np.exp(logp).sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.exp(logp), cdf_difference_oracle(eta, cuts), atol=1e-12)


def test_no_cancellation_far_in_tails():
    # eta far above both cutpoints: mass ~ e^-45 - e^-46
    logp = ordered_logistic_log_pmf(1, 50.0, [4.0, 5.0, 6.0])
    exact = -45.0 + np.log1p(-np.exp(-1.0))
    assert np.isfinite(logp)
    assert logp == pytest.approx(exact, abs=1e-12)


@settings(max_examples=100)
@given(st.floats(-20, 20), st.floats(0.0, 5.0), cut_strategy)
def test_monotone_in_eta(eta, step, cuts):
    lo = ordered_logistic_probs(eta, cuts)
    hi = ordered_logistic_probs(eta + step, cuts)
    assert hi[0] <= lo[0] + 1e-15
    assert hi[3] >= lo[3] - 1e-15


@settings(max_examples=100)
@given(st.floats(-20, 20), st.floats(-20, 20), cut_strategy)
def test_translation_invariance(eta, shift, cuts):
    a = ordered_logistic_probs(eta, cuts)
    b = ordered_logistic_probs(eta + shift, cuts + shift)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_probs_vectorized():
    eta = np.linspace(-3, 3, 11)
    p = ordered_logistic_probs(eta, [-1.0, 0.5, 2.0])
    assert p.shape == (11, 4)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-14)


def test_log_pmf_batched_cutpoints():
    rng = np.random.default_rng(0)
    cuts = np.sort(rng.normal(size=(5, 1, 3)), axis=-1)
    eta = rng.normal(size=(5, 7))
    cat = rng.integers(0, 4, size=7)
    out = ordered_logistic_log_pmf(cat, eta, cuts)
    assert out.shape == (5, 7)
    for s in range(5):
        for i in range(7):
            assert out[s, i] == pytest.approx(
                ordered_logistic_log_pmf(cat[i], eta[s, i], cuts[s, 0]), abs=1e-14)


def test_expected_goals_examples():
    assert expected_goals(0.0, [-1.0, 0.0, 1.0]) == pytest.approx(1.5, abs=1e-12)
    assert expected_goals(4.0 - 40.0, [4.0, 5.0, 6.0]) < 1e-10


@given(st.floats(-30, 30), cut_strategy)
def test_expected_goals_matches_probs(eta, cuts):
    p = ordered_logistic_probs(eta, cuts)
    eg = expected_goals(eta, cuts)
    assert 0.0 <= eg <= 3.0
    assert eg == pytest.approx(p[1] + 2 * p[2] + 3 * p[3], abs=1e-12)


def test_expected_goals_monotone():
    eg = expected_goals(np.linspace(-10, 20, 200), [4.0, 5.0, 6.0])
    assert np.all(np.diff(eg) > 0)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    cat = rng.integers(0, 4, size=40)
    eta = rng.normal(3.0, 2.0, size=40)
    cuts = np.array([4.0, 5.1, 6.3])
    _, d_eta, d_cut = log_pmf_and_grads(cat, eta, cuts)
    h = 1e-6
    for i in range(40):
        e = eta.copy()
        e[i] += h
        up = ordered_logistic_log_pmf(cat[i], e[i], cuts)
        e[i] -= 2 * h
        dn = ordered_logistic_log_pmf(cat[i], e[i], cuts)
        assert d_eta[i] == pytest.approx((up - dn) / (2 * h), abs=1e-6)
    total = lambda c: ordered_logistic_log_pmf(cat, eta, c).sum()  # noqa: E731
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        assert d_cut[k] == pytest.approx((total(cuts + step) - total(cuts - step)) / (2 * h),
                                         rel=1e-5, abs=1e-5)
