"""Ordered-logistic likelihood over four goal categories (0, 1, 2, 3+)."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

NUM_CATEGORIES = 4


def _softplus(x):
    return np.logaddexp(0.0, x)


def _check_cutpoints(cutpoints: np.ndarray) -> np.ndarray:
    c = np.asarray(cutpoints, dtype=float)
    if c.shape[-1] != NUM_CATEGORIES - 1:
        raise ValueError(f"expected {NUM_CATEGORIES - 1} cutpoints, got shape {c.shape}")
    if np.any(~(np.diff(c, axis=-1) > 0)):
        raise ValueError("cutpoints must be strictly increasing")
    return c


def _bounds(category, eta, cutpoints):
    """Lower/upper cutpoint minus eta for each observation (``-inf``/``inf`` at the ends)."""
    category = np.asarray(category)
    eta = np.asarray(eta, dtype=float)
    if cutpoints.ndim == 1:
        ext = np.concatenate([[-np.inf], cutpoints, [np.inf]])
        return ext[category] - eta, ext[category + 1] - eta
    shape = np.broadcast_shapes(category.shape, eta.shape, cutpoints.shape[:-1])
    ext = np.concatenate([
        np.full(cutpoints.shape[:-1] + (1,), -np.inf),
        cutpoints,
        np.full(cutpoints.shape[:-1] + (1,), np.inf),
    ], axis=-1)
    ext = np.broadcast_to(ext, shape + (NUM_CATEGORIES + 1,))
    cat = np.broadcast_to(category, shape)[..., None]
    lo = np.take_along_axis(ext, cat, axis=-1)[..., 0] - eta
    hi = np.take_along_axis(ext, cat + 1, axis=-1)[..., 0] - eta
    return lo, hi


def _log_interval_mass(lo, hi):
    # log(sigmoid(hi) - sigmoid(lo)) without cancellation
    with np.errstate(divide="ignore", invalid="ignore"):
        return -_softplus(-hi) - _softplus(lo) + np.log(-np.expm1(lo - hi))


def ordered_logistic_log_pmf(category, eta, cutpoints):
    """Log-probability of ``category`` given latent score ``eta``.

    Broadcasts over ``category`` and ``eta``; ``cutpoints`` has a trailing axis
    of length three and may carry leading batch dimensions.
    """
    c = _check_cutpoints(cutpoints)
    category = np.asarray(category)
    if np.any((category < 0) | (category >= NUM_CATEGORIES)):
        raise ValueError("category must lie in {0, 1, 2, 3}")
    lo, hi = _bounds(category, eta, c)
    out = _log_interval_mass(lo, hi)
    return out if np.ndim(out) else float(out)


def ordered_logistic_probs(eta, cutpoints) -> np.ndarray:
    """Category probabilities, shape ``eta.shape + (4,)``."""
    c = _check_cutpoints(cutpoints)
    eta = np.asarray(eta, dtype=float)
    cum = expit(c - eta[..., None])  # P(y <= k)
    ones = np.ones(cum.shape[:-1] + (1,))
    zeros = np.zeros_like(ones)
    return np.diff(np.concatenate([zeros, cum, ones], axis=-1), axis=-1)


def expected_goals(eta, cutpoints):
    """``sum_c c * P(c)``, computed as ``sum_k P(y >= k)``."""
    c = _check_cutpoints(cutpoints)
    eta = np.asarray(eta, dtype=float)
    out = expit(eta[..., None] - c).sum(axis=-1)
    return out if out.ndim else float(out)


def log_pmf_and_grads(category: np.ndarray, eta: np.ndarray, cutpoints: np.ndarray):
    """Log-pmf per observation with derivatives for the model's hot path.

    Returns ``(logp, d_eta, d_cutpoints)`` where ``d_eta`` is per observation and
    ``d_cutpoints`` is summed over observations. Inputs are not validated.
    """
    lo, hi = _bounds(category, eta, cutpoints)
    logp = _log_interval_mass(lo, hi)
    s_lo = expit(lo)
    s_hi = expit(hi)
    d_eta = s_lo + s_hi - 1.0
    with np.errstate(over="ignore"):
        inv_gap = 1.0 / np.expm1(hi - lo)
    d_lo = -s_lo - inv_gap
    d_hi = 1.0 - s_hi + inv_gap
    k = NUM_CATEGORIES - 1
    lower_idx = category - 1
    has_lo = category >= 1
    has_hi = category <= k - 1
    d_cut = (np.bincount(lower_idx[has_lo], weights=d_lo[has_lo], minlength=k)
             + np.bincount(category[has_hi], weights=d_hi[has_hi], minlength=k))
    return logp, d_eta, d_cut
