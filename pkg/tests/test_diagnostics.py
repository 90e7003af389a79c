from __future__ import annotations

import math

import numpy as np
import pytest

from soccerfactor.diagnostics import Diagnostics, diagnostics, ess_bulk, rhat
from soccerfactor.sampler import PosteriorDraws


def test_rhat_independent_chains():
    x = np.random.default_rng(0).standard_normal((4, 1000))
    assert 0.99 <= rhat(x) <= 1.01


def test_rhat_constant_distinct_chains():
    x = np.repeat([[0.0], [1.0]], 100, axis=1)
    assert rhat(x) > 1.1


def test_rhat_shifted_chains():
    x = np.random.default_rng(1).standard_normal((4, 500))
    x[0] += 3.0
    assert rhat(x) > 1.1


def test_rhat_detects_scale_difference():
    # folded R-hat catches chains with equal location but different spread
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 1000))
    x[0] *= 4.0
    assert rhat(x) > 1.01


def test_ess_iid():
    x = np.random.default_rng(3).standard_normal((4, 1000))
    assert ess_bulk(x) == pytest.approx(4000, rel=0.2)


def test_ess_autocorrelated_is_smaller():
    rng = np.random.default_rng(4)
    e = rng.standard_normal((4, 2000))
    x = np.empty_like(e)
    x[:, 0] = e[:, 0]
    for t in range(1, 2000):
        x[:, t] = 0.9 * x[:, t - 1] + e[:, t]
    # AR(1) with phi=0.9 has ESS ratio (1-phi)/(1+phi)
    assert ess_bulk(x) == pytest.approx(8000 * 0.1 / 1.9, rel=0.25)


def test_single_chain_errors():
    with pytest.raises(ValueError):
        rhat(np.zeros((1, 100)))
    with pytest.raises(ValueError):
        ess_bulk(np.zeros((1, 100)))
    with pytest.raises(ValueError):
        rhat(np.zeros((2, 3)))


def test_matches_arviz():
    az = pytest.importorskip("arviz")
    rng = np.random.default_rng(5)
    for _ in range(3):
        x = rng.standard_normal((4, 300)).cumsum(axis=1) * 0.1 + rng.standard_normal((4, 300))
        assert rhat(x) == pytest.approx(float(az.rhat(x, method="rank")), rel=1e-10)
        assert ess_bulk(x) == pytest.approx(float(az.ess(x, method="bulk")), rel=1e-10)


def _toy_draws(divergent_fraction):
    rng = np.random.default_rng(6)
    d = PosteriorDraws.from_blocks({"a": rng.standard_normal((2, 2000)),
                                    "b": rng.standard_normal((2, 2000, 2))})
    d.divergent[:, : int(2000 * divergent_fraction)] = True
    return d


def test_diagnostics_report():
    out = diagnostics(_toy_draws(0.1))
    assert set(out.rhat) == {"a", "b[0]", "b[1]"}
    assert out.num_divergent == 400
    assert out.divergence_fraction == pytest.approx(0.1)
    assert out.flagged == []
    assert out.to_dict()["num_divergent"] == 400


def test_divergence_warning():
    with pytest.warns(RuntimeWarning, match="diverged"):
        out = diagnostics(_toy_draws(0.3))
    assert out.warnings


def test_flagged_and_json_safe():
    d = Diagnostics({"x": 1.2, "y": 1.0, "z": math.nan}, {"x": math.inf, "y": 10.0, "z": 1.0},
                    0, 100)
    assert d.flagged == ["x", "z"]
    assert d.to_dict()["ess_bulk"]["x"] is None
