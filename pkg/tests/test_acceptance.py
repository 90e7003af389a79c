"""End-to-end acceptance checks, one test per criterion.

Each test records a single pass/fail line that is printed in the terminal
summary, then asserts the same condition.
"""
from __future__ import annotations

import math
import time
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit, gammaln

from conftest import make_dataset, record_acceptance
from soccerfactor.compare import pointwise_loglik, psis_loo
from soccerfactor.data import (
    ELITE,
    RLP,
    Appearance,
    DatasetConfig,
    MatchResult,
    Roster,
    build_dataset,
    standings_points,
)
from soccerfactor.hsgp import SpectralScale, build_basis, matern52_spectral_density, spectral_weights
from soccerfactor.metrics import compute_par, compute_sar
from soccerfactor.model import ModelSpec, SoccerFactorModel
from soccerfactor.ordinal import ordered_logistic_probs
from soccerfactor.sampler import PosteriorDraws, SamplerConfig, sample
from soccerfactor.synth import SynthConfig, recovery_report, simulate_league


# ---------------------------------------------------------------- 1: pmf

def test_criterion_01_pmf():
    rng = np.random.default_rng(2024)
    n = 10_000
    eta = rng.normal(4.5, 3.0, n)
    cuts = np.sort(rng.normal(4.5, 2.0, (n, 3)), axis=1)
    cuts[:, 1:] += 1e-6 * np.arange(1, 3)  # keep them strictly increasing
    t0 = time.perf_counter()
    p = ordered_logistic_probs(eta, cuts)
    elapsed = time.perf_counter() - t0
    # oracle: differences of the logistic CDF, one category at a time
    oracle = np.empty((n, 4))
    for k in range(4):
        upper = 1.0 if k == 3 else expit(cuts[:, k] - eta)
        lower = 0.0 if k == 0 else expit(cuts[:, k - 1] - eta)
        oracle[:, k] = upper - lower
    sum_err = float(np.abs(p.sum(axis=1) - 1.0).max())
    oracle_err = float(np.abs(p - oracle).max())
    ok = sum_err <= 1e-12 and oracle_err <= 1e-12 and elapsed < 1.0
    record_acceptance(1, "PMF correctness", ok,
                      f"sum err {sum_err:.1e}, oracle err {oracle_err:.1e}, {elapsed:.3f} s")
    assert ok


# ---------------------------------------------------------------- 2: spectral density

def _literature_density(omega, ell, nu=2.5):
    log_c = (math.log(2.0) + 0.5 * math.log(math.pi) + gammaln(nu + 0.5) - gammaln(nu)
             + nu * math.log(2.0 * nu) - 2.0 * nu * math.log(ell))
    return np.exp(log_c) * (2.0 * nu / ell ** 2 + omega ** 2) ** -(nu + 0.5)


def test_criterion_02_spectral_density():
    at_zero = float(matern52_spectral_density(0.0, 1.0))
    zero_err = abs(at_zero - 16.0 / (3.0 * math.sqrt(5.0)))
    omega = np.linspace(0.0, 10.0, 100)
    grid_err = max(float(np.abs(matern52_spectral_density(omega, ell)
                                - _literature_density(omega, ell)).max())
                   for ell in (0.5, 1.0, 3.0))
    ok = zero_err <= 1e-10 and grid_err <= 1e-10
    record_acceptance(2, "spectral density", ok,
                      f"|S(0)-16/(3 sqrt5)| = {zero_err:.1e}, grid err {grid_err:.1e}")
    assert ok


# ---------------------------------------------------------------- 3: HSGP fidelity

def _matern52(r, ell):
    a = math.sqrt(5.0) * np.abs(r) / ell
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


def test_criterion_03_hsgp_fidelity():
    t0 = time.perf_counter()
    b = build_basis([-1.0, 1.0], num_basis=120, boundary_factor=2.5)
    L = b.half_width
    points = np.linspace(-1.0, 1.0, 50)  # the data range, well inside [-L, L]
    phi = b.design(points)
    iota = 1.3
    worst = 0.0
    for ell in np.linspace(L / 10, L / 3, 12):
        w = spectral_weights(b, [SpectralScale(ell, iota)])
        approx = (phi * w ** 2) @ phi.T
        exact = iota ** 2 * _matern52(points[:, None] - points[None, :], ell)
        worst = max(worst, float(np.abs(approx - exact).max()) / iota ** 2)
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.02 and elapsed < 5.0
    record_acceptance(3, "HSGP fidelity", ok,
                      f"max error {worst:.2e} iota^2 over ell in [L/10, L/3], {elapsed:.2f} s")
    assert ok


# ---------------------------------------------------------------- 4: gradients

def _fd_relative_error(m, u, h=1e-5):
    _, g = m.logp_and_grad(u)
    fd = np.empty(m.dim)
    for k in range(m.dim):
        e = np.zeros(m.dim)
        e[k] = h
        fd[k] = (m.logp_and_grad(u + e)[0] - m.logp_and_grad(u - e)[0]) / (2 * h)
    return float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)))


def test_criterion_04_gradients():
    ds = make_dataset(num_players=4, num_seasons=3, per_season=5, seed=21)
    t0 = time.perf_counter()
    worst = {}
    for variant in ("sfm", "naive1", "naive2"):
        m = SoccerFactorModel(ds, ModelSpec.from_dataset(ds, variant, num_basis=12))
        rng = np.random.default_rng(7)
        worst[variant] = max(_fd_relative_error(m, m.initial_point(rng)) for _ in range(10))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-5 and elapsed < 30.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record_acceptance(4, "gradient exactness", ok, f"max rel err {detail}, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 5: sampler

def _std_normal(theta):
    return -0.5 * float(theta @ theta), -theta


_COV = np.array([[1.0, 0.9], [0.9, 1.0]])
_PREC = np.linalg.inv(_COV)


def _correlated(theta):
    g = -_PREC @ theta
    return 0.5 * float(theta @ g), g


def test_criterion_05_sampler_calibration():
    t0 = time.perf_counter()
    a = sample(_std_normal, SamplerConfig(num_chains=4, warmup_draws=1000, kept_draws=1000,
                                          seed=42), dim=10)
    x = a.draws.reshape(-1, 10)
    mean_err = float(np.abs(x.mean(0)).max())
    sd_err = float(np.abs(x.std(0) - 1.0).max())
    ks_min = min(stats.kstest(x[:, k], "norm").pvalue for k in range(10))
    cfg = SamplerConfig(num_chains=4, warmup_draws=1000, kept_draws=1000, seed=3)
    b = sample(_correlated, cfg, dim=2)
    cov = np.cov(b.draws.reshape(-1, 2).T)
    cov_err = float(np.abs(cov - _COV).max())
    again = sample(_correlated, cfg, dim=2)
    identical = bool(np.array_equal(b.draws, again.draws))
    elapsed = time.perf_counter() - t0
    ok = (mean_err < 0.05 and sd_err < 0.05 and ks_min > 0.001 and cov_err < 0.1 * _COV.max()
          and abs(cov[0, 1] - 0.9) < 0.09 and identical and a.num_divergent == 0
          and elapsed < 60.0)
    record_acceptance(5, "sampler calibration", ok,
                      f"N(0,I10) mean err {mean_err:.3f}, sd err {sd_err:.3f}, "
                      f"min KS p {ks_min:.3f}; rho 0.9 cov err {cov_err:.3f}; "
                      f"bit identical {identical}; {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 6: recovery

@pytest.mark.slow
def test_criterion_06_synthetic_recovery():
    lg = simulate_league(SynthConfig())
    ds = lg.dataset
    assert ds.num_players == 20 and lg.truth.config["beta"] == [0.3, 0.25]
    m = SoccerFactorModel(ds)
    t0 = time.perf_counter()
    d = sample(m, SamplerConfig(num_chains=4, warmup_draws=500, kept_draws=500, seed=6))
    elapsed = time.perf_counter() - t0
    d.metadata["model_spec"] = m.spec.to_dict()
    rep = recovery_report(lg.truth, d, ds)
    ok = rep.spearman > 0.8 and 0.68 <= rep.coverage <= 0.95 and elapsed < 30 * 60
    record_acceptance(6, "synthetic recovery", ok,
                      f"Spearman {rep.spearman:.3f}, 83% coverage {rep.coverage:.2f}, "
                      f"beta covered {rep.beta_covered}, {d.num_divergent} divergent, "
                      f"{elapsed / 60:.1f} min")
    assert ok


# ---------------------------------------------------------------- 7: SAR / PAR

def test_criterion_07_sar_par_identities():
    ds = make_dataset(num_players=4, num_seasons=2, per_season=3, seed=8)
    spec = ModelSpec.from_dataset(ds, "naive1")
    rng = np.random.default_rng(5)
    alpha = rng.normal(4.5, 1.0, size=(2, 50, 4))
    alpha[..., 3] = alpha[..., 1]  # p3 has the same skill as the single RLP p1
    blocks = {
        "beta": rng.normal(0.0, 0.7, size=(2, 50, 2)),
        "alpha": alpha,
        "cutpoints": np.broadcast_to([4.0, 5.3, 6.4], (2, 50, 3)).copy(),
        "cut_loc": np.zeros((2, 50, 3)),
        "cut_scale": np.ones((2, 50)),
    }
    draws = PosteriorDraws.from_blocks(blocks, {"model_spec": spec.to_dict()})
    roster = Roster({"p0": ELITE, "p2": ELITE, "p3": ELITE, "p1": RLP})
    zeroed = dict(blocks, beta=np.zeros_like(blocks["beta"]))
    dz = PosteriorDraws.from_blocks(zeroed, draws.metadata)
    sar_z, par_z = compute_sar(dz, ds, roster), compute_par(dz, ds, roster)
    eq_err = max(float(np.abs(sar_z[p] - par_z[p]).max()) for p in roster.elite)
    # the RLP composite scored against itself
    composite_sar = float(np.abs(compute_sar(draws, ds, roster)["p3"]).max())
    # with nonzero loadings SAR is PAR with the team part zeroed, nothing else
    sar = compute_sar(draws, ds, roster)
    construct_err = max(float(np.abs(sar[p] - par_z[p]).max()) for p in roster.elite)
    differs = not np.allclose(sar["p0"], compute_par(draws, ds, roster)["p0"])
    ok = eq_err <= 1e-12 and composite_sar == 0.0 and construct_err <= 1e-12 and differs
    record_acceptance(7, "SAR/PAR identities", ok,
                      f"beta=0 |SAR-PAR| {eq_err:.1e}, composite SAR {composite_sar:.1e}, "
                      f"SAR vs zeroed PAR {construct_err:.1e}")
    assert ok


# ---------------------------------------------------------------- 8: model ordering

def _diff(a, b):
    d = a.pointwise - b.pointwise
    return float(d.sum()), float(math.sqrt(len(d) * np.var(d, ddof=1)))


@pytest.mark.slow
def test_criterion_08_model_ordering(c8_fits):
    league, fit = c8_fits
    loo, elapsed = {}, 0.0
    for variant in ("sfm", "naive1", "naive2"):
        _, d, seconds = fit(variant)
        elapsed += seconds
        loo[variant] = psis_loo(pointwise_loglik(d, league.dataset))
    d1, se1 = _diff(loo["sfm"], loo["naive1"])
    d2, se2 = _diff(loo["naive1"], loo["naive2"])
    ok = d1 > se1 and d2 > se2 and elapsed < 45 * 60
    elpd = ", ".join(f"{k} {v.elpd:.1f}" for k, v in loo.items())
    record_acceptance(8, "ELPD ordering", ok,
                      f"{elpd}; sfm-naive1 {d1:.1f} (se {se1:.1f}), "
                      f"naive1-naive2 {d2:.1f} (se {se2:.1f}), {elapsed / 60:.1f} min")
    assert ok


# ---------------------------------------------------------------- 9: PSIS-LOO

def test_criterion_09_psis_loo():
    rng = np.random.default_rng(0)
    n, tau = 50, 2.0
    y = rng.normal(0.7, 1.0, size=n)
    t0 = time.perf_counter()
    prec = 1.0 / tau ** 2 + n
    mu = rng.normal(y.sum() / prec, math.sqrt(1.0 / prec), size=4000)
    res = psis_loo(stats.norm.logpdf(y[None, :], mu[:, None], 1.0))
    # exact refit without y_i: conjugate posterior predictive
    prec_i = prec - 1.0
    exact = stats.norm.logpdf(y, (y.sum() - y) / prec_i, np.sqrt(1.0 + 1.0 / prec_i))
    err = float(np.mean(np.abs(res.pointwise - exact)))
    elapsed = time.perf_counter() - t0
    ok = err < 0.1 and elapsed < 300
    record_acceptance(9, "PSIS-LOO fidelity", ok,
                      f"mean |PSIS - exact| {err:.2e}, max k {res.pareto_k.max():.2f}")
    assert ok


# ---------------------------------------------------------------- 10: real-time factors

def test_criterion_10_postponed_match():
    utc = timezone.utc
    start = datetime(2020, 8, 8, 15, tzinfo=utc)

    def gameday(g, hours=0):
        return start + timedelta(days=7 * g, hours=hours)

    # gamedays G..G+4 for teams A-D; m* (A vs C) is rescheduled between G+3 and G+4
    ms = [
        MatchResult("g0", 2020, "L1", gameday(0), "A", "B", 2, 0),
        MatchResult("g0b", 2020, "L1", gameday(0), "C", "D", 1, 1),
        MatchResult("g1b", 2020, "L1", gameday(1), "B", "D", 0, 1),
        MatchResult("g2", 2020, "L1", gameday(2), "D", "A", 0, 0),
        MatchResult("g2b", 2020, "L1", gameday(2), "B", "C", 1, 0),
        MatchResult("g3", 2020, "L1", gameday(3), "A", "B", 3, 1),
        MatchResult("g3b", 2020, "L1", gameday(3), "C", "D", 2, 0),
        MatchResult("mstar", 2020, "L1", gameday(3, hours=72), "A", "C", 0, 2),
        MatchResult("g4", 2020, "L1", gameday(4), "A", "D", 1, 0),
        MatchResult("g4b", 2020, "L1", gameday(4), "B", "C", 1, 1),
    ]
    apps = [Appearance(m.match_id, f"x{t}", t, 0) for m in ms for t in (m.home_team, m.away_team)]
    mstar = ms[7]
    through_g3 = {"A": 3 + 1 + 3, "C": 1 + 0 + 3}
    before = {t: standings_points(ms, t, 2020, mstar.kickoff - timedelta(minutes=1))
              for t in "AC"}
    at = {t: standings_points(ms, t, 2020, mstar.kickoff) for t in "AC"}
    after = {t: standings_points(ms, t, 2020, gameday(4)) for t in "AC"}
    ds = build_dataset(ms, apps,
                       config=DatasetConfig(standardization={"point_diff": (0.0, 1.0)}))
    obs = next(o for o in ds.observations if o.match_id == "mstar" and o.team == "A")
    ok = (before == through_g3 and at == through_g3
          and after == {"A": through_g3["A"], "C": through_g3["C"] + 3}
          and obs.point_diff_raw == through_g3["A"] - through_g3["C"])
    record_acceptance(10, "real-time factor rule", ok,
                      f"points before m* {before}, at m* {at}, after m* {after}, "
                      f"m* point diff {obs.point_diff_raw:+g}")
    assert ok
