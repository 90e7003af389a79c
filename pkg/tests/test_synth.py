from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from soccerfactor.data import (
    build_dataset,
    load_appearances,
    load_matches,
    load_roster,
    write_appearances,
    write_matches,
    write_roster,
)
from soccerfactor.model import SoccerFactorModel
from soccerfactor.ordinal import ordered_logistic_probs
from soccerfactor.sampler import PosteriorDraws
from soccerfactor.synth import GroundTruth, SynthConfig, recovery_report, round_robin, simulate_league

TINY = {"S": 1e-9, "M": 1e-9, "L": 1e-9}


@pytest.fixture(scope="module")
def league():
    return simulate_league(SynthConfig(num_teams=6, num_seasons=2, players_per_team=2, seed=3))


def _write(lg, folder):
    folder.mkdir()
    write_matches(folder / "matches.csv", lg.matches)
    write_appearances(folder / "appearances.csv", lg.appearances)
    write_roster(folder / "roster.csv", lg.roster)
    lg.truth.write(folder / "truth.json")


def test_round_robin():
    rounds = round_robin(6)
    assert len(rounds) == 10
    pairs = [m for r in rounds for m in r]
    assert len(set(pairs)) == 30  # every ordered pair once: home and away
    for r in rounds:
        teams = [t for m in r for t in m]
        assert sorted(teams) == list(range(6))


def test_same_seed_identical_files(tmp_path):
    cfg = SynthConfig(num_teams=4, num_seasons=2, seed=11)
    _write(simulate_league(cfg), tmp_path / "a")
    _write(simulate_league(cfg), tmp_path / "b")
    for name in ("matches.csv", "appearances.csv", "roster.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    _write(simulate_league(SynthConfig(num_teams=4, num_seasons=2, seed=12)), tmp_path / "c")
    assert (tmp_path / "a" / "appearances.csv").read_bytes() != \
        (tmp_path / "c" / "appearances.csv").read_bytes()


def test_files_round_trip(league, tmp_path):
    _write(league, tmp_path / "x")
    ds = build_dataset(load_matches(tmp_path / "x" / "matches.csv"),
                       load_appearances(tmp_path / "x" / "appearances.csv"),
                       load_roster(tmp_path / "x" / "roster.csv"))
    np.testing.assert_array_equal(ds.factors, league.dataset.factors)
    np.testing.assert_array_equal(ds.categories, league.dataset.categories)
    np.testing.assert_array_equal(ds.days_since_first, league.dataset.days_since_first)
    back = GroundTruth.read(tmp_path / "x" / "truth.json")
    np.testing.assert_array_equal(back.eta, league.truth.eta)
    assert back.config["beta"] == [0.3, 0.25]


def test_truth_eta_matches_model(league):
    t = league.truth
    assert abs(t.delta.sum()) < 1e-12
    m = SoccerFactorModel(league.dataset)
    np.testing.assert_allclose(m.linear_predictor(t.params), t.eta, atol=1e-12)
    np.testing.assert_allclose(m.linear_predictor(t.params, include_team=False), t.alpha,
                               atol=1e-12)


def test_schedule_weekly_and_complete(league):
    seasons = {m.season for m in league.matches}
    assert len(league.matches) == len(seasons) * 6 * 5
    kick = sorted(m.kickoff for m in league.matches if m.season == min(seasons))
    assert (kick[-1] - kick[0]).days < 7 * 10


@pytest.fixture(scope="module")
def flat_league():
    """Constant skill and no factor effect: categories are i.i.d."""
    cfg = SynthConfig(players_per_team=3, num_seasons=5, beta=(0.0, 0.0), delta_scale=1e-9,
                      amplitudes=TINY, seed=2)
    return simulate_league(cfg)


def test_zero_loadings_independent_of_point_diff(flat_league):
    ds = flat_league.dataset
    assert len(ds) >= 10_000
    pd = np.array([o.point_diff_raw for o in ds.observations])
    bins = np.digitize(pd, np.quantile(pd, [1 / 3, 2 / 3]))
    table = np.zeros((3, 4))
    np.add.at(table, (bins, ds.categories), 1)
    assert stats.chi2_contingency(table).pvalue > 0.01


def test_category_frequencies_match_pmf(flat_league):
    ds = flat_league.dataset
    t = flat_league.truth
    p = ordered_logistic_probs(float(t.alpha[0]), t.params["cutpoints"])
    freq = np.bincount(ds.categories, minlength=4) / len(ds)
    se = np.sqrt(p * (1 - p) / len(ds))
    assert np.all(np.abs(freq - p) < 4 * se)


def test_separable_categories():
    cfg = SynthConfig(num_teams=4, num_seasons=2, players_per_team=3, beta=(0.0, 0.0),
                      mu_b=0.0, delta_scale=1000.0, cutpoints=(-1000.0, 0.0, 1000.0),
                      amplitudes=TINY, seed=1)
    lg = simulate_league(cfg)
    # every eta sits far from all cutpoints, so sampling is effectively deterministic
    cut = lg.truth.params["cutpoints"]
    assert np.min(np.abs(lg.truth.eta[:, None] - cut[None, :])) > 40
    map_cat = ordered_logistic_probs(lg.truth.eta, cut).argmax(axis=1)
    np.testing.assert_array_equal(map_cat, lg.dataset.categories)
    assert len(set(map_cat)) == 4


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(num_teams=5)
    with pytest.raises(ValueError):
        SynthConfig(cutpoints=(4.0, 3.0, 5.0))
    with pytest.raises(ValueError):
        SynthConfig(num_seasons=1)
    with pytest.raises(ValueError):
        SynthConfig(cross_shape="wiggle")


def test_recovery_report_at_truth(league):
    t = league.truth
    m = SoccerFactorModel(league.dataset)
    shapes = {n: b.shape for n, b in m.constrained_layout.blocks.items()}
    filler = {"sigma_sigma_mu": 1.0, "cut_loc": np.zeros(3), "cut_scale": 1.0}
    blocks = {n: np.broadcast_to(np.asarray(t.params.get(n, filler.get(n)), dtype=float),
                                 (2, 100) + s).copy() for n, s in shapes.items()}
    # a posterior concentrated around the truth
    rng = np.random.default_rng(0)
    blocks["delta"] = blocks["delta"] + rng.normal(0.0, 0.02, blocks["delta"].shape)
    blocks["beta"] = blocks["beta"] + rng.normal(0.0, 0.02, blocks["beta"].shape)
    d = PosteriorDraws.from_blocks(blocks)
    rep = recovery_report(t, d, league.dataset, m.spec)
    assert rep.coverage == 1.0
    assert rep.spearman > 0.95
    assert rep.beta_covered == [True, True]


def test_recovery_player_mismatch(league):
    t = league.truth
    bad = GroundTruth(t.player_ids[::-1], t.params, t.alpha, t.eta, t.within_effect,
                      t.cross_effect, t.raw_beta, t.point_diff_scale, t.config)
    with pytest.raises(ValueError, match="player"):
        recovery_report(bad, None, league.dataset)
