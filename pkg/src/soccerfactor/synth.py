"""Synthetic leagues with known skill curves, for end-to-end recovery checks.

The generator plays each season gameday by gameday so that the point
differential seen by a match uses exactly the results that kicked off before
it. Goals are drawn from the ordered-logistic model at the true latent score.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np
from scipy import stats

from .data import (
    ELITE,
    RLP,
    Appearance,
    Dataset,
    MatchResult,
    Roster,
    build_dataset,
    player_timeline,
    season_start,
)
from .model import (
    ModelSpec,
    PlayerBases,
    assemble_alpha,
    maturity_weights,
    solve_interval_invgamma,
    team_performance,
    zero_sum_basis,
)
from .ordinal import ordered_logistic_probs

# (day offset within the gameday, UTC hour) for successive kickoff slots
KICKOFF_SLOTS = ((0, 13), (0, 13), (0, 16), (1, 14), (1, 16), (1, 18))


def _invgamma_median(lower, upper, mass=0.98):
    a, b = solve_interval_invgamma(lower, upper, mass)
    return float(stats.invgamma.median(a, scale=b))


@dataclass(frozen=True)
class SynthConfig:
    """Ground-truth settings.

    ``beta`` loads on ``is_home`` and on the raw point differential divided
    by ``point_diff_scale``. ``cross_shape`` is ``"gp"`` (coefficients drawn
    from the prior) or ``"hump"`` (only the first eigenfunction, a single
    rise-and-fall across seasons, with per-player height ``hump_sd * |z|``).
    """

    num_teams: int = 20
    num_seasons: int = 3
    players_per_team: int = 1
    beta: tuple[float, float] = (0.3, 0.25)
    point_diff_scale: float = 10.0
    cutpoints: tuple[float, float, float] = (4.0, 5.6, 6.8)
    mu_b: float = 3.4
    delta_scale: float = 0.84
    lengthscales: dict = field(default_factory=lambda: {
        "S": _invgamma_median(2.0, 5.0), "M": _invgamma_median(2.0, 5.0),
        "L": _invgamma_median(15.0, 30.0)})
    amplitudes: dict = field(default_factory=lambda: {
        "S": math.log(2.0) / (-math.log(0.01) / 2.0),
        "M": math.log(2.0) / (-math.log(0.01) / 2.0),
        "L": math.log(2.0) / (-math.log(0.01) / 2.0)})
    cross_shape: str = "gp"
    hump_sd: float = 0.5
    team_strength_sd: float = 0.3
    other_goals_rate: float = 1.1
    num_elite: int = 3
    first_season: int = 2018
    num_basis: int = 120
    boundary_factor: float = 2.5
    seed: int = 0

    def __post_init__(self):
        if self.num_teams < 2 or self.num_teams % 2:
            raise ValueError("num_teams must be an even number of at least 2")
        if self.num_seasons < 2:
            raise ValueError("need at least two seasons for the cross-seasonal effect")
        if self.players_per_team < 1:
            raise ValueError("players_per_team must be positive")
        c = self.cutpoints
        if len(c) != 3 or not (c[0] < c[1] < c[2]):
            raise ValueError("cutpoints must be three strictly increasing values")
        if len(self.beta) != 2:
            raise ValueError("beta needs loadings for is_home and point_diff")
        if self.cross_shape not in ("gp", "hump"):
            raise ValueError("cross_shape must be 'gp' or 'hump'")
        for key in ("S", "M", "L"):
            if not (self.lengthscales[key] > 0 and self.amplitudes[key] > 0):
                raise ValueError(f"timescale {key}: lengthscale and amplitude must be positive")
        num_players = self.num_teams * self.players_per_team
        if not 0 <= self.num_elite < num_players:
            raise ValueError("num_elite must leave at least one replacement-level player")
        if self.point_diff_scale <= 0 or self.delta_scale <= 0:
            raise ValueError("point_diff_scale and delta_scale must be positive")

    @property
    def num_players(self) -> int:
        return self.num_teams * self.players_per_team

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = list(self.beta)
        d["cutpoints"] = list(self.cutpoints)
        return d


def round_robin(num_teams: int) -> list[list[tuple[int, int]]]:
    """Double round-robin by the circle method; second half mirrors home/away."""
    teams = list(range(num_teams))
    rounds = []
    for r in range(num_teams - 1):
        pairs = []
        for i in range(num_teams // 2):
            a, b = teams[i], teams[num_teams - 1 - i]
            pairs.append((a, b) if (r + i) % 2 == 0 else (b, a))
        rounds.append(pairs)
        teams = [teams[0]] + [teams[-1]] + teams[1:-1]
    return rounds + [[(b, a) for a, b in rnd] for rnd in rounds]


@dataclass
class GroundTruth:
    """True parameters on the dataset scale, aligned with ``dataset`` order."""

    player_ids: list[str]
    params: dict[str, np.ndarray]
    alpha: np.ndarray
    eta: np.ndarray
    within_effect: np.ndarray
    cross_effect: np.ndarray
    raw_beta: tuple[float, float]
    point_diff_scale: float
    config: dict

    @property
    def delta(self) -> np.ndarray:
        return self.params["delta"]

    def player_mean_alpha(self, player_index) -> np.ndarray:
        idx = np.asarray(player_index)
        counts = np.bincount(idx, minlength=len(self.player_ids))
        return np.bincount(idx, weights=self.alpha, minlength=len(self.player_ids)) / counts

    def to_dict(self) -> dict:
        return {
            "player_ids": self.player_ids,
            "params": {k: np.asarray(v).tolist() for k, v in self.params.items()},
            "alpha": self.alpha.tolist(),
            "eta": self.eta.tolist(),
            "within_effect": self.within_effect.tolist(),
            "cross_effect": self.cross_effect.tolist(),
            "raw_beta": list(self.raw_beta),
            "point_diff_scale": self.point_diff_scale,
            "config": self.config,
        }

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def read(cls, path) -> "GroundTruth":
        with open(path) as fh:
            d = json.load(fh)
        return cls(d["player_ids"], {k: np.asarray(v) for k, v in d["params"].items()},
                   np.asarray(d["alpha"]), np.asarray(d["eta"]),
                   np.asarray(d["within_effect"]), np.asarray(d["cross_effect"]),
                   tuple(d["raw_beta"]), d["point_diff_scale"], d["config"])


@dataclass
class SimulatedLeague:
    matches: list[MatchResult]
    appearances: list[Appearance]
    roster: Roster
    truth: GroundTruth
    dataset: Dataset


def _schedule(cfg: SynthConfig):
    """Fixtures as (season, gameday, slot, home, away, kickoff)."""
    out = []
    for s in range(cfg.num_seasons):
        season = cfg.first_season + s
        start = season_start(season) + timedelta(days=31)  # first weekend of August
        for g, rnd in enumerate(round_robin(cfg.num_teams)):
            for k, (home, away) in enumerate(rnd):
                day, hour = KICKOFF_SLOTS[k % len(KICKOFF_SLOTS)]
                kickoff = start + timedelta(days=7 * g + day, hours=hour)
                out.append((season, g, k, home, away, kickoff))
    return out


def simulate_league(config: SynthConfig) -> SimulatedLeague:
    cfg = config
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(cfg.seed), 7])))
    teams = [f"T{t:02d}" for t in range(cfg.num_teams)]
    players = {t: [f"{teams[t]}P{j}" for j in range(cfg.players_per_team)]
               for t in range(cfg.num_teams)}
    player_ids = sorted(p for ps in players.values() for p in ps)
    pidx = {p: i for i, p in enumerate(player_ids)}
    P = len(player_ids)
    fixtures = _schedule(cfg)
    match_ids = [f"S{s}G{g:02d}M{k:02d}" for s, g, k, *_ in fixtures]
    strength = rng.normal(0.0, cfg.team_strength_sd, cfg.num_teams)

    # one row per (player, match) in the order build_dataset uses
    rows = []
    for mi, (season, g, k, home, away, kickoff) in enumerate(fixtures):
        for team in (home, away):
            for p in players[team]:
                rows.append((p, kickoff, match_ids[mi], mi, team == home))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    obs_player = np.array([pidx[r[0]] for r in rows])
    timeline = player_timeline([(r[0], fixtures[r[3]][0], r[1]) for r in rows])
    days = np.array([t[0] for t in timeline])
    season_idx = np.array([t[1] for t in timeline], dtype=float)
    bases = PlayerBases.from_arrays(obs_player, days, season_idx, P,
                                    cfg.num_basis, cfg.boundary_factor)

    # true skill parameters
    B = cfg.num_basis
    delta = cfg.delta_scale * (zero_sum_basis(P) @ rng.standard_normal(P - 1))
    params = {
        "mu_b": np.float64(cfg.mu_b),
        "delta_scale": np.float64(cfg.delta_scale),
        "delta": delta,
        "ell_S": np.full(P, cfg.lengthscales["S"]),
        "ell_M": np.full(P, cfg.lengthscales["M"]),
        "ell_L": np.full(P, cfg.lengthscales["L"]),
        "iota": np.array([cfg.amplitudes[k] for k in ("S", "M", "L")]),
        "coef_W": rng.standard_normal((P, B)),
    }
    if cfg.cross_shape == "gp":
        params["coef_C"] = rng.standard_normal((P, B))
    else:
        _, w_cross = maturity_weights(params | {"coef_C": None}, bases)
        height = cfg.hump_sd * np.abs(rng.standard_normal(P))
        # first eigenfunction peaks at the centre of the season range
        peak = bases.cross.phi.max(axis=0)[0]
        coef = np.zeros((P, B))
        coef[:, 0] = height / (w_cross[:, 0] * peak)
        params["coef_C"] = coef
    alpha = assemble_alpha(params, bases)
    w_within, w_cross = maturity_weights(params, bases)
    h_w = ((w_within * params["coef_W"]) @ bases.within.phi.T).ravel()[bases.within_index]
    h_c = ((w_cross * params["coef_C"]) @ bases.cross.phi.T).ravel()[bases.cross_index]

    # play the league in kickoff order
    cut = np.asarray(cfg.cutpoints)
    by_match: dict[int, list[int]] = {}
    for r_i, r in enumerate(rows):
        by_match.setdefault(r[3], []).append(r_i)
    goals = np.zeros(len(rows), dtype=np.int64)
    matches = [None] * len(fixtures)
    order = sorted(range(len(fixtures)), key=lambda i: (fixtures[i][5], match_ids[i]))
    table: dict[tuple[int, int], int] = {}
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and fixtures[order[j]][5] == fixtures[order[i]][5]:
            j += 1
        results = []
        for mi in order[i:j]:
            season, g, k, home, away, kickoff = fixtures[mi]
            pts_h = table.get((season, home), 0)
            pts_a = table.get((season, away), 0)
            team_goals = {home: 0, away: 0}
            for r_i in by_match[mi]:
                is_home = rows[r_i][4]
                diff = (pts_h - pts_a) if is_home else (pts_a - pts_h)
                tp = cfg.beta[0] * float(is_home) + cfg.beta[1] * diff / cfg.point_diff_scale
                probs = ordered_logistic_probs(alpha[r_i] + tp, cut)
                cat = int(rng.choice(4, p=probs / probs.sum()))
                n_goals = cat if cat < 3 else 3 + int(rng.poisson(0.2))
                goals[r_i] = n_goals
                team_goals[home if is_home else away] += n_goals
            for team, opp in ((home, away), (away, home)):
                lam = cfg.other_goals_rate * math.exp(strength[team] - strength[opp])
                team_goals[team] += int(rng.poisson(lam))
            matches[mi] = MatchResult(match_ids[mi], season, "SYN", kickoff, teams[home],
                                      teams[away], team_goals[home], team_goals[away])
            results.append(matches[mi])
        for m in results:
            for team, t_idx in ((m.home_team, teams.index(m.home_team)),
                                (m.away_team, teams.index(m.away_team))):
                key = (m.season, t_idx)
                table[key] = table.get(key, 0) + m.points_for(team)
        i = j

    appearances = []
    for r_i, (p, kickoff, mid, mi, is_home) in enumerate(rows):
        team = teams[fixtures[mi][3] if is_home else fixtures[mi][4]]
        appearances.append(Appearance(mid, p, team, int(goals[r_i])))
    appearances.sort(key=lambda a: (a.match_id, a.player_id))

    ranked = [player_ids[i] for i in np.argsort(-delta, kind="stable")]
    elite = set(ranked[:cfg.num_elite])
    roster = Roster({p: (ELITE if p in elite else RLP) for p in player_ids})
    dataset = build_dataset(matches, appearances, roster)

    # convert loadings to the dataset's standardized point differential
    mean, sd = dataset.factor_standardization["point_diff"]
    beta_pd = cfg.beta[1] * sd / cfg.point_diff_scale
    shift = cfg.beta[1] * mean / cfg.point_diff_scale
    params["beta"] = np.array([cfg.beta[0], beta_pd])
    params["mu_b"] = np.float64(cfg.mu_b + shift)
    params["cutpoints"] = cut.copy()
    alpha = alpha + shift
    eta = alpha + team_performance(params["beta"], dataset.factors)
    truth = GroundTruth(player_ids, params, alpha, eta, h_w, h_c, tuple(cfg.beta),
                        cfg.point_diff_scale, cfg.to_dict())
    return SimulatedLeague(matches, appearances, roster, truth, dataset)


# ----------------------------------------------------------------------
# recovery


@dataclass
class RecoveryReport:
    coverage: float
    spearman: float
    beta_covered: list[bool]
    level: float
    true_skill: np.ndarray
    posterior_mean_skill: np.ndarray
    intervals: np.ndarray

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "spearman": self.spearman,
            "beta_covered": self.beta_covered,
            "level": self.level,
            "true_skill": self.true_skill.tolist(),
            "posterior_mean_skill": self.posterior_mean_skill.tolist(),
            "intervals": self.intervals.tolist(),
        }


def recovery_report(truth: GroundTruth, draws, dataset: Dataset, spec: ModelSpec | None = None,
                    level: float = 0.83) -> RecoveryReport:
    """Interval coverage and rank agreement of per-player mean skill."""
    from .model import SoccerFactorModel

    if list(truth.player_ids) != list(dataset.player_ids):
        raise ValueError("truth and dataset disagree on the player set")
    if spec is None:
        stored = getattr(draws, "metadata", {}).get("model_spec")
        spec = ModelSpec.from_dict(stored) if stored else ModelSpec.from_dataset(dataset)
    model = SoccerFactorModel(dataset, spec)
    pooled = draws.pooled()
    P = dataset.num_players
    pl = dataset.player_index
    counts = np.bincount(pl, minlength=P)
    averaging = np.zeros((len(dataset), P))
    averaging[np.arange(len(dataset)), pl] = 1.0 / counts[pl]
    n = pooled["cutpoints"].shape[0]
    skill = np.empty((n, P))
    step = 128
    for start in range(0, n, step):
        sl = slice(start, min(n, start + step))
        a = model.linear_predictor({k: v[sl] for k, v in pooled.items()}, include_team=False)
        skill[sl] = a @ averaging
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(skill, [tail, 1.0 - tail], axis=0, method="linear")
    true_skill = truth.alpha @ averaging
    covered = (true_skill >= lo) & (true_skill <= hi)
    mean_skill = skill.mean(axis=0)
    rho = float(stats.spearmanr(true_skill, mean_skill).statistic)
    beta_cov = []
    if "beta" in pooled and spec.num_factors:
        b_lo, b_hi = np.quantile(pooled["beta"], [tail, 1.0 - tail], axis=0, method="linear")
        tb = np.asarray(truth.params["beta"])[:spec.num_factors]
        beta_cov = [bool(x) for x in (tb >= b_lo) & (tb <= b_hi)]
    return RecoveryReport(float(covered.mean()), rho, beta_cov, level, true_skill, mean_skill,
                          np.stack([lo, hi], axis=1))
