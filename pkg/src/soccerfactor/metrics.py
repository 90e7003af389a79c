"""Skill- and performance-above-replacement, and maturity-effect curves.

``PAR`` compares a player's expected goals per game with the unweighted mean
over the replacement-level players; ``SAR`` does the same with the team
performance term removed from the linear predictor.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, Roster
from .model import ModelSpec, SoccerFactorModel, maturity_weights
from .ordinal import expected_goals

DEFAULT_LEVEL = 0.83
_CHUNK_ELEMENTS = 4_000_000


def credible_interval(samples, level: float = DEFAULT_LEVEL) -> tuple[float, float]:
    """Equal-tailed interval with linear-interpolation quantiles."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("credible_interval needs at least one sample")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    tail = 0.5 * (1.0 - level)
    lo, hi = np.quantile(x, [tail, 1.0 - tail], method="linear")
    return float(lo), float(hi)


def _model_for(draws, dataset: Dataset, spec: ModelSpec | None) -> SoccerFactorModel:
    if spec is None:
        stored = getattr(draws, "metadata", {}).get("model_spec")
        spec = ModelSpec.from_dict(stored) if stored else ModelSpec.from_dataset(dataset)
    return SoccerFactorModel(dataset, spec)


def _chunks(n: int, per_draw: int):
    step = max(1, _CHUNK_ELEMENTS // max(per_draw, 1))
    for start in range(0, n, step):
        yield slice(start, min(n, start + step))


def player_expected_goals(model: SoccerFactorModel, params: Mapping[str, np.ndarray],
                          *, include_team: bool = True) -> np.ndarray:
    """Per-draw mean expected goals over each player's own matches, ``draws x players``."""
    n_draws = np.asarray(params["cutpoints"]).shape[0]
    P = model.spec.num_players
    counts = np.bincount(model.player, minlength=P).astype(float)
    if np.any(counts == 0):
        raise ValueError("every player needs at least one observation")
    averaging = np.zeros((len(model.y), P))
    averaging[np.arange(len(model.y)), model.player] = 1.0 / counts[model.player]
    per_draw = len(model.y) + P * model.spec.num_basis * 4
    out = np.empty((n_draws, P))
    for sl in _chunks(n_draws, per_draw):
        sub = {k: np.asarray(v)[sl] for k, v in params.items()}
        eta = model.linear_predictor(sub, include_team=include_team)
        eg = expected_goals(eta, sub["cutpoints"][:, None, :])
        out[sl] = eg @ averaging
    return out


def _above_replacement(draws, dataset: Dataset, roster: Roster, spec, include_team: bool):
    rlp = roster.rlp
    if not rlp:
        raise ValueError("roster has no replacement-level players")
    lookup = {p: i for i, p in enumerate(dataset.player_ids)}
    missing = [p for p in roster.elite + rlp if p not in lookup]
    if missing:
        raise ValueError(f"roster players without observations: {missing}")
    model = _model_for(draws, dataset, spec)
    yhat = player_expected_goals(model, draws.pooled(), include_team=include_team)
    composite = yhat[:, [lookup[p] for p in rlp]].mean(axis=1)
    return {p: yhat[:, lookup[p]] - composite for p in roster.elite}


def compute_par(draws, dataset: Dataset, roster: Roster, spec: ModelSpec | None = None):
    """Per-draw PAR for every elite player, ``{player_id: (draws,)}``."""
    return _above_replacement(draws, dataset, roster, spec, include_team=True)


def compute_sar(draws, dataset: Dataset, roster: Roster, spec: ModelSpec | None = None):
    """Per-draw SAR for every elite player (team performance zeroed)."""
    return _above_replacement(draws, dataset, roster, spec, include_team=False)


@dataclass(frozen=True)
class PlayerSummary:
    player_id: str
    sar_mean: float
    sar_interval: tuple[float, float]
    par_mean: float
    par_interval: tuple[float, float]
    diff_mean: float
    diff_interval: tuple[float, float]


@dataclass
class SarParReport:
    players: list[PlayerSummary]
    rlp_players: list[str]
    level: float

    CSV_COLUMNS = ("player_id", "sar_mean", "sar_lower", "sar_upper", "par_mean", "par_lower",
                   "par_upper", "sar_minus_par_mean", "sar_minus_par_lower",
                   "sar_minus_par_upper")

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "rlp_players": list(self.rlp_players),
            "players": [
                {"player_id": p.player_id,
                 "sar": {"mean": p.sar_mean, "interval": list(p.sar_interval)},
                 "par": {"mean": p.par_mean, "interval": list(p.par_interval)},
                 "sar_minus_par": {"mean": p.diff_mean, "interval": list(p.diff_interval)}}
                for p in self.players
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for p in self.players:
            w.writerow([p.player_id, repr(p.sar_mean), *map(repr, p.sar_interval),
                        repr(p.par_mean), *map(repr, p.par_interval),
                        repr(p.diff_mean), *map(repr, p.diff_interval)])
        return buf.getvalue()


def sar_par_report(draws, dataset: Dataset, roster: Roster, spec: ModelSpec | None = None,
                   level: float = DEFAULT_LEVEL) -> SarParReport:
    sar = compute_sar(draws, dataset, roster, spec)
    par = compute_par(draws, dataset, roster, spec)
    rows = []
    for p in roster.elite:
        diff = sar[p] - par[p]  # per draw, not a difference of summaries
        rows.append(PlayerSummary(
            p, float(sar[p].mean()), credible_interval(sar[p], level),
            float(par[p].mean()), credible_interval(par[p], level),
            float(diff.mean()), credible_interval(diff, level)))
    rows.sort(key=lambda r: -r.sar_mean)
    return SarParReport(rows, roster.rlp, level)


# ----------------------------------------------------------------------
# maturity curves


@dataclass
class MaturityCurves:
    within_grid: np.ndarray
    within_mean: np.ndarray
    within_lower: np.ndarray
    within_upper: np.ndarray
    cross_grid: np.ndarray
    cross_mean: np.ndarray
    cross_lower: np.ndarray
    cross_upper: np.ndarray
    level: float
    player_within: dict[str, np.ndarray] = field(default_factory=dict)
    player_cross: dict[str, np.ndarray] = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("effect", "grid", "mean", "lower", "upper"))
        for effect, g, m, lo, hi in (
                ("within", self.within_grid, self.within_mean, self.within_lower, self.within_upper),
                ("cross", self.cross_grid, self.cross_mean, self.cross_lower, self.cross_upper)):
            for row in zip(g, m, lo, hi):
                w.writerow((effect, *map(repr, map(float, row))))
        return buf.getvalue()

    def players_to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("player_id", "effect", "grid", "mean"))
        for effect, grid, curves in (("within", self.within_grid, self.player_within),
                                     ("cross", self.cross_grid, self.player_cross)):
            for pid, curve in curves.items():
                for x, v in zip(grid, curve):
                    w.writerow((pid, effect, repr(float(x)), repr(float(v))))
        return buf.getvalue()


def _check_grid(grid, name):
    g = np.asarray(grid, dtype=float).ravel()
    if g.size == 0 or np.any(np.diff(g) <= 0):
        raise ValueError(f"{name} grid must be non-empty and strictly increasing")
    return g


def evaluate_effects(params: Mapping[str, np.ndarray], model: SoccerFactorModel,
                     within_grid, cross_grid) -> tuple[np.ndarray, np.ndarray]:
    """Within-season and cross-seasonal effects, each ``draws x players x grid``."""
    if model.variant != "sfm":
        raise ValueError("maturity curves exist only for the full model")
    phi_w = model.bases.within.design(within_grid)
    phi_c = model.bases.cross.design(cross_grid)
    w_within, w_cross = maturity_weights(params, model.bases)
    h_w = (w_within * np.asarray(params["coef_W"])) @ phi_w.T
    h_c = (w_cross * np.asarray(params["coef_C"])) @ phi_c.T
    return h_w, h_c


def maturity_curves(draws, grids: tuple[Sequence[float], Sequence[float]], dataset: Dataset,
                    spec: ModelSpec | None = None, level: float = DEFAULT_LEVEL,
                    per_player: bool = False) -> MaturityCurves:
    """Population mean and band over players and draws on the given grids."""
    within_grid = _check_grid(grids[0], "within-season")
    cross_grid = _check_grid(grids[1], "cross-seasonal")
    model = _model_for(draws, dataset, spec)
    h_w, h_c = evaluate_effects(draws.pooled(), model, within_grid, cross_grid)
    tail = 0.5 * (1.0 - level)

    def summarize(h):
        flat = h.reshape(-1, h.shape[-1])
        lo, hi = np.quantile(flat, [tail, 1.0 - tail], axis=0, method="linear")
        return flat.mean(axis=0), lo, hi

    wm, wl, wu = summarize(h_w)
    cm, cl, cu = summarize(h_c)
    out = MaturityCurves(within_grid, wm, wl, wu, cross_grid, cm, cl, cu, level)
    if per_player:
        for j, pid in enumerate(dataset.player_ids):
            out.player_within[pid] = h_w[:, j].mean(axis=0)
            out.player_cross[pid] = h_c[:, j].mean(axis=0)
    return out


def default_grids(model: SoccerFactorModel, num: int = 100):
    """Grids spanning the observed within-season days and season counts."""
    w = model.bases.within
    c = model.bases.cross
    span_w = np.abs(w.centered_inputs).max()
    span_c = np.abs(c.centered_inputs).max()
    return (np.linspace(w.center - span_w, w.center + span_w, num),
            np.linspace(c.center - span_c, c.center + span_c, num))


# ----------------------------------------------------------------------
# optional figures


def _pyplot():
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("SVG output needs matplotlib (pip install 'artifact[plot]')") from exc
    return plt


def plot_sar_par(report: SarParReport, path) -> None:
    plt = _pyplot()
    n = len(report.players)
    fig, ax = plt.subplots(figsize=(6, 0.4 * n + 1.5))
    y = np.arange(n)[::-1]
    for yi, p in zip(y, report.players):
        ax.plot(p.sar_interval, [yi + 0.15] * 2, color="tab:blue")
        ax.plot(p.par_interval, [yi - 0.15] * 2, color="tab:orange")
    ax.scatter([p.sar_mean for p in report.players], y + 0.15, color="tab:blue", label="SAR")
    ax.scatter([p.par_mean for p in report.players], y - 0.15, color="tab:orange", label="PAR")
    ax.axvline(0.0, color="grey", lw=0.8)
    ax.set_yticks(y, [p.player_id for p in report.players])
    ax.set_xlabel("goals per game above replacement")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_curves(curves: MaturityCurves, path) -> None:
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(10, 3.5))
    panels = (
        (axes[0], curves.within_grid, curves.within_mean, curves.within_lower,
         curves.within_upper, curves.player_within, "days since first match of season"),
        (axes[1], curves.cross_grid, curves.cross_mean, curves.cross_lower,
         curves.cross_upper, curves.player_cross, "season count"),
    )
    for ax, g, m, lo, hi, players, label in panels:
        for curve in players.values():
            ax.plot(g, curve, color="tab:red", lw=0.5, alpha=0.4)
        ax.fill_between(g, lo, hi, color="gold", alpha=0.3)
        ax.plot(g, m, color="goldenrod", lw=2)
        ax.set_xlabel(label)
    axes[0].set_ylabel("skill effect")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
