"""Loading league results and appearances, and building the factor dataset.

All factor values are computed in real time: the standings used for a match
only include results whose kickoff is strictly before that match's kickoff.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

MATCH_COLUMNS = (
    "match_id", "season", "league", "kickoff",
    "home_team", "away_team", "home_goals", "away_goals",
)
APPEARANCE_COLUMNS = ("match_id", "player_id", "team", "goals")
ROSTER_COLUMNS = ("player_id", "group")

ELITE = "ELITE"
RLP = "RLP"
GOAL_CAP = 3
FACTOR_NAMES = ("is_home", "point_diff")


class DataValidationError(ValueError):
    """Raised when an input file or record violates the data contract."""

    def __init__(self, message: str, *, path=None, line: int | None = None,
                 column: str | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        self.column = column
        where = []
        if self.path is not None:
            where.append(self.path)
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


@dataclass(frozen=True)
class MatchResult:
    match_id: str
    season: int
    league: str
    kickoff: datetime
    home_team: str
    away_team: str
    home_goals: int
    away_goals: int

    def __post_init__(self):
        if self.home_team == self.away_team:
            raise DataValidationError(
                f"match {self.match_id}: home_team equals away_team ({self.home_team})")
        if self.home_goals < 0 or self.away_goals < 0:
            raise DataValidationError(f"match {self.match_id}: negative goals")
        if self.kickoff.tzinfo is None:
            raise DataValidationError(f"match {self.match_id}: kickoff must be timezone-aware")

    def goals_for(self, team: str) -> int:
        if team == self.home_team:
            return self.home_goals
        if team == self.away_team:
            return self.away_goals
        raise KeyError(team)

    def opponent(self, team: str) -> str:
        if team == self.home_team:
            return self.away_team
        if team == self.away_team:
            return self.home_team
        raise KeyError(team)

    def points_for(self, team: str) -> int:
        mine = self.goals_for(team)
        theirs = self.goals_for(self.opponent(team))
        if mine > theirs:
            return 3
        return 1 if mine == theirs else 0


@dataclass(frozen=True)
class Appearance:
    match_id: str
    player_id: str
    team: str
    goals: int

    def __post_init__(self):
        if self.goals < 0:
            raise DataValidationError(
                f"appearance {self.player_id}@{self.match_id}: negative goals")


@dataclass(frozen=True)
class Roster:
    """Player groups used for the replacement-level comparison."""

    groups: Mapping[str, str]

    def __post_init__(self):
        bad = {g for g in self.groups.values() if g not in (ELITE, RLP)}
        if bad:
            raise DataValidationError(f"unknown roster group(s): {sorted(bad)}")

    @property
    def elite(self) -> list[str]:
        return sorted(p for p, g in self.groups.items() if g == ELITE)

    @property
    def rlp(self) -> list[str]:
        return sorted(p for p, g in self.groups.items() if g == RLP)

    def __contains__(self, player_id) -> bool:
        return player_id in self.groups

    def __len__(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class MatchObservation:
    player_id: str
    match_id: str
    team: str
    season: int
    kickoff: datetime
    goal_category: int
    is_home: int
    point_diff: float
    point_diff_raw: float
    days_since_first: float
    season_index: int


@dataclass(frozen=True)
class DatasetConfig:
    """Options for :func:`build_dataset`.

    ``standardization`` lets prediction-time data reuse the training constants;
    when ``None`` they are estimated from the observations being built.
    """

    season_start_month: int = 7
    season_start_day: int = 1
    standardization: Mapping[str, tuple[float, float]] | None = None


@dataclass(frozen=True)
class Dataset:
    observations: tuple[MatchObservation, ...]
    factor_names: tuple[str, ...]
    factor_standardization: Mapping[str, tuple[float, float]]
    player_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for name, (mean, sd) in self.factor_standardization.items():
            if not (math.isfinite(mean) and math.isfinite(sd)) or sd <= 0:
                raise DataValidationError(
                    f"factor {name!r}: invalid standardization ({mean}, {sd})")
        if not self.player_ids:
            object.__setattr__(
                self, "player_ids", tuple(sorted({o.player_id for o in self.observations})))

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def num_players(self) -> int:
        return len(self.player_ids)

    @property
    def categories(self) -> np.ndarray:
        return np.array([o.goal_category for o in self.observations], dtype=np.int64)

    @property
    def player_index(self) -> np.ndarray:
        lookup = {p: i for i, p in enumerate(self.player_ids)}
        return np.array([lookup[o.player_id] for o in self.observations], dtype=np.int64)

    @property
    def factors(self) -> np.ndarray:
        """Standardized factor matrix, one column per entry of ``factor_names``."""
        cols = []
        for name in self.factor_names:
            if name == "is_home":
                cols.append([float(o.is_home) for o in self.observations])
            elif name == "point_diff":
                cols.append([o.point_diff for o in self.observations])
            else:
                raise KeyError(name)
        if not cols:
            return np.zeros((len(self.observations), 0))
        return np.array(cols, dtype=float).T.copy()

    @property
    def days_since_first(self) -> np.ndarray:
        return np.array([o.days_since_first for o in self.observations], dtype=float)

    @property
    def season_index(self) -> np.ndarray:
        return np.array([o.season_index for o in self.observations], dtype=float)

    def observations_of(self, player_id: str) -> list[MatchObservation]:
        return [o for o in self.observations if o.player_id == player_id]


def winsorize_goals(goals: int) -> int:
    """Cap a goal count at three."""
    if goals < 0:
        raise ValueError(f"goals must be non-negative, got {goals}")
    return min(int(goals), GOAL_CAP)


def season_start(season: int, month: int = 7, day: int = 1) -> datetime:
    return datetime(season, month, day, tzinfo=timezone.utc)


def season_of(kickoff: datetime, month: int = 7, day: int = 1) -> int:
    """Season label (start year) that contains ``kickoff``."""
    k = kickoff.astimezone(timezone.utc)
    return k.year if (k.month, k.day) >= (month, day) else k.year - 1


def standings_points(matches: Iterable[MatchResult], team: str, season: int,
                     as_of: datetime, *, season_start_month: int = 7,
                     season_start_day: int = 1) -> int:
    """Points (3/1/0) earned by ``team`` in ``season`` from matches kicked off
    strictly before ``as_of``.

    A rescheduled match only counts once its actual kickoff has passed, no
    matter which gameday it was originally scheduled for.
    """
    if as_of.tzinfo is None:
        raise ValueError("as_of must be timezone-aware")
    if as_of < season_start(season, season_start_month, season_start_day):
        raise ValueError(f"as_of {as_of.isoformat()} precedes the start of season {season}")
    matches = list(matches)
    if not any(team in (m.home_team, m.away_team) for m in matches):
        raise KeyError(f"unknown team {team!r}")
    return sum(m.points_for(team) for m in matches
               if m.season == season and team in (m.home_team, m.away_team)
               and m.kickoff < as_of)


def _realtime_points(matches: Sequence[MatchResult]) -> dict[tuple[str, str], tuple[int, int]]:
    """Points of (home, away) at kickoff for every match, by sweeping kickoffs.

    Matches sharing a kickoff instant never see each other's results.
    """
    by_season: dict[int, list[MatchResult]] = defaultdict(list)
    for m in matches:
        by_season[m.season].append(m)
    out = {}
    for season in sorted(by_season):
        ordered = sorted(by_season[season], key=lambda m: (m.kickoff, m.match_id))
        table: dict[str, int] = defaultdict(int)
        i = 0
        while i < len(ordered):
            j = i
            while j < len(ordered) and ordered[j].kickoff == ordered[i].kickoff:
                j += 1
            group = ordered[i:j]
            for m in group:
                out[m.match_id] = (table[m.home_team], table[m.away_team])
            for m in group:
                table[m.home_team] += m.points_for(m.home_team)
                table[m.away_team] += m.points_for(m.away_team)
            i = j
    return out


def player_timeline(rows: Sequence[tuple[str, int, datetime]]) -> list[tuple[float, int]]:
    """Days since first appearance in the season and 1-based season count.

    ``rows`` are ``(player_id, season, kickoff)`` triples; the result is aligned
    with the input order. Days are calendar days between UTC kickoff dates.
    """
    first_day: dict[tuple[str, int], date] = {}
    seasons_seen: dict[str, set[int]] = defaultdict(set)
    for player, season, kickoff in rows:
        d = kickoff.astimezone(timezone.utc).date()
        key = (player, season)
        if key not in first_day or d < first_day[key]:
            first_day[key] = d
        seasons_seen[player].add(season)
    rank = {p: {s: i + 1 for i, s in enumerate(sorted(ss))} for p, ss in seasons_seen.items()}
    out = []
    for player, season, kickoff in rows:
        d = kickoff.astimezone(timezone.utc).date()
        out.append((float((d - first_day[(player, season)]).days), rank[player][season]))
    return out


def build_dataset(matches: Sequence[MatchResult], appearances: Sequence[Appearance],
                  roster: Roster | None = None,
                  config: DatasetConfig | None = None) -> Dataset:
    """Assemble one observation per (player, match) with real-time factors.

    When a roster is given, only rostered players are kept. The point
    differential is standardized with the sample mean/sd unless
    ``config.standardization`` supplies fixed constants.
    """
    config = config or DatasetConfig()
    by_id = {}
    for m in matches:
        if m.match_id in by_id:
            raise DataValidationError(f"duplicate match_id {m.match_id!r}")
        by_id[m.match_id] = m
    seen = set()
    kept = []
    team_goals = defaultdict(int)
    for a in appearances:
        m = by_id.get(a.match_id)
        if m is None:
            raise DataValidationError(
                f"appearance of {a.player_id!r} references unknown match {a.match_id!r}")
        if a.team not in (m.home_team, m.away_team):
            raise DataValidationError(
                f"appearance of {a.player_id!r}: team {a.team!r} did not play in {a.match_id!r}")
        key = (a.player_id, a.match_id)
        if key in seen:
            raise DataValidationError(f"duplicate appearance {key}")
        seen.add(key)
        team_goals[(a.match_id, a.team)] += a.goals
        if a.goals > m.goals_for(a.team):
            raise DataValidationError(
                f"appearance of {a.player_id!r} in {a.match_id!r}: {a.goals} goals exceed team total")
        if roster is None or a.player_id in roster:
            kept.append(a)
    if roster is not None:
        dropped = len(appearances) - len(kept)
        if dropped:
            logger.info("dropped %d appearances of players outside the roster", dropped)
    if not kept:
        raise DataValidationError("no appearances left to build a dataset from")

    kept.sort(key=lambda a: (a.player_id, by_id[a.match_id].kickoff, a.match_id))
    points = _realtime_points(list(by_id.values()))
    timeline = player_timeline(
        [(a.player_id, by_id[a.match_id].season, by_id[a.match_id].kickoff) for a in kept])

    raw = np.empty(len(kept))
    home = np.empty(len(kept), dtype=np.int64)
    for i, a in enumerate(kept):
        m = by_id[a.match_id]
        home_pts, away_pts = points[m.match_id]
        is_home = a.team == m.home_team
        home[i] = int(is_home)
        raw[i] = float(home_pts - away_pts) if is_home else float(away_pts - home_pts)

    if config.standardization is not None:
        mean, sd = config.standardization["point_diff"]
    else:
        mean = float(raw.mean())
        sd = float(raw.std())
        if not sd > 0:
            raise DataValidationError("point_diff has zero variance; cannot standardize")
    std = (raw - mean) / sd

    observations = tuple(
        MatchObservation(
            player_id=a.player_id, match_id=a.match_id, team=a.team,
            season=by_id[a.match_id].season, kickoff=by_id[a.match_id].kickoff,
            goal_category=winsorize_goals(a.goals), is_home=int(home[i]),
            point_diff=float(std[i]), point_diff_raw=float(raw[i]),
            days_since_first=timeline[i][0], season_index=timeline[i][1],
        )
        for i, a in enumerate(kept)
    )
    return Dataset(
        observations=observations,
        factor_names=FACTOR_NAMES,
        factor_standardization={"is_home": (0.0, 1.0), "point_diff": (mean, sd)},
    )


# --------------------------------------------------------------------------
# CSV loading


def _read_rows(path, expected: Sequence[str]):
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataValidationError(f"cannot open file: {exc.strerror}", path=path) from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataValidationError("empty file (missing header)", path=path, line=1)
        header = [h.strip() for h in header]
        if tuple(header) != tuple(expected):
            raise DataValidationError(
                f"schema mismatch: expected header {','.join(expected)!r}, got {','.join(header)!r}",
                path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(expected):
                raise DataValidationError(
                    f"expected {len(expected)} fields, got {len(row)}", path=path, line=lineno)
            yield lineno, dict(zip(expected, (c.strip() for c in row)))


def _nonneg_int(value: str, path, line, column) -> int:
    try:
        out = int(value)
    except ValueError:
        raise DataValidationError(f"not an integer: {value!r}", path=path, line=line,
                                  column=column) from None
    if out < 0:
        raise DataValidationError(f"must be non-negative, got {out}", path=path, line=line,
                                  column=column)
    return out


def _nonempty(value: str, path, line, column) -> str:
    if not value:
        raise DataValidationError("empty value", path=path, line=line, column=column)
    return value


def load_matches(path) -> list[MatchResult]:
    out = []
    for line, row in _read_rows(path, MATCH_COLUMNS):
        try:
            kickoff = datetime.fromisoformat(row["kickoff"].replace("Z", "+00:00"))
        except ValueError:
            raise DataValidationError(f"bad ISO-8601 timestamp {row['kickoff']!r}", path=path,
                                      line=line, column="kickoff") from None
        if kickoff.tzinfo is None:
            raise DataValidationError("kickoff lacks a UTC offset", path=path, line=line,
                                      column="kickoff")
        try:
            season = int(row["season"])
        except ValueError:
            raise DataValidationError(f"not an integer: {row['season']!r}", path=path, line=line,
                                      column="season") from None
        home = _nonempty(row["home_team"], path, line, "home_team")
        away = _nonempty(row["away_team"], path, line, "away_team")
        if home == away:
            raise DataValidationError(f"home_team equals away_team ({home!r})", path=path,
                                      line=line, column="away_team")
        out.append(MatchResult(
            match_id=_nonempty(row["match_id"], path, line, "match_id"),
            season=season, league=row["league"], kickoff=kickoff,
            home_team=home, away_team=away,
            home_goals=_nonneg_int(row["home_goals"], path, line, "home_goals"),
            away_goals=_nonneg_int(row["away_goals"], path, line, "away_goals"),
        ))
    return out


def load_appearances(path) -> list[Appearance]:
    return [
        Appearance(
            match_id=_nonempty(row["match_id"], path, line, "match_id"),
            player_id=_nonempty(row["player_id"], path, line, "player_id"),
            team=_nonempty(row["team"], path, line, "team"),
            goals=_nonneg_int(row["goals"], path, line, "goals"),
        )
        for line, row in _read_rows(path, APPEARANCE_COLUMNS)
    ]


def load_roster(path) -> Roster:
    groups = {}
    for line, row in _read_rows(path, ROSTER_COLUMNS):
        player = _nonempty(row["player_id"], path, line, "player_id")
        group = row["group"].upper()
        if group not in (ELITE, RLP):
            raise DataValidationError(f"group must be ELITE or RLP, got {row['group']!r}",
                                      path=path, line=line, column="group")
        if player in groups:
            raise DataValidationError(f"player {player!r} listed twice", path=path, line=line,
                                      column="player_id")
        groups[player] = group
    return Roster(groups)


def write_matches(path, matches: Iterable[MatchResult]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MATCH_COLUMNS)
        for m in matches:
            w.writerow([m.match_id, m.season, m.league, m.kickoff.isoformat(), m.home_team,
                        m.away_team, m.home_goals, m.away_goals])


def write_appearances(path, appearances: Iterable[Appearance]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(APPEARANCE_COLUMNS)
        for a in appearances:
            w.writerow([a.match_id, a.player_id, a.team, a.goals])


def write_roster(path, roster: Roster) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(ROSTER_COLUMNS)
        for player in sorted(roster.groups):
            w.writerow([player, roster.groups[player]])
