from __future__ import annotations

import time
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from soccerfactor.data import Dataset, MatchObservation
from soccerfactor.model import SoccerFactorModel
from soccerfactor.sampler import SamplerConfig, sample
from soccerfactor.synth import SynthConfig, simulate_league

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, name: str, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"[{status}] criterion {number:2d} {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


def make_dataset(num_players=4, num_seasons=3, per_season=6, seed=0, num_factors=2,
                 categories=None) -> Dataset:
    """Small random dataset built directly from observations."""
    rng = np.random.default_rng(seed)
    t0 = datetime(2020, 8, 1, tzinfo=timezone.utc)
    obs = []
    for p in range(num_players):
        for s in range(num_seasons):
            for k in range(per_season):
                day = float(7 * k + rng.integers(0, 3))
                cat = int(rng.integers(0, 4)) if categories is None else categories
                obs.append(MatchObservation(
                    f"p{p}", f"m{p}-{s}-{k}", "T", 2020 + s,
                    t0 + timedelta(days=365 * s + day), cat,
                    int(rng.integers(0, 2)), float(rng.normal()), 0.0, day, s + 1))
    names = ("is_home", "point_diff")[:num_factors]
    return Dataset(tuple(obs), names, {n: (0.0, 1.0) for n in names})


@pytest.fixture
def small_dataset():
    return make_dataset()


# nonzero factors, curved within-season skill and a cross-season hump
C8_LEAGUE = SynthConfig(seed=5, num_seasons=3, cross_shape="hump", hump_sd=0.8, beta=(0.4, 0.5),
                        amplitudes={"S": 0.6, "M": 0.6, "L": 0.3})
C8_SAMPLER = SamplerConfig(num_chains=2, warmup_draws=400, kept_draws=400, seed=1)


@pytest.fixture(scope="session")
def c8_fits():
    """League plus ``{variant: (model, draws, seconds)}``, fitted lazily."""
    league = simulate_league(C8_LEAGUE)
    cache = {}

    def fit(variant):
        if variant not in cache:
            m = SoccerFactorModel(league.dataset, variant=variant)
            t0 = time.perf_counter()
            d = sample(m, C8_SAMPLER)
            d.metadata["model_spec"] = m.spec.to_dict()
            cache[variant] = (m, d, time.perf_counter() - t0)
        return cache[variant]

    return league, fit
