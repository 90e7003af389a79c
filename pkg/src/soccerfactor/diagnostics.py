"""Rank-normalized split R-hat, bulk effective sample size, divergence checks."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

RHAT_THRESHOLD = 1.01
DIVERGENCE_WARN_FRACTION = 0.25


def _split(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected chains x draws")
    if x.shape[0] < 2:
        raise ValueError("convergence diagnostics need at least two chains")
    if x.shape[1] < 4:
        raise ValueError("convergence diagnostics need at least four draws per chain")
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, -half:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((r - 0.375) / (x.size + 0.25))


def _rhat_basic(x: np.ndarray) -> float:
    n = x.shape[1]
    within = x.var(axis=1, ddof=1).mean()
    between = x.mean(axis=1).var(ddof=1)
    if within == 0:
        return math.nan if between == 0 else math.inf
    var_hat = (n - 1) / n * within + between
    return math.sqrt(var_hat / within)


def rhat(x) -> float:
    """Max of bulk and folded rank-normalized split R-hat for ``chains x draws``."""
    s = _split(x)
    bulk = _rhat_basic(_rank_normalize(s))
    folded = _rhat_basic(_rank_normalize(np.abs(s - np.median(s))))
    # folded can be degenerate when bulk is not (e.g. chains stuck at two values)
    finite = [v for v in (bulk, folded) if not math.isnan(v)]
    return max(finite) if finite else math.nan


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m = 1 << (2 * n - 1).bit_length()
    centered = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(centered, m)
    return np.fft.irfft(f * np.conj(f), m)[..., :n] / n


def _ess(x: np.ndarray) -> float:
    m, n = x.shape
    acov = _autocov(x)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n + x.mean(axis=1).var(ddof=1)
    if var_plus == 0:
        return math.nan
    rho = np.zeros(n)
    rho[0] = 1.0
    even = 1.0
    odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = odd
    # Geyer initial positive sequence
    t = 1
    while t < n - 3 and even + odd > 0:
        even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if even + odd >= 0:
            rho[t + 1] = even
            rho[t + 2] = odd
        t += 2
    max_t = t - 2
    if even > 0:
        rho[max_t + 1] = even
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = 0.5 * (rho[t - 1] + rho[t])
        t += 2
    tau = -1.0 + 2.0 * rho[:max_t + 1].sum() + rho[max_t + 1]
    tau = max(tau, 1.0 / math.log10(m * n))
    return m * n / tau


def ess_bulk(x) -> float:
    s = _split(x)
    if np.ptp(s) == 0:
        return math.nan
    return _ess(_rank_normalize(s))


@dataclass
class Diagnostics:
    rhat: dict[str, float]
    ess_bulk: dict[str, float]
    num_divergent: int
    num_draws: int
    warnings: list[str] = field(default_factory=list)

    @property
    def divergence_fraction(self) -> float:
        return self.num_divergent / self.num_draws if self.num_draws else 0.0

    @property
    def flagged(self) -> list[str]:
        return [k for k, v in self.rhat.items() if not v <= RHAT_THRESHOLD]

    def to_dict(self) -> dict:
        clean = lambda d: {k: (None if not math.isfinite(v) else v) for k, v in d.items()}  # noqa: E731
        return {
            "rhat": clean(self.rhat),
            "ess_bulk": clean(self.ess_bulk),
            "num_divergent": self.num_divergent,
            "divergence_fraction": self.divergence_fraction,
            "rhat_flagged": self.flagged,
            "warnings": list(self.warnings),
        }


def diagnostics(draws) -> Diagnostics:
    """Per-parameter R-hat/ESS and the divergence count of a ``PosteriorDraws``."""
    arr = draws.draws
    names = draws.names
    r, e = {}, {}
    for j, name in enumerate(names):
        col = arr[:, :, j]
        r[name] = rhat(col)
        e[name] = ess_bulk(col)
    out = Diagnostics(r, e, draws.num_divergent, int(draws.divergent.size))
    if out.divergence_fraction > DIVERGENCE_WARN_FRACTION:
        msg = (f"{out.num_divergent} of {out.num_draws} post-warmup transitions diverged "
               f"({100 * out.divergence_fraction:.1f}%)")
        out.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    flagged = out.flagged
    if flagged:
        out.warnings.append(f"R-hat above {RHAT_THRESHOLD} for {len(flagged)} parameter(s)")
    return out
