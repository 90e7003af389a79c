"""Pareto-smoothed importance-sampling leave-one-out cross-validation."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .data import Dataset
from .model import ModelSpec, SoccerFactorModel

K_THRESHOLD = 0.7
MIN_TAIL = 5


def pointwise_loglik(draws, dataset: Dataset, spec: ModelSpec | None = None,
                     chunk: int = 256) -> np.ndarray:
    """``log p(y_i | theta_s)`` as a ``draws x observations`` matrix."""
    if spec is None:
        stored = getattr(draws, "metadata", {}).get("model_spec")
        spec = ModelSpec.from_dict(stored) if stored else ModelSpec.from_dataset(dataset)
    model = SoccerFactorModel(dataset, spec)
    params = draws.pooled() if hasattr(draws, "pooled") else draws
    n = np.asarray(params["cutpoints"]).shape[0]
    out = np.empty((n, len(dataset)))
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        out[sl] = model.pointwise_loglik({k: np.asarray(v)[sl] for k, v in params.items()})
    bad = np.argwhere(~np.isfinite(out))
    if bad.size:
        s, i = bad[0]
        raise FloatingPointError(f"non-finite log-likelihood at draw {s}, observation {i}")
    return out


def gpd_fit(x: np.ndarray, min_grid_pts: int = 30, prior_weight: float = 10.0):
    """Generalized Pareto ``(k, sigma)`` by the empirical-Bayes profile estimate.

    ``x`` must be sorted ascending and positive. The shape estimate is shrunk
    toward 0.5 with the weight of ``prior_weight`` pseudo-observations.
    """
    n = x.size
    m = min_grid_pts + int(math.floor(math.sqrt(n)))
    j = np.arange(1, m + 1)
    xstar = x[int(math.floor(n / 4 + 0.5)) - 1]
    # ties at the cutoff can make xstar zero; the fit then fails and k is flagged infinite
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        theta = 1.0 / x[-1] + (1.0 - np.sqrt(m / (j - 0.5))) / 3.0 / xstar
        kk = np.log1p(-theta[:, None] * x[None, :]).mean(axis=1)
        prof = n * (np.log(-theta / kk) - kk - 1.0)
        prof = np.where(np.isfinite(prof), prof, -np.inf)
        if not np.isfinite(prof).any():
            return math.inf, math.nan
        w = np.exp(prof - logsumexp(prof))
        theta_hat = float(np.sum(theta * w))
        k = float(np.mean(np.log1p(-theta_hat * x)))
        sigma = -k / theta_hat
    k = (k * n + prior_weight * 0.5) / (n + prior_weight)
    if math.isnan(k):
        k = math.inf
    return k, sigma


def gpd_quantile(p, k: float, sigma: float):
    p = np.asarray(p, dtype=float)
    if k == 0:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def psis_smooth(log_ratios) -> tuple[np.ndarray, float]:
    """Normalized smoothed log weights and the tail shape estimate for one observation."""
    lw = np.asarray(log_ratios, dtype=float).copy()
    s = lw.size
    lw -= lw.max()
    tail_len = int(math.ceil(min(0.2 * s, 3.0 * math.sqrt(s))))
    order = np.argsort(lw, kind="stable")
    if tail_len < MIN_TAIL or tail_len >= s:
        k = math.inf
    else:
        tail_idx = order[s - tail_len:]
        tail = lw[tail_idx]
        cutoff = lw[order[s - tail_len - 1]]
        if np.all(tail == tail[0]):
            k = -math.inf
        else:
            exp_cut = math.exp(cutoff)
            k, sigma = gpd_fit(np.exp(tail) - exp_cut)
            if math.isfinite(k):
                probs = (np.arange(1, tail_len + 1) - 0.5) / tail_len
                smoothed = np.log(gpd_quantile(probs, k, sigma) + exp_cut)
                lw[tail_idx] = smoothed
                lw = np.minimum(lw, 0.0)  # the largest raw ratio after the shift
    return lw - logsumexp(lw), k


@dataclass
class LooResult:
    elpd: float
    elpd_se: float
    pointwise: np.ndarray
    pareto_k: np.ndarray
    lppd: float

    @property
    def p_loo(self) -> float:
        return self.lppd - self.elpd

    @property
    def num_high_k(self) -> int:
        return int(np.sum(self.pareto_k > K_THRESHOLD))

    @property
    def n(self) -> int:
        return self.pointwise.size


def psis_loo(loglik) -> LooResult:
    """PSIS-LOO from a ``draws x observations`` log-likelihood matrix."""
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise ValueError("expected a draws x observations matrix with at least two draws")
    if not np.all(np.isfinite(ll)):
        raise ValueError("log-likelihood matrix contains non-finite values")
    s, n = ll.shape
    pointwise = np.empty(n)
    ks = np.empty(n)
    for i in range(n):
        lw, ks[i] = psis_smooth(-ll[:, i])
        pointwise[i] = logsumexp(lw + ll[:, i])
    lppd = float(np.sum(logsumexp(ll, axis=0) - math.log(s)))
    se = math.sqrt(n * pointwise.var(ddof=1)) if n > 1 else 0.0
    return LooResult(float(pointwise.sum()), se, pointwise, ks, lppd)


@dataclass(frozen=True)
class ComparisonRow:
    label: str
    elpd: float
    se: float
    elpd_diff: float
    se_diff: float
    p_loo: float
    num_high_k: int


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]

    COLUMNS = ("model", "elpd", "se", "elpd_diff", "se_diff", "p_loo", "num_high_k")

    @property
    def best(self) -> str:
        return self.rows[0].label

    def row(self, label: str) -> ComparisonRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow((r.label, repr(r.elpd), repr(r.se), repr(r.elpd_diff), repr(r.se_diff),
                        repr(r.p_loo), r.num_high_k))
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"models": [dict(zip(self.COLUMNS, (r.label, r.elpd, r.se, r.elpd_diff, r.se_diff,
                                                    r.p_loo, r.num_high_k))) for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def plot_data(self) -> str:
        """Rows for an external ELPD plot: estimate, error bar, and difference to the best."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("model", "elpd", "se", "delta", "delta_se"))
        for r in self.rows:
            w.writerow((r.label, repr(r.elpd), repr(r.se), repr(r.elpd_diff), repr(r.se_diff)))
        return buf.getvalue()


def compare(results: Sequence[LooResult], labels: Sequence[str]) -> ComparisonTable:
    if len(results) != len(labels):
        raise ValueError("need one label per result")
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be unique")
    if not results:
        raise ValueError("nothing to compare")
    n = results[0].n
    if any(r.n != n for r in results):
        raise ValueError("all results must cover the same observations")
    order = sorted(range(len(results)), key=lambda j: (-results[j].elpd, labels[j]))
    best = results[order[0]]
    rows = []
    for j in order:
        diff = results[j].pointwise - best.pointwise
        se = math.sqrt(n * diff.var(ddof=1)) if n > 1 else 0.0
        rows.append(ComparisonRow(labels[j], results[j].elpd, results[j].elpd_se,
                                  float(diff.sum()), se, results[j].p_loo,
                                  results[j].num_high_k))
    return ComparisonTable(rows)
