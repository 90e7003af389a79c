"""Log posterior of the soccer factor model and its two benchmark variants.

Variants
--------
``sfm``
    Skill = baseline + zero-sum player offset + within-season and
    cross-seasonal HSGP terms; team performance = factors @ loadings.
``naive1``
    Skill is a per-player constant; factors kept.
``naive2``
    Per-player constant only.

All three share the cutpoint construction: the first cutpoint is pinned at 4
and the other two are built from softplus increments.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import optimize, special, stats

from .data import Dataset
from .hsgp import (
    HsgpBasis,
    build_basis,
    dlog_sqrt_density_dlog_lengthscale,
    log_sqrt_spectral_density,
)
from .ordinal import NUM_CATEGORIES, log_pmf_and_grads

VARIANTS = ("sfm", "naive1", "naive2")
TIMESCALES = ("S", "M", "L")
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class NonFiniteDensityError(FloatingPointError):
    """The log density or its gradient is not finite.

    ``block`` names the offending parameter block (or ``"likelihood"``), and
    ``index`` gives the first offending observation when known.
    """

    def __init__(self, block: str, index: int | None = None):
        self.block = block
        self.index = index
        msg = f"non-finite log density in block {block!r}"
        if index is not None:
            msg += f" at observation {index}"
        super().__init__(msg)


@functools.lru_cache(maxsize=64)
def solve_interval_invgamma(lower: float, upper: float, mass: float) -> tuple[float, float]:
    """Inverse-gamma ``(shape, scale)`` with ``mass`` inside ``[lower, upper]``
    and equal probability in each tail."""
    if not (0 < lower < upper):
        raise ValueError(f"need 0 < lower < upper, got ({lower}, {upper})")
    if not (0 < mass < 1):
        raise ValueError(f"mass must lie in (0, 1), got {mass}")
    tail = 0.5 * (1.0 - mass)

    def scale_for(shape):
        # CDF(x) = Q(shape, scale / x); pin the lower tail exactly
        return lower * special.gammainccinv(shape, tail)

    def upper_gap(log_shape):
        shape = math.exp(log_shape)
        return special.gammaincc(shape, scale_for(shape) / upper) - (1.0 - tail)

    lo, hi = math.log(1e-3), math.log(1e7)
    f_lo, f_hi = upper_gap(lo), upper_gap(hi)
    if not (f_lo < 0 < f_hi):
        raise ValueError(
            f"no inverse-gamma places mass {mass} in [{lower}, {upper}] within the search bounds")
    log_shape = optimize.brentq(upper_gap, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
    shape = math.exp(log_shape)
    scale = float(scale_for(shape))
    if abs(upper_gap(log_shape)) > 1e-8:
        raise ValueError("inverse-gamma interval solve did not converge")
    return shape, scale


def zero_sum_basis(n: int) -> np.ndarray:
    """Orthonormal ``n x (n-1)`` basis of the sum-to-zero subspace (Helmert)."""
    q = np.zeros((n, max(n - 1, 0)))
    for k in range(1, n):
        norm = math.sqrt(k * (k + 1))
        q[:k, k - 1] = 1.0 / norm
        q[k, k - 1] = -k / norm
    return q


def team_performance(beta, X) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or beta.shape[-1] != X.shape[1]:
        raise ValueError(f"loadings of shape {beta.shape} do not match factors {X.shape}")
    return X @ beta if beta.ndim == 1 else beta @ X.T


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def cutpoints_from_raw(raw, first: float = 4.0) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    z2 = first + softplus(raw[..., 0])
    z3 = z2 + softplus(raw[..., 1])
    return np.stack([np.full_like(z2, first), z2, z3], axis=-1)


def empirical_cdf_gaps(categories) -> tuple[float, float, float]:
    """Per-cutpoint gaps of the empirical CDF: ``F(k) - F(k-1)`` for k = 0, 1, 2."""
    counts = np.bincount(np.asarray(categories, dtype=np.int64), minlength=NUM_CATEGORIES)
    cdf = np.cumsum(counts) / counts.sum()
    gaps = np.diff(np.concatenate([[0.0], cdf[:-1]]))
    return tuple(float(g) for g in gaps)


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    num_players: int
    num_factors: int
    ecdf_gaps: tuple[float, float, float] = (0.0, 0.0, 0.0)
    num_categories: int = NUM_CATEGORIES
    num_basis: int = 120
    boundary_factor: float = 2.5
    iota_sigma_b: float = 5.0
    lengthscale_intervals: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: {"S": (2.0, 5.0), "M": (2.0, 5.0), "L": (15.0, 30.0)})
    interval_mass: float = 0.98
    first_cutpoint: float = 4.0
    beta_sd: float = 2.5
    naive_alpha_sd: float = 2.5
    amplitude_rate: float = -math.log(0.01) / 2.0
    delta_shape: float = 2.0
    delta_rate: float = 2.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.num_categories != NUM_CATEGORIES:
            raise ValueError("the likelihood is defined for exactly four categories")
        if self.num_players < 1:
            raise ValueError("need at least one player")
        if self.num_factors < 0:
            raise ValueError("num_factors must be non-negative")
        if self.variant == "naive2" and self.num_factors != 0:
            raise ValueError("naive2 has no factors")
        if len(self.ecdf_gaps) != 3:
            raise ValueError("ecdf_gaps needs one entry per cutpoint")

    @classmethod
    def from_dataset(cls, dataset: Dataset, variant: str = "sfm", **overrides) -> "ModelSpec":
        nf = 0 if variant == "naive2" else len(dataset.factor_names)
        return cls(variant=variant, num_players=dataset.num_players, num_factors=nf,
                   ecdf_gaps=empirical_cdf_gaps(dataset.categories), **overrides)

    def invgamma_params(self, timescale: str) -> tuple[float, float]:
        lo, hi = self.lengthscale_intervals[timescale]
        return solve_interval_invgamma(float(lo), float(hi), float(self.interval_mass))

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["lengthscale_intervals"] = {k: list(v) for k, v in self.lengthscale_intervals.items()}
        out["ecdf_gaps"] = list(self.ecdf_gaps)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        d = dict(d)
        d["lengthscale_intervals"] = {k: tuple(v) for k, v in d["lengthscale_intervals"].items()}
        d["ecdf_gaps"] = tuple(d["ecdf_gaps"])
        return cls(**d)


@dataclass(frozen=True)
class Block:
    name: str
    shape: tuple[int, ...]
    positive: bool
    start: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def slice(self) -> slice:
        return slice(self.start, self.start + self.size)


class Layout:
    """Named slices over a flat vector."""

    def __init__(self, entries):
        self.blocks: dict[str, Block] = {}
        pos = 0
        for name, shape, positive in entries:
            b = Block(name, tuple(shape), positive, pos)
            self.blocks[name] = b
            pos += b.size
        self.size = pos

    def __getitem__(self, name) -> slice:
        return self.blocks[name].slice

    def __contains__(self, name) -> bool:
        return name in self.blocks

    def names(self) -> list[str]:
        out = []
        for b in self.blocks.values():
            if b.shape == ():
                out.append(b.name)
            else:
                for idx in np.ndindex(*b.shape):
                    out.append(f"{b.name}[{','.join(map(str, idx))}]")
        return out

    def unflatten(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        """Split the trailing axis of ``flat`` into named blocks."""
        flat = np.asarray(flat, dtype=float)
        lead = flat.shape[:-1]
        return {name: flat[..., b.slice].reshape(lead + b.shape) for name, b in self.blocks.items()}

    def flatten(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        parts = []
        lead = None
        for name, b in self.blocks.items():
            v = np.asarray(values[name], dtype=float)
            lead = v.shape[:v.ndim - len(b.shape)] if lead is None else lead
            parts.append(v.reshape(lead + (b.size,)))
        return np.concatenate(parts, axis=-1)


@dataclass(frozen=True, eq=False)
class PlayerBases:
    """HSGP bases on the distinct within-season and season-count inputs."""

    within: HsgpBasis
    within_index: np.ndarray
    cross: HsgpBasis
    cross_index: np.ndarray
    player_index: np.ndarray
    num_players: int

    @classmethod
    def from_arrays(cls, player_index, days, season_index, num_players: int,
                    num_basis: int = 120, boundary_factor: float = 2.5) -> "PlayerBases":
        days_u, days_inv = np.unique(np.asarray(days, dtype=float), return_inverse=True)
        seas_u, seas_inv = np.unique(np.asarray(season_index, dtype=float), return_inverse=True)
        if days_u.size < 2:
            raise ValueError("within-season effect needs at least two distinct day offsets")
        if seas_u.size < 2:
            raise ValueError("cross-seasonal effect needs players observed in at least two seasons")
        pl = np.asarray(player_index, dtype=np.int64)
        nu_w, nu_c = days_u.size, seas_u.size
        return cls(
            within=build_basis(days_u, num_basis, boundary_factor),
            within_index=pl * nu_w + days_inv.ravel(),
            cross=build_basis(seas_u, num_basis, boundary_factor),
            cross_index=pl * nu_c + seas_inv.ravel(),
            player_index=pl,
            num_players=int(num_players),
        )

    @classmethod
    def from_dataset(cls, dataset: Dataset, num_basis: int = 120,
                     boundary_factor: float = 2.5) -> "PlayerBases":
        return cls.from_arrays(dataset.player_index, dataset.days_since_first,
                               dataset.season_index, dataset.num_players,
                               num_basis, boundary_factor)


def _sqrt_density(basis: HsgpBasis, ell: np.ndarray) -> np.ndarray:
    return np.exp(log_sqrt_spectral_density(basis.sqrt_eigvals, ell[..., None]))


def maturity_weights(params: Mapping, bases: PlayerBases):
    """Per-player spectral weights of the within-season and cross-seasonal terms."""
    iota = np.asarray(params["iota"])
    w_within = (iota[..., 0, None, None] * _sqrt_density(bases.within, np.asarray(params["ell_S"]))
                + iota[..., 1, None, None] * _sqrt_density(bases.within, np.asarray(params["ell_M"])))
    w_cross = iota[..., 2, None, None] * _sqrt_density(bases.cross, np.asarray(params["ell_L"]))
    return w_within, w_cross


def assemble_alpha(params: Mapping, bases: PlayerBases) -> np.ndarray:
    """Per-observation skill from constrained SFM parameters.

    Leaves of ``params`` may carry a leading draw axis; the result then has
    shape ``(draws, observations)``.
    """
    for key in ("mu_b", "delta", "coef_W", "coef_C", "iota", "ell_S", "ell_M", "ell_L"):
        if key not in params:
            raise KeyError(f"missing parameter block {key!r}")
    w_within, w_cross = maturity_weights(params, bases)
    d_w = w_within * np.asarray(params["coef_W"])
    d_c = w_cross * np.asarray(params["coef_C"])
    h_w = d_w @ bases.within.phi.T          # (..., P, U_w)
    h_c = d_c @ bases.cross.phi.T
    lead = h_w.shape[:-2]
    h_w = h_w.reshape(lead + (-1,))[..., bases.within_index]
    h_c = h_c.reshape(lead + (-1,))[..., bases.cross_index]
    mu = np.asarray(params["mu_b"])[..., None]
    delta = np.asarray(params["delta"])[..., bases.player_index]
    return mu + delta + h_w + h_c


class SoccerFactorModel:
    """Log posterior over the unconstrained parameter vector for one variant."""

    def __init__(self, dataset: Dataset, spec: ModelSpec | None = None, variant: str = "sfm"):
        if len(dataset) == 0:
            raise ValueError("dataset is empty")
        self.dataset = dataset
        self.spec = spec or ModelSpec.from_dataset(dataset, variant)
        if self.spec.num_players != dataset.num_players:
            raise ValueError("spec.num_players does not match the dataset")
        self.variant = self.spec.variant
        self.player_ids = dataset.player_ids
        self.y = dataset.categories
        self.player = dataset.player_index
        P = self.spec.num_players
        F = self.spec.num_factors
        self.X = dataset.factors[:, :F] if F else np.zeros((len(dataset), 0))
        B = self.spec.num_basis
        self.bases = None
        if self.variant == "sfm":
            self.bases = PlayerBases.from_dataset(dataset, B, self.spec.boundary_factor)
            self._q = zero_sum_basis(P)
            self._ig = {t: self.spec.invgamma_params(t) for t in TIMESCALES}
            self._ig_lognorm = {
                t: a * math.log(b) - special.gammaln(a) for t, (a, b) in self._ig.items()}
        u_entries = []
        c_entries = []
        if F:
            u_entries.append(("beta", (F,), False))
            c_entries.append(("beta", (F,), False))
        if self.variant == "sfm":
            common = [
                ("mu_b", (), False),
                ("sigma_sigma_mu", (), True),
                ("delta_scale", (), True),
            ]
            gp = [
                ("ell_S", (P,), True), ("ell_M", (P,), True), ("ell_L", (P,), True),
                ("coef_W", (P, B), False), ("coef_C", (P, B), False),
                ("iota", (3,), True),
            ]
            u_entries += common + [("delta_raw", (P - 1,), False)] + gp
            c_entries += common + [("delta", (P,), False)] + gp
        else:
            u_entries.append(("alpha", (P,), False))
            c_entries.append(("alpha", (P,), False))
        cuts_tail = [("cut_loc", (3,), False), ("cut_scale", (), True)]
        u_entries += [("cut_raw", (2,), False)] + cuts_tail
        c_entries += [("cutpoints", (3,), False)] + cuts_tail
        self.layout = Layout(u_entries)
        self.constrained_layout = Layout(c_entries)
        self.dim = self.layout.size

    # ------------------------------------------------------------------
    # transforms

    @property
    def constrained_names(self) -> list[str]:
        return self.constrained_layout.names()

    def constrain(self, u) -> dict[str, np.ndarray]:
        u = np.asarray(u, dtype=float)
        raw = self.layout.unflatten(u)
        out = {}
        for name, b in self.layout.blocks.items():
            v = raw[name]
            if name == "delta_raw":
                continue
            if name == "cut_raw":
                out["cutpoints"] = cutpoints_from_raw(v, self.spec.first_cutpoint)
                continue
            out[name] = np.exp(v) if b.positive else v.copy()
        if self.variant == "sfm":
            out["delta"] = out["delta_scale"][..., None] * (raw["delta_raw"] @ self._q.T)
        return {name: out[name] for name in self.constrained_layout.blocks}

    def unconstrain(self, params: Mapping) -> np.ndarray:
        raw = {}
        for name, b in self.layout.blocks.items():
            if name == "delta_raw":
                delta = np.asarray(params["delta"], dtype=float)
                scale = np.asarray(params["delta_scale"], dtype=float)
                raw[name] = (delta @ self._q) / scale[..., None]
            elif name == "cut_raw":
                c = np.asarray(params["cutpoints"], dtype=float)
                raw[name] = np.stack([inverse_softplus(c[..., 1] - c[..., 0]),
                                      inverse_softplus(c[..., 2] - c[..., 1])], axis=-1)
            else:
                v = np.asarray(params[name], dtype=float)
                raw[name] = np.log(v) if b.positive else v
        return self.layout.flatten(raw)

    def constrain_flat(self, u) -> np.ndarray:
        return self.constrained_layout.flatten(self.constrain(u))

    def unflatten_constrained(self, flat) -> dict[str, np.ndarray]:
        return self.constrained_layout.unflatten(flat)

    def prior_medians(self) -> dict[str, float]:
        """Medians of the positive scalar-per-entry priors, in constrained space."""
        s = self.spec
        med = {
            "sigma_sigma_mu": math.log(2.0),
            "delta_scale": float(stats.gamma.median(s.delta_shape, scale=1.0 / s.delta_rate)),
            "iota": math.log(2.0) / s.amplitude_rate,
            "cut_scale": math.log(2.0),
        }
        if self.variant == "sfm":
            for t in TIMESCALES:
                a, b = self._ig[t]
                med[f"ell_{t}"] = float(stats.invgamma.median(a, scale=b))
        return med

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform(-2, 2) jitter, with positive blocks near their prior medians."""
        u = rng.uniform(-2.0, 2.0, size=self.dim)
        med = self.prior_medians()
        for name, b in self.layout.blocks.items():
            if b.positive:
                u[b.slice] = math.log(med[name]) + rng.uniform(-0.5, 0.5, size=b.size)
        return u

    # ------------------------------------------------------------------
    # predictions

    def linear_predictor(self, params: Mapping, *, include_team: bool = True) -> np.ndarray:
        """Latent score per observation; leading draw axes are preserved."""
        if self.variant == "sfm":
            alpha = assemble_alpha(params, self.bases)
        else:
            alpha = np.asarray(params["alpha"])[..., self.player]
        if include_team and self.spec.num_factors:
            alpha = alpha + team_performance(params["beta"], self.X)
        return alpha

    def pointwise_loglik(self, params: Mapping) -> np.ndarray:
        from .ordinal import ordered_logistic_log_pmf
        eta = self.linear_predictor(params)
        cuts = np.asarray(params["cutpoints"])
        if cuts.ndim > 1:
            cuts = cuts[..., None, :]
        return ordered_logistic_log_pmf(self.y, eta, cuts)

    # ------------------------------------------------------------------
    # density

    def log_prior(self, u) -> float:
        return float(sum(self.log_prior_blocks(u).values()))

    def log_prior_blocks(self, u) -> dict[str, float]:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            blocks, _ = self._prior(np.asarray(u, dtype=float), np.zeros(self.dim), grad=False)
        return blocks

    def log_likelihood(self, u) -> float:
        lp, _ = self.logp_and_grad(u)
        return lp - self.log_prior(u)

    def _prior(self, u, g, grad=True):
        s = self.spec
        L = self.layout
        blocks = {}
        if "beta" in L:
            beta = u[L["beta"]]
            blocks["beta"] = float(-0.5 * np.sum((beta / s.beta_sd) ** 2)
                                   - beta.size * (math.log(s.beta_sd) + _HALF_LOG_2PI))
            if grad:
                g[L["beta"]] += -beta / s.beta_sd ** 2
        if self.variant == "sfm":
            P = s.num_players
            a = u[L["sigma_sigma_mu"]][0]
            ss = float(np.exp(a))
            blocks["sigma_sigma_mu"] = -ss + a
            mu = u[L["mu_b"]][0]
            var_mu = s.iota_sigma_b ** 2 + ss * ss / P
            sd_mu = math.sqrt(var_mu)
            blocks["mu_b"] = -0.5 * mu * mu / var_mu - math.log(sd_mu) - _HALF_LOG_2PI
            v = u[L["delta_scale"]][0]
            ds = float(np.exp(v))
            k, r = s.delta_shape, s.delta_rate
            blocks["delta_scale"] = (k * math.log(r) - special.gammaln(k) + (k - 1.0) * v
                                     - r * ds + v)
            draw = u[L["delta_raw"]]
            blocks["delta_raw"] = float(-0.5 * draw @ draw - draw.size * _HALF_LOG_2PI)
            for t in TIMESCALES:
                w = u[L[f"ell_{t}"]]
                shape, scale = self._ig[t]
                inv_ell = np.exp(-w)
                blocks[f"ell_{t}"] = float(np.sum(self._ig_lognorm[t] - shape * w - scale * inv_ell))
                if grad:
                    g[L[f"ell_{t}"]] += -shape + scale * inv_ell
            for name in ("coef_W", "coef_C"):
                c = u[L[name]]
                blocks[name] = float(-0.5 * c @ c - c.size * _HALF_LOG_2PI)
                if grad:
                    g[L[name]] -= c
            q = u[L["iota"]]
            iota = np.exp(q)
            lam = s.amplitude_rate
            blocks["iota"] = float(np.sum(math.log(lam) - lam * iota + q))
            if grad:
                g[L["sigma_sigma_mu"]] += -ss + 1.0 + (mu * mu / var_mu - 1.0) * (ss * ss / P) / var_mu
                g[L["mu_b"]] += -mu / var_mu
                g[L["delta_scale"]] += k - r * ds
                g[L["delta_raw"]] -= draw
                g[L["iota"]] += -lam * iota + 1.0
        else:
            alpha = u[L["alpha"]]
            sd = s.naive_alpha_sd
            blocks["alpha"] = float(-0.5 * np.sum((alpha / sd) ** 2)
                                    - alpha.size * (math.log(sd) + _HALF_LOG_2PI))
            if grad:
                g[L["alpha"]] += -alpha / sd ** 2
        z = u[L["cut_raw"]]
        loc = u[L["cut_loc"]]
        r = u[L["cut_scale"]][0]
        sc = float(np.exp(r))
        resid = z - loc[1:]
        blocks["cut_raw"] = float(-0.5 * np.sum(resid ** 2) / sc ** 2 - z.size * (r + _HALF_LOG_2PI))
        target = 4.0 * np.asarray(s.ecdf_gaps)
        blocks["cut_loc"] = float(-0.5 * np.sum((loc - target) ** 2) - loc.size * _HALF_LOG_2PI)
        blocks["cut_scale"] = -sc + r
        if grad:
            g[L["cut_raw"]] += -resid / sc ** 2
            g_loc = -(loc - target)
            g_loc[1:] += resid / sc ** 2
            g[L["cut_loc"]] += g_loc
            g[L["cut_scale"]] += np.sum(resid ** 2) / sc ** 2 - z.size - sc + 1.0
        for name, val in blocks.items():
            if not math.isfinite(val):
                raise NonFiniteDensityError(name)
        return blocks, g

    def logp_and_grad(self, u) -> tuple[float, np.ndarray]:
        """Unnormalized log posterior and its exact gradient."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {u.shape}")
        L = self.layout
        g = np.zeros(self.dim)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            z = u[L["cut_raw"]]
            cuts = cutpoints_from_raw(z, self.spec.first_cutpoint)
            eta, parts = self._eta(u)
            logp, d_eta, d_cut = log_pmf_and_grads(self.y, eta, cuts)
            ll = float(np.sum(logp))
            if not math.isfinite(ll):
                bad = np.flatnonzero(~np.isfinite(logp))
                raise NonFiniteDensityError("likelihood", int(bad[0]) if bad.size else None)
            sig = special.expit(z)
            g[L["cut_raw"]] += [sig[0] * (d_cut[1] + d_cut[2]), sig[1] * d_cut[2]]
            self._backprop_eta(u, d_eta, g, parts)
            blocks, g = self._prior(u, g)
        total = ll + sum(blocks.values())
        if not (math.isfinite(total) and np.all(np.isfinite(g))):
            raise NonFiniteDensityError("gradient")
        return total, g

    def _eta(self, u):
        L = self.layout
        parts = None
        if self.variant == "sfm":
            parts = self._sfm_parts(u)
            eta = self._sfm_alpha(u, parts)
        else:
            eta = u[L["alpha"]][self.player]
        if "beta" in L:
            eta = eta + self.X @ u[L["beta"]]
        return eta, parts

    def _sfm_parts(self, u):
        L = self.layout
        P, B = self.spec.num_players, self.spec.num_basis
        iota = np.exp(u[L["iota"]])
        ell = {t: np.exp(u[L[f"ell_{t}"]]) for t in TIMESCALES}
        sq = {
            "S": _sqrt_density(self.bases.within, ell["S"]),
            "M": _sqrt_density(self.bases.within, ell["M"]),
            "L": _sqrt_density(self.bases.cross, ell["L"]),
        }
        cw = u[L["coef_W"]].reshape(P, B)
        cc = u[L["coef_C"]].reshape(P, B)
        wgt_w = iota[0] * sq["S"] + iota[1] * sq["M"]
        wgt_c = iota[2] * sq["L"]
        return iota, ell, sq, cw, cc, wgt_w, wgt_c

    def _sfm_alpha(self, u, parts):
        L = self.layout
        bases = self.bases
        _, _, _, cw, cc, wgt_w, wgt_c = parts
        h_w = ((wgt_w * cw) @ bases.within.phi.T).ravel()[bases.within_index]
        h_c = ((wgt_c * cc) @ bases.cross.phi.T).ravel()[bases.cross_index]
        delta = float(np.exp(u[L["delta_scale"]][0])) * (self._q @ u[L["delta_raw"]])
        return u[L["mu_b"]][0] + delta[self.player] + h_w + h_c

    def _backprop_eta(self, u, d_eta, g, parts):
        L = self.layout
        if "beta" in L:
            g[L["beta"]] += self.X.T @ d_eta
        P = self.spec.num_players
        if self.variant != "sfm":
            g[L["alpha"]] += np.bincount(self.player, weights=d_eta, minlength=P)
            return
        bases = self.bases
        iota, ell, sq, cw, cc, wgt_w, wgt_c = parts
        g[L["mu_b"]] += d_eta.sum()
        g_delta = np.bincount(self.player, weights=d_eta, minlength=P)
        ds = float(np.exp(u[L["delta_scale"]][0]))
        draw = u[L["delta_raw"]]
        g[L["delta_raw"]] += ds * (self._q.T @ g_delta)
        g[L["delta_scale"]] += ds * float(g_delta @ (self._q @ draw))

        nw = bases.within.phi.shape[0]
        g_hw = np.bincount(bases.within_index, weights=d_eta, minlength=P * nw).reshape(P, nw)
        g_dw = g_hw @ bases.within.phi
        g[L["coef_W"]] += (g_dw * wgt_w).ravel()
        t_w = g_dw * cw
        root_w = bases.within.sqrt_eigvals
        g_iota = np.zeros(3)
        for k, t in enumerate(("S", "M")):
            contrib = t_w * (iota[k] * sq[t])
            g_iota[k] = contrib.sum()
            g[L[f"ell_{t}"]] += np.sum(
                contrib * dlog_sqrt_density_dlog_lengthscale(root_w, ell[t][:, None]), axis=1)

        nc = bases.cross.phi.shape[0]
        g_hc = np.bincount(bases.cross_index, weights=d_eta, minlength=P * nc).reshape(P, nc)
        g_dc = g_hc @ bases.cross.phi
        g[L["coef_C"]] += (g_dc * wgt_c).ravel()
        contrib = g_dc * cc * wgt_c
        g_iota[2] = contrib.sum()
        g[L["ell_L"]] += np.sum(
            contrib * dlog_sqrt_density_dlog_lengthscale(bases.cross.sqrt_eigvals, ell["L"][:, None]),
            axis=1)
        g[L["iota"]] += g_iota


def log_prior(params, spec: ModelSpec, dataset: Dataset) -> float:
    return SoccerFactorModel(dataset, spec).log_prior(params)


def log_posterior_and_grad(params, dataset: Dataset, spec: ModelSpec) -> tuple[float, np.ndarray]:
    return SoccerFactorModel(dataset, spec).logp_and_grad(params)
