"""No-U-turn Hamiltonian Monte Carlo with windowed warmup adaptation.

The transition uses multinomial sampling over the trajectory (uniform within
subtrees, biased toward the new subtree at the top level) and the generalized
no-U-turn criterion, including the checks that straddle the two halves of each
merged subtree. Warmup adapts the step size by dual averaging and a diagonal
inverse metric over doubling windows.
"""
from __future__ import annotations

import csv
import json
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

MAX_DELTA_H = 1000.0


@dataclass(frozen=True)
class SamplerConfig:
    num_chains: int = 4
    warmup_draws: int = 1000
    kept_draws: int = 1000
    target_accept: float = 0.9
    max_tree_depth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    num_workers: int = 1

    def __post_init__(self):
        if self.num_chains < 1:
            raise ValueError("num_chains must be at least 1")
        if self.kept_draws < 1:
            raise ValueError("kept_draws must be at least 1")
        if self.warmup_draws < 0:
            raise ValueError("warmup_draws must be non-negative")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be at least 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.num_workers < 1:
            raise ValueError("num_workers must be at least 1")


class SamplingError(RuntimeError):
    pass


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Counter-based stream keyed on ``(seed, chain)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chain)])))


# ----------------------------------------------------------------------
# target wrapper


class _Target:
    def __init__(self, logp_and_grad, dim, initial_point=None, constrain=None, names=None,
                 shapes=None):
        self.logp_and_grad = logp_and_grad
        self.dim = int(dim)
        self.initial_point = initial_point
        self.constrain = constrain
        self.names = names
        self.shapes = shapes

    @classmethod
    def wrap(cls, target, dim=None) -> "_Target":
        if hasattr(target, "logp_and_grad"):
            layout = target.constrained_layout
            return cls(target.logp_and_grad, target.dim, target.initial_point,
                       target.constrain_flat, layout.names(),
                       {n: b.shape for n, b in layout.blocks.items()})
        if dim is None:
            raise ValueError("dim is required when sampling a bare log-density function")
        return cls(target, dim)

    def evaluate(self, theta):
        try:
            lp, grad = self.logp_and_grad(theta)
        except (FloatingPointError, OverflowError, ValueError, ZeroDivisionError):
            return -math.inf, None
        lp = float(lp)
        if not math.isfinite(lp):
            return -math.inf, None
        grad = np.asarray(grad, dtype=float)
        if not np.all(np.isfinite(grad)):
            return -math.inf, None
        return lp, grad


@dataclass
class _State:
    theta: np.ndarray
    p: np.ndarray
    lp: float
    grad: np.ndarray | None


class _Subtree:
    __slots__ = ("valid", "edge", "sample", "ps_left", "ps_right", "p_left", "p_right", "rho",
                 "log_w", "n_leapfrog", "sum_accept", "divergent")


# ----------------------------------------------------------------------
# one transition


class Nuts:
    def __init__(self, target: _Target, max_depth: int, rng: np.random.Generator):
        self.target = target
        self.max_depth = max_depth
        self.rng = rng
        self.inv_metric = np.ones(target.dim)
        self.step_size = 1.0

    def hamiltonian(self, s: _State) -> float:
        if s.grad is None:
            return math.inf
        return -s.lp + 0.5 * float(np.sum(s.p * s.p * self.inv_metric))

    def leapfrog(self, s: _State, eps: float) -> _State:
        if s.grad is None:
            return s
        p = s.p + 0.5 * eps * s.grad
        theta = s.theta + eps * self.inv_metric * p
        lp, grad = self.target.evaluate(theta)
        if grad is None:
            return _State(theta, p, lp, None)
        return _State(theta, p + 0.5 * eps * grad, lp, grad)

    def draw_momentum(self) -> np.ndarray:
        return self.rng.standard_normal(self.target.dim) / np.sqrt(self.inv_metric)

    def _criterion(self, ps_minus, ps_plus, rho) -> bool:
        return float(ps_plus @ rho) > 0 and float(ps_minus @ rho) > 0

    def _merge_ok(self, left: _Subtree, right: _Subtree, rho) -> bool:
        # whole span plus the two checks straddling the join
        return (self._criterion(left.ps_left, right.ps_right, rho)
                and self._criterion(left.ps_left, right.ps_left, left.rho + right.p_left)
                and self._criterion(left.ps_right, right.ps_right, right.rho + left.p_right))

    def build_tree(self, state: _State, depth: int, direction: int, h0: float) -> _Subtree:
        if depth == 0:
            new = self.leapfrog(state, direction * self.step_size)
            h = self.hamiltonian(new)
            if not math.isfinite(h):
                h = math.inf
            t = _Subtree()
            t.divergent = (h - h0) > MAX_DELTA_H
            t.valid = not t.divergent
            t.edge = new
            t.sample = new
            t.log_w = h0 - h
            t.n_leapfrog = 1
            t.sum_accept = 1.0 if h0 - h > 0 else math.exp(h0 - h)
            ps = self.inv_metric * new.p
            t.ps_left = t.ps_right = ps
            t.p_left = t.p_right = new.p
            t.rho = new.p.copy()
            return t
        first = self.build_tree(state, depth - 1, direction, h0)
        if not first.valid:
            return first
        second = self.build_tree(first.edge, depth - 1, direction, h0)
        second.n_leapfrog += first.n_leapfrog
        second.sum_accept += first.sum_accept
        if not second.valid:
            return second
        out = _Subtree()
        out.n_leapfrog = second.n_leapfrog
        out.sum_accept = second.sum_accept
        out.divergent = False
        out.edge = second.edge
        out.log_w = np.logaddexp(first.log_w, second.log_w)
        # uniform multinomial choice between the halves
        if self.rng.uniform() < math.exp(second.log_w - out.log_w):
            out.sample = second.sample
        else:
            out.sample = first.sample
        left, right = (first, second) if direction > 0 else (second, first)
        out.rho = first.rho + second.rho
        out.valid = self._merge_ok(left, right, out.rho)
        out.ps_left, out.p_left = left.ps_left, left.p_left
        out.ps_right, out.p_right = right.ps_right, right.p_right
        return out

    def transition(self, theta, lp, grad) -> tuple[_State, dict]:
        p = self.draw_momentum()
        s0 = _State(theta, p, lp, grad)
        h0 = self.hamiltonian(s0)
        tree = _Subtree()
        tree.edge = s0
        tree.ps_left = tree.ps_right = self.inv_metric * p
        tree.p_left = tree.p_right = p
        tree.rho = p.copy()
        left_edge, right_edge = s0, s0
        sample = s0
        log_w = 0.0
        depth = 0
        n_leapfrog = 0
        sum_accept = 0.0
        divergent = False
        while depth < self.max_depth:
            direction = 1 if self.rng.uniform() > 0.5 else -1
            start = right_edge if direction > 0 else left_edge
            sub = self.build_tree(start, depth, direction, h0)
            n_leapfrog += sub.n_leapfrog
            sum_accept += sub.sum_accept
            if not sub.valid:
                divergent = sub.divergent
                break
            depth += 1
            if direction > 0:
                right_edge = sub.edge
            else:
                left_edge = sub.edge
            # biased progressive sampling toward the new subtree
            if sub.log_w > log_w or self.rng.uniform() < math.exp(sub.log_w - log_w):
                sample = sub.sample
            log_w = float(np.logaddexp(log_w, sub.log_w))
            left, right = (tree, sub) if direction > 0 else (sub, tree)
            rho = tree.rho + sub.rho
            keep_going = self._merge_ok(left, right, rho)
            merged = _Subtree()
            merged.rho = rho
            merged.ps_left, merged.p_left = left.ps_left, left.p_left
            merged.ps_right, merged.p_right = right.ps_right, right.p_right
            tree = merged
            if not keep_going:
                break
        stats = {
            "accept_stat": sum_accept / max(n_leapfrog, 1),
            "tree_depth": depth,
            "n_leapfrog": n_leapfrog,
            "divergent": divergent,
            "energy": self.hamiltonian(sample),
        }
        return sample, stats

    def find_reasonable_step_size(self, theta, lp, grad) -> None:
        log_target = math.log(0.8)
        s0 = _State(theta, self.draw_momentum(), lp, grad)
        h0 = self.hamiltonian(s0)
        delta = h0 - self.hamiltonian(self.leapfrog(s0, self.step_size))
        direction = 1 if delta > log_target else -1
        for _ in range(100):
            s0 = _State(theta, self.draw_momentum(), lp, grad)
            h0 = self.hamiltonian(s0)
            delta = h0 - self.hamiltonian(self.leapfrog(s0, self.step_size))
            if not math.isfinite(delta):
                delta = -math.inf
            if direction == 1 and not delta > log_target:
                break
            if direction == -1 and not delta < log_target:
                break
            self.step_size = self.step_size * 2.0 if direction == 1 else self.step_size / 2.0
            if self.step_size > 1e7:
                raise SamplingError("posterior is improper; step size search diverged")
            if self.step_size == 0:
                raise SamplingError("no acceptable step size; check the model")


# ----------------------------------------------------------------------
# warmup


class DualAveraging:
    def __init__(self, target_accept: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.delta = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(1.0)

    def restart(self, step_size: float) -> None:
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** -self.kappa
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.x_bar)


class Welford:
    def __init__(self, dim: int):
        self.dim = dim
        self.restart()

    def restart(self):
        self.n = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    def add(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def variance(self):
        return self.m2 / (self.n - 1)


class WindowSchedule:
    """Fast initial buffer, doubling slow windows, fast terminal buffer."""

    def __init__(self, num_warmup: int, init_buffer=75, term_buffer=50, base_window=25):
        self.num_warmup = num_warmup
        if num_warmup < 20:
            self.init_buffer, self.term_buffer, self.base_window = num_warmup, 0, 0
            self.enabled = False
        else:
            self.enabled = True
            if init_buffer + base_window + term_buffer > num_warmup:
                init_buffer = int(0.15 * num_warmup)
                term_buffer = int(0.1 * num_warmup)
                base_window = num_warmup - (init_buffer + term_buffer)
            self.init_buffer, self.term_buffer, self.base_window = init_buffer, term_buffer, base_window
        self.counter = 0
        self.window_size = self.base_window
        self.next_window = self.init_buffer + self.window_size - 1

    def in_window(self) -> bool:
        return (self.enabled and self.counter >= self.init_buffer
                and self.counter < self.num_warmup - self.term_buffer
                and self.counter != self.num_warmup)

    def window_ends(self) -> bool:
        return self.enabled and self.counter == self.next_window and self.counter != self.num_warmup

    def advance_window(self) -> None:
        last = self.num_warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last and self.next_window + 2 * self.window_size >= last + 1:
            self.next_window = last


def _regularized(var: np.ndarray, n: int) -> np.ndarray:
    return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


# ----------------------------------------------------------------------
# chains


def _initialize(target: _Target, rng, radius: float, attempts: int = 100):
    for _ in range(attempts):
        if target.initial_point is not None:
            theta = np.asarray(target.initial_point(rng), dtype=float)
        else:
            theta = rng.uniform(-radius, radius, size=target.dim)
        lp, grad = target.evaluate(theta)
        if grad is not None:
            return theta, lp, grad
    raise SamplingError(f"non-finite log density at {attempts} initial points")


def run_chain(target: _Target, config: SamplerConfig, chain: int) -> dict:
    rng = chain_rng(config.seed, chain)
    theta, lp, grad = _initialize(target, rng, config.init_radius)
    nuts = Nuts(target, config.max_tree_depth, rng)
    nuts.find_reasonable_step_size(theta, lp, grad)
    adapt = DualAveraging(config.target_accept)
    adapt.restart(nuts.step_size)
    windows = WindowSchedule(config.warmup_draws)
    est = Welford(target.dim)
    for _ in range(config.warmup_draws):
        state, stats = nuts.transition(theta, lp, grad)
        theta, lp, grad = state.theta, state.lp, state.grad
        nuts.step_size = adapt.update(stats["accept_stat"])
        if windows.in_window():
            est.add(theta)
        if windows.window_ends():
            windows.advance_window()
            nuts.inv_metric = _regularized(est.variance(), est.n)
            est.restart()
            nuts.find_reasonable_step_size(theta, lp, grad)
            adapt.restart(nuts.step_size)
        windows.counter += 1
    if config.warmup_draws > 0:
        nuts.step_size = adapt.final_step_size

    n = config.kept_draws
    keep = np.empty((n, target.dim))
    out = {k: np.empty(n, dtype=t) for k, t in (
        ("accept_stat", float), ("tree_depth", np.int64), ("n_leapfrog", np.int64),
        ("divergent", bool), ("energy", float), ("lp", float))}
    for i in range(n):
        state, stats = nuts.transition(theta, lp, grad)
        theta, lp, grad = state.theta, state.lp, state.grad
        keep[i] = theta
        for k, v in stats.items():
            out[k][i] = v
        out["lp"][i] = lp
    if target.constrain is not None:
        constrained = np.stack([target.constrain(row) for row in keep])
    else:
        constrained = keep
    out["draws"] = constrained
    out["step_size"] = nuts.step_size
    out["inv_metric"] = nuts.inv_metric.copy()
    return out


_POOL_TARGET: _Target | None = None
_POOL_CONFIG: SamplerConfig | None = None


def _pool_chain(chain: int) -> dict:
    return run_chain(_POOL_TARGET, _POOL_CONFIG, chain)


def sample(logdensity_with_grad, config: SamplerConfig, *, dim: int | None = None,
           names: Sequence[str] | None = None) -> "PosteriorDraws":
    """Run ``config.num_chains`` independent chains.

    ``logdensity_with_grad`` is either a model object exposing
    ``logp_and_grad``/``dim``/``initial_point``/``constrain_flat`` or a bare
    function ``theta -> (logp, grad)`` (then ``dim`` is required).
    """
    global _POOL_TARGET, _POOL_CONFIG
    target = _Target.wrap(logdensity_with_grad, dim)
    workers = min(config.num_workers, config.num_chains, os.cpu_count() or 1)
    if workers > 1 and "fork" in multiprocessing.get_all_start_methods():
        _POOL_TARGET, _POOL_CONFIG = target, config
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(workers, mp_context=ctx) as pool:
                results = list(pool.map(_pool_chain, range(config.num_chains)))
        finally:
            _POOL_TARGET = _POOL_CONFIG = None
    else:
        results = [run_chain(target, config, c) for c in range(config.num_chains)]

    d = results[0]["draws"].shape[1]
    if target.shapes is not None:
        shapes = dict(target.shapes)
    else:
        param_names = list(names) if names is not None else [f"theta[{i}]" for i in range(d)]
        if len(param_names) != d:
            raise ValueError("names must match the parameter dimension")
        shapes = {n: () for n in param_names}
    stack = lambda k: np.stack([r[k] for r in results])  # noqa: E731
    return PosteriorDraws(
        draws=stack("draws"),
        shapes=shapes,
        accept_stat=stack("accept_stat"),
        divergent=stack("divergent"),
        tree_depth=stack("tree_depth"),
        n_leapfrog=stack("n_leapfrog"),
        energy=stack("energy"),
        lp=stack("lp"),
        step_size=np.array([r["step_size"] for r in results]),
        inv_metric=stack("inv_metric"),
        config=config,
    )


# ----------------------------------------------------------------------
# draws container


def _names_from_shapes(shapes: Mapping[str, tuple]) -> list[str]:
    out = []
    for name, shape in shapes.items():
        if shape == ():
            out.append(name)
        else:
            out.extend(f"{name}[{','.join(map(str, i))}]" for i in np.ndindex(*shape))
    return out


_STAT_KEYS = ("accept_stat", "divergent", "tree_depth", "n_leapfrog", "energy", "lp")


@dataclass(eq=False)
class PosteriorDraws:
    """Kept draws in constrained space, ``chains x draws x dim``."""

    draws: np.ndarray
    shapes: dict[str, tuple]
    accept_stat: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    energy: np.ndarray
    lp: np.ndarray
    step_size: np.ndarray
    inv_metric: np.ndarray
    config: SamplerConfig | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3:
            raise ValueError("draws must be chains x draws x dim")
        if self.draws.shape[2] != len(self.names):
            raise ValueError("parameter names do not match the draw dimension")
        if np.isnan(self.draws).any():
            raise ValueError("draws contain NaN")

    @classmethod
    def from_blocks(cls, blocks: Mapping[str, np.ndarray], metadata: dict | None = None
                    ) -> "PosteriorDraws":
        """Wrap hand-made blocks shaped ``chains x draws x shape`` (no sampler stats)."""
        first = np.asarray(next(iter(blocks.values())))
        c, s = first.shape[:2]
        shapes = {k: tuple(np.shape(v)[2:]) for k, v in blocks.items()}
        flat = np.concatenate([np.asarray(v, dtype=float).reshape(c, s, -1)
                               for v in blocks.values()], axis=2)
        zeros = np.zeros((c, s))
        return cls(flat, shapes, zeros, zeros.astype(bool), zeros.astype(np.int64),
                   zeros.astype(np.int64), zeros, zeros, np.ones(c),
                   np.ones((c, flat.shape[2])), None, dict(metadata or {}))

    @property
    def names(self) -> list[str]:
        return _names_from_shapes(self.shapes)

    @property
    def num_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def num_draws(self) -> int:
        return self.draws.shape[1]

    @property
    def num_divergent(self) -> int:
        return int(self.divergent.sum())

    def _offsets(self):
        pos = 0
        for name, shape in self.shapes.items():
            size = int(np.prod(shape, dtype=np.int64))
            yield name, shape, slice(pos, pos + size)
            pos += size

    def get(self, name: str) -> np.ndarray:
        """Block ``name`` as ``chains x draws x shape``."""
        for n, shape, sl in self._offsets():
            if n == name:
                return self.draws[:, :, sl].reshape(self.draws.shape[:2] + tuple(shape))
        if name in self.names:
            return self.draws[:, :, self.names.index(name)]
        raise KeyError(f"unknown parameter {name!r}")

    def pooled(self) -> dict[str, np.ndarray]:
        """All blocks with chains and draws merged into one leading axis."""
        flat = self.draws.reshape(-1, self.draws.shape[2])
        return {n: flat[:, sl].reshape((flat.shape[0],) + tuple(shape))
                for n, shape, sl in self._offsets()}

    def to_csv(self, path) -> None:
        names = self.names
        c, s, d = self.draws.shape
        chain = np.repeat(np.arange(c), s)
        draw = np.tile(np.arange(s), c)
        body = self.draws.reshape(c * s, d)
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(["chain", "draw"] + names)
            for ci, di, row in zip(chain, draw, body):
                fh.write(f"{ci},{di}," + ",".join(map(repr, row.tolist())) + "\n")

    def sidecar(self, diagnostics: Mapping | None = None) -> dict:
        return {
            "config": asdict(self.config) if self.config is not None else None,
            "seed": int(self.config.seed) if self.config is not None else None,
            "shapes": [[k, list(v)] for k, v in self.shapes.items()],  # ordered
            "step_size": self.step_size.tolist(),
            "inv_metric": self.inv_metric.tolist(),
            "stats": {k: getattr(self, k).tolist() for k in _STAT_KEYS},
            "num_divergent": self.num_divergent,
            "diagnostics": dict(diagnostics) if diagnostics is not None else None,
            "metadata": self.metadata,
        }

    def write(self, csv_path, json_path, diagnostics: Mapping | None = None) -> None:
        self.to_csv(csv_path)
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(diagnostics), fh, indent=2)

    @classmethod
    def read(cls, csv_path, json_path) -> "PosteriorDraws":
        with open(json_path) as fh:
            side = json.load(fh)
        shapes = {k: tuple(v) for k, v in side["shapes"]}
        with open(csv_path, newline="") as fh:
            header = next(csv.reader(fh))
        expected = ["chain", "draw"] + _names_from_shapes(shapes)
        if header != expected:
            raise ValueError(f"{csv_path}: columns do not match the sidecar parameter list")
        body = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        chains = body[:, 0].astype(np.int64)
        c = int(chains.max()) + 1
        s = body.shape[0] // c
        stats = side["stats"]
        cfg = side.get("config")
        return cls(
            draws=body[:, 2:].reshape(c, s, -1),
            shapes=shapes,
            accept_stat=np.asarray(stats["accept_stat"], dtype=float),
            divergent=np.asarray(stats["divergent"], dtype=bool),
            tree_depth=np.asarray(stats["tree_depth"], dtype=np.int64),
            n_leapfrog=np.asarray(stats["n_leapfrog"], dtype=np.int64),
            energy=np.asarray(stats["energy"], dtype=float),
            lp=np.asarray(stats["lp"], dtype=float),
            step_size=np.asarray(side["step_size"], dtype=float),
            inv_metric=np.asarray(side["inv_metric"], dtype=float),
            config=SamplerConfig(**cfg) if cfg else None,
            metadata=side.get("metadata") or {},
        )
