"""Command-line entry point: ``soccerfactor <subcommand> [options]``.

Options may also come from a ``key = value`` file passed with ``--config``;
explicit flags take precedence. Errors are printed as one JSON line on stderr
(exit 1 for configuration problems, 2 for invalid data).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import tempfile
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .compare import compare, pointwise_loglik, psis_loo
from .data import DataValidationError, build_dataset, load_appearances, load_matches, load_roster
from .data import write_appearances, write_matches, write_roster
from .diagnostics import diagnostics
from .metrics import (
    default_grids,
    maturity_curves,
    plot_curves,
    plot_sar_par,
    sar_par_report,
)
from .model import VARIANTS, ModelSpec, SoccerFactorModel
from .sampler import PosteriorDraws, SamplerConfig, SamplingError, sample
from .synth import SynthConfig, simulate_league


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ----------------------------------------------------------------------
# file helpers


def _atomic_write(path: Path, writer) -> None:
    """Run ``writer(tmp_path)`` and move the result into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_text(path: Path, text: str) -> None:
    def w(tmp):
        with open(tmp, "w") as fh:
            fh.write(text)
    _atomic_write(path, w)


def _write_json(path: Path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _require_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing required option for {what}")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    return p


def _out_dir(args) -> Path:
    if not args.out:
        raise ConfigError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory is not writable: {out}")
    return out


def _update_manifest(out: Path, command: str, args, inputs: dict, outputs: list[Path]) -> None:
    path = out / "manifest.json"
    manifest = {}
    if path.is_file():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError:
            manifest = {}
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    manifest.setdefault("runs", {})[command] = {
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in inputs.items()},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    manifest["versions"] = {
        "soccerfactor": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    _write_json(path, manifest)


# ----------------------------------------------------------------------
# shared pieces


def _data_inputs(args, need_roster: bool = False) -> dict[str, Path]:
    inputs = {
        "matches": _require_file(args.matches, "--matches"),
        "appearances": _require_file(args.appearances, "--appearances"),
    }
    if args.roster is not None or need_roster:
        inputs["roster"] = _require_file(args.roster, "--roster")
    return inputs


def _load_dataset(inputs: dict[str, Path]):
    matches = load_matches(inputs["matches"])
    apps = load_appearances(inputs["appearances"])
    roster = load_roster(inputs["roster"]) if "roster" in inputs else None
    return build_dataset(matches, apps, roster), roster


def _spec(args, dataset, variant: str) -> ModelSpec:
    overrides = {}
    if args.num_basis is not None:
        overrides["num_basis"] = args.num_basis
    if args.boundary_factor is not None:
        overrides["boundary_factor"] = args.boundary_factor
    if args.interval_mass is not None:
        overrides["interval_mass"] = args.interval_mass
    try:
        return ModelSpec.from_dataset(dataset, variant, **overrides)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _sampler_config(args) -> SamplerConfig:
    try:
        return SamplerConfig(num_chains=args.chains, warmup_draws=args.warmup,
                             kept_draws=args.draws, target_accept=args.target_accept,
                             max_tree_depth=args.max_tree_depth, seed=args.seed,
                             num_workers=args.workers)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _draw_paths(out: Path, variant: str) -> tuple[Path, Path]:
    if variant == "sfm":
        return out / "draws.csv", out / "diagnostics.json"
    return out / f"draws_{variant}.csv", out / f"diagnostics_{variant}.json"


def _fit_variant(args, out, dataset, variant, inputs) -> tuple[PosteriorDraws, list[Path]]:
    spec = _spec(args, dataset, variant)
    try:
        model = SoccerFactorModel(dataset, spec)
    except ValueError as exc:
        raise DataValidationError(str(exc)) from exc
    draws = sample(model, _sampler_config(args))
    draws.metadata = {
        "model_spec": spec.to_dict(),
        "inputs": {k: str(p) for k, p in inputs.items()},
    }
    diag = diagnostics(draws)
    csv_path, json_path = _draw_paths(out, variant)
    _atomic_write(csv_path, draws.to_csv)
    _write_json(json_path, draws.sidecar(diag.to_dict()))
    return draws, [csv_path, json_path]


def _read_draws(out: Path, variant: str) -> PosteriorDraws:
    csv_path, json_path = _draw_paths(out, variant)
    for p in (csv_path, json_path):
        if not p.is_file():
            raise ConfigError(f"draws file not found: {p} (run `fit` first)")
    return PosteriorDraws.read(csv_path, json_path)


def _inputs_from_draws(args, draws: PosteriorDraws, need_roster: bool) -> dict[str, Path]:
    stored = draws.metadata.get("inputs", {})
    for key in ("matches", "appearances", "roster"):
        if getattr(args, key) is None and key in stored:
            setattr(args, key, stored[key])
    return _data_inputs(args, need_roster)


# ----------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> None:
    out = _out_dir(args)
    inputs = _data_inputs(args)
    dataset, roster = _load_dataset(inputs)
    counts = np.bincount(dataset.categories, minlength=4)
    summary = {
        "num_observations": len(dataset),
        "num_players": dataset.num_players,
        "players": list(dataset.player_ids),
        "seasons": sorted({o.season for o in dataset.observations}),
        "category_counts": counts.tolist(),
        "factor_names": list(dataset.factor_names),
        "factor_standardization": {k: list(v) for k, v in dataset.factor_standardization.items()},
        "roster": None if roster is None else {"elite": roster.elite, "rlp": roster.rlp},
    }
    path = out / "ingest_summary.json"
    _write_json(path, summary)
    _update_manifest(out, "ingest", args, inputs, [path])


def cmd_simulate(args) -> None:
    out = _out_dir(args)
    try:
        cfg = SynthConfig(num_teams=args.teams, num_seasons=args.seasons,
                          players_per_team=args.players_per_team, seed=args.seed,
                          cross_shape=args.cross_shape)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    league = simulate_league(cfg)
    paths = [out / "matches.csv", out / "appearances.csv", out / "roster.csv", out / "truth.json"]
    _atomic_write(paths[0], lambda t: write_matches(t, league.matches))
    _atomic_write(paths[1], lambda t: write_appearances(t, league.appearances))
    _atomic_write(paths[2], lambda t: write_roster(t, league.roster))
    _atomic_write(paths[3], league.truth.write)
    _update_manifest(out, "simulate", args, {}, paths)


def cmd_fit(args) -> None:
    out = _out_dir(args)
    inputs = _data_inputs(args)
    dataset, _ = _load_dataset(inputs)
    _, written = _fit_variant(args, out, dataset, args.variant, inputs)
    _update_manifest(out, f"fit:{args.variant}", args, inputs, written)


def cmd_sar_par(args) -> None:
    out = _out_dir(args)
    draws = _read_draws(out, "sfm")
    inputs = _inputs_from_draws(args, draws, need_roster=True)
    dataset, roster = _load_dataset(inputs)
    try:
        report = sar_par_report(draws, dataset, roster, level=args.level)
    except ValueError as exc:
        raise DataValidationError(str(exc)) from exc
    written = [out / "sar_par.json", out / "sar_par.csv"]
    _write_text(written[0], report.to_json() + "\n")
    _write_text(written[1], report.to_csv())
    if args.svg:
        svg = out / "sar_par.svg"
        _atomic_write(svg, lambda t: plot_sar_par(report, t))
        written.append(svg)
    _update_manifest(out, "sar-par", args, inputs, written)


def cmd_loo(args) -> None:
    out = _out_dir(args)
    inputs = _data_inputs(args)
    dataset, _ = _load_dataset(inputs)
    written = []
    results = []
    for variant in VARIANTS:
        csv_path, json_path = _draw_paths(out, variant)
        if csv_path.is_file() and json_path.is_file():
            draws = PosteriorDraws.read(csv_path, json_path)
        else:
            draws, paths = _fit_variant(args, out, dataset, variant, inputs)
            written += paths
        results.append(psis_loo(pointwise_loglik(draws, dataset)))
    table = compare(results, list(VARIANTS))
    extra = [out / "loo.csv", out / "loo.json", out / "loo_plot_data.csv"]
    _write_text(extra[0], table.to_csv())
    _write_text(extra[1], table.to_json() + "\n")
    _write_text(extra[2], table.plot_data())
    _update_manifest(out, "loo", args, inputs, written + extra)


def cmd_report(args) -> None:
    out = _out_dir(args)
    draws = _read_draws(out, "sfm")
    inputs = _inputs_from_draws(args, draws, need_roster=False)
    dataset, _ = _load_dataset(inputs)
    model = SoccerFactorModel(dataset, ModelSpec.from_dict(draws.metadata["model_spec"]))
    try:
        curves = maturity_curves(draws, default_grids(model, args.grid_points), dataset,
                                 level=args.level, per_player=True)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    written = [out / "curves.csv", out / "curves_players.csv"]
    _write_text(written[0], curves.to_csv())
    _write_text(written[1], curves.players_to_csv())
    if args.svg:
        svg = out / "curves.svg"
        _atomic_write(svg, lambda t: plot_curves(curves, t))
        written.append(svg)
    _update_manifest(out, "report", args, inputs, written)


# ----------------------------------------------------------------------
# argument handling


def _add_common(p):
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=0)


def _add_data(p):
    p.add_argument("--matches")
    p.add_argument("--appearances")
    p.add_argument("--roster")


def _add_fit(p):
    p.add_argument("--variant", choices=VARIANTS, default="sfm")
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--target-accept", type=float, default=0.9)
    p.add_argument("--max-tree-depth", type=int, default=10)
    p.add_argument("--workers", type=int, default=1, help="processes for running chains")
    p.add_argument("--num-basis", type=int)
    p.add_argument("--boundary-factor", type=float)
    p.add_argument("--interval-mass", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="soccerfactor", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate and summarize input data")
    _add_common(p)
    _add_data(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate", help="generate a synthetic league")
    _add_common(p)
    p.add_argument("--teams", type=int, default=20)
    p.add_argument("--seasons", type=int, default=3)
    p.add_argument("--players-per-team", type=int, default=1)
    p.add_argument("--cross-shape", choices=("gp", "hump"), default="gp")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="sample the posterior")
    _add_common(p)
    _add_data(p)
    _add_fit(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sar-par", help="skill and performance above replacement")
    _add_common(p)
    _add_data(p)
    p.add_argument("--level", type=float, default=0.83)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_sar_par)

    p = sub.add_parser("loo", help="compare the three model variants by PSIS-LOO")
    _add_common(p)
    _add_data(p)
    _add_fit(p)
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("report", help="maturity-effect curves")
    _add_common(p)
    _add_data(p)
    p.add_argument("--level", type=float, default=0.83)
    p.add_argument("--grid-points", type=int, default=100)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    out = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise ConfigError("a subcommand is required: ingest, simulate, fit, sar-par, loo, report")
    if getattr(args, "config", None):
        values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in values.items():
            action = actions.get(key)
            if action is None or key in ("config", "help", "func"):
                raise ConfigError(f"unknown config key {key!r} for {args.command}")
            if action.nargs == 0:
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
                continue
            try:
                converted = action.type(value) if action.type else value
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
            if action.choices is not None and converted not in action.choices:
                raise ConfigError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
            defaults[key] = converted
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)  # flags still win
    return args


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def run(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else list(argv))
        args.func(args)
    except ConfigError as exc:
        return _fail("config", str(exc), 1)
    except DataValidationError as exc:
        return _fail("data", str(exc), 2)
    except SamplingError as exc:
        return _fail("sampling", str(exc), 3)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
