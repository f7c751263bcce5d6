"""Command-line front end: ``scripsim <subcommand> [flags]``.

Every subcommand prints a short summary and optionally writes CSV/JSON. Exit
status is 0 on success, 1 on a model error and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import contextlib
import io
import json
import math
import os
import sys

import numpy as np

from . import export
from .bestreply import find_equilibrium
from .core import INFINITE, ConfigError, ScripError, ToleranceConfig, load_population
from .inference import ObservedDistribution, minimal_explanation
from .simulator import DEFAULT_SEED, SimConfig, compare_to_prediction, exact_chain, realize_agents, run_simulation
from .welfare import crash_threshold, sweep_altruists, sweep_hoarders, sweep_money

# manifest args naming files; resolved relative to the manifest
_PATH_ARGS = {"config", "out", "dist", "dist_out", "per_type_out", "ratios_out"}


# ---------------------------------------------------------------- arg types

def grid_arg(text: str) -> list:
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:step, got {text!r}") from None
    if not step > 0 or hi < lo or not all(map(math.isfinite, (lo, hi, step))):
        raise argparse.ArgumentTypeError(f"grid {text!r} is not strictly increasing")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 12) for i in range(count)]


def thresholds_arg(text: str) -> tuple:
    parts = [s for s in text.replace(",", ";").split(";") if s.strip()]
    try:
        ks = tuple(int(s) for s in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"thresholds must be integers, got {text!r}") from None
    if not ks or any(k < 0 for k in ks):
        raise argparse.ArgumentTypeError(f"thresholds must be non-negative, got {text!r}")
    return ks


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text!r}")
        return v
    return conv


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text!r}")
    return v


def _fraction(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1), got {text!r}")
    return v


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scripsim", description="Equilibria, simulation and inference for scrip systems.")
    sub = ap.add_subparsers(dest="command", metavar="command")
    sub.required = True

    tol = argparse.ArgumentParser(add_help=False)
    g = tol.add_argument_group("tolerances")
    g.add_argument("--lambda-tol", type=_positive(float), default=1e-12, help="bisection tolerance for lambda")
    g.add_argument("--vi-tol", type=_positive(float), default=1e-10, help="value iteration residual")
    g.add_argument("--k-max", type=_positive(int), default=200, help="initial money grid size")
    g.add_argument("--k-max-cap", type=_positive(int), default=12800, help="largest money grid tried")

    cfg = argparse.ArgumentParser(add_help=False)
    cfg.add_argument("--config", required=True, help="population JSON")
    cfg.add_argument("--out", help="output file")

    p = sub.add_parser("equilibrium", parents=[cfg, tol], help="greatest threshold equilibrium")
    p.add_argument("--money", type=_positive(float), required=True, help="average money per agent")
    p.add_argument("--altruists", type=_fraction, default=0.0, help="share of requests served free")
    p.add_argument("--dist-out", help="write the predicted money distribution here")
    p.add_argument("--per-type-out", help="write per-type distributions here")

    p = sub.add_parser("crash", parents=[cfg, tol], help="locate the crash money supply")
    p.add_argument("--altruists", type=_fraction, default=0.0)
    p.add_argument("--width", type=_positive(float), default=0.05, help="bracket width")
    p.add_argument("--cap", type=_positive(float), default=128.0, help="largest money supply tried")

    p = sub.add_parser("sweep-money", parents=[cfg, tol], help="equilibria over a money grid")
    p.add_argument("--grid", type=grid_arg, required=True, help="lo:hi:step")
    p.add_argument("--altruists", type=_fraction, default=0.0)

    p = sub.add_parser("sweep-altruists", parents=[cfg, tol], help="equilibria over an altruist grid")
    p.add_argument("--grid", type=grid_arg, required=True, help="lo:hi:step, values in [0, 1)")
    p.add_argument("--money", type=_positive(float), required=True)

    p = sub.add_parser("sweep-hoarders", parents=[cfg, tol], help="equilibria over a hoarder-share grid")
    p.add_argument("--grid", type=grid_arg, required=True, help="lo:hi:step, values in [0, 1)")
    p.add_argument("--money", type=_positive(float), required=True)
    p.add_argument("--altruists", type=_fraction, default=0.0)

    p = sub.add_parser("simulate", parents=[cfg, tol], help="Monte Carlo run of the protocol")
    p.add_argument("--money", type=_positive(float), required=True)
    p.add_argument("--thresholds", type=thresholds_arg, help="one per type, e.g. 20;13 (default: equilibrium)")
    p.add_argument("--rounds", type=_nonneg_int, default=1_000_000)
    p.add_argument("--burn-in", type=_nonneg_int, default=None, help="default max(1e6, 100 n)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"default {DEFAULT_SEED}")
    p.add_argument("--record-interval", type=_positive(int), default=100)
    p.add_argument("--hoarders-silent", action="store_true", help="hoarders never request service")

    p = sub.add_parser("infer", help="minimal strategy explanation of a money distribution")
    p.add_argument("--dist", required=True, help="CSV with columns money,fraction")
    p.add_argument("--out", help="JSON report")
    p.add_argument("--ratios-out", help="CSV of log fractions and successive ratios")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--noisy", dest="noisy", action="store_true", default=None,
                      help="treat the input as sampled (default when a .json sidecar is present)")
    mode.add_argument("--exact", dest="noisy", action="store_false")
    p.add_argument("--ratio-tol", type=_positive(float), default=None)
    p.add_argument("--residual-tol", type=_positive(float), default=None)
    p.add_argument("--sample-size", type=_positive(int), default=None)

    p = sub.add_parser("oracle", help="exact chain check for a tiny system")
    p.add_argument("--config", required=True)
    p.add_argument("--thresholds", type=thresholds_arg, required=True, help="one per type")
    p.add_argument("--total-money", type=_nonneg_int, required=True)
    p.add_argument("--out", help="JSON report")

    p = sub.add_parser("suite", help="run a JSON manifest of experiments")
    p.add_argument("manifest")
    p.add_argument("--index", help="index file (default: index.json next to the manifest)")
    return ap


def _tolerances(args) -> ToleranceConfig:
    return ToleranceConfig(lambda_bisection_tol=args.lambda_tol, value_iteration_tol=args.vi_tol,
                           k_max_initial=args.k_max, k_max_cap=max(args.k_max_cap, args.k_max))


def _summary(**items) -> None:
    width = max(map(len, items))
    for k, v in items.items():
        if not isinstance(v, str):
            v = export.fmt(v)
        print(f"{k:<{width}}  {v}")


def _eq_summary(res) -> None:
    _summary(thresholds=export.thresholds_field(res.profile), **{"lambda": res.lam}, M0=res.M0, tau=res.tau,
             welfare=res.welfare.per_round, crashed=res.crashed)


# ---------------------------------------------------------------- commands

def cmd_equilibrium(args) -> int:
    pop = load_population(args.config)
    res = find_equilibrium(pop, args.money, args.altruists, _tolerances(args))
    if args.out:
        export.atomic_write(args.out, export.equilibrium_csv(res))
    if args.dist_out:
        export.atomic_write(args.dist_out, export.distribution_csv(res.solution.aggregate))
    if args.per_type_out:
        export.atomic_write(args.per_type_out, export.per_type_csv(res.solution.per_type()))
    _eq_summary(res)
    return 0


def cmd_crash(args) -> int:
    pop = load_population(args.config)
    r = crash_threshold(pop, args.altruists, args.width, args.cap, tol=_tolerances(args))
    if args.out:
        text = export._csv(["m_lo", "m_hi", "m_crash", "status", "evaluations"],
                           [[r.bracket[0], r.bracket[1], r.m_crash, r.status, r.evaluations]])
        export.atomic_write(args.out, text)
    _summary(status=r.status, m_crash=r.m_crash, bracket=f"{export.fmt(r.bracket[0])}:{export.fmt(r.bracket[1])}",
             evaluations=r.evaluations)
    return 0


def _sweep_summary(rows, xname) -> None:
    first_crash = next((r.x for r in rows if r.crashed), None)
    alive = [r for r in rows if not r.crashed]
    best = max(alive, key=lambda r: r.welfare.per_round) if alive else None
    errors = [r for r in rows if r.error]
    _summary(rows=len(rows),
             first_crash="none" if first_crash is None else export.fmt(first_crash),
             best=f"{xname}={export.fmt(best.x)} welfare={export.fmt(best.welfare.per_round)} "
                  f"thresholds={export.thresholds_field(best.result.profile)}" if best else "none",
             errors=len(errors))
    for r in errors:
        print(f"  {xname}={export.fmt(r.x)}: {r.error}")


def cmd_sweep_money(args) -> int:
    pop = load_population(args.config)
    rows = sweep_money(pop, args.altruists, args.grid, _tolerances(args))
    if args.out:
        export.atomic_write(args.out, export.sweep_csv(rows, "m"))
    _sweep_summary(rows, "m")
    return 0


def cmd_sweep_altruists(args) -> int:
    pop = load_population(args.config)
    rows = sweep_altruists(pop, args.money, args.grid, _tolerances(args))
    if args.out:
        export.atomic_write(args.out, export.sweep_csv(rows, "a"))
    _sweep_summary(rows, "a")
    return 0


def cmd_sweep_hoarders(args) -> int:
    pop = load_population(args.config)
    rows = sweep_hoarders(pop, args.money, args.grid, args.altruists, _tolerances(args))
    if args.out:
        export.atomic_write(args.out, export.sweep_csv(rows, "fH", with_utility=True))
    _sweep_summary(rows, "fH")
    return 0


def _sidecar(path: str) -> str:
    root, ext = os.path.splitext(path)
    return root + ".json" if ext.lower() != ".json" else path + ".meta.json"


def cmd_simulate(args) -> int:
    pop = load_population(args.config)
    eq = None
    thresholds = args.thresholds
    if thresholds is None:
        eq = find_equilibrium(pop, args.money, 0.0, _tolerances(args))
        if any(k == INFINITE for k in eq.profile):
            raise ConfigError("equilibrium has unbounded thresholds; pass --thresholds")
        thresholds = eq.profile
    cfg = SimConfig(pop, thresholds, args.money, rounds=args.rounds, burn_in=args.burn_in, seed=args.seed,
                    record_interval=args.record_interval, hoarders_request=not args.hoarders_silent)
    res = run_simulation(cfg)
    try:
        from .maxent import build_distribution
        pred = build_distribution(pop, cfg.thresholds, args.money, args.lambda_tol)
        l2 = compare_to_prediction(res, pred)
    except ScripError:
        l2 = math.nan
    if args.out:
        export.atomic_write(args.out, export.distribution_csv(res.distribution))
        meta = res.metadata()
        meta.update(thresholds=list(cfg.thresholds), m=args.money, l2_to_prediction=l2, config=os.path.basename(args.config))
        export.atomic_write(_sidecar(args.out), export.dumps(meta))
    _summary(thresholds=export.thresholds_field(cfg.thresholds), M0=res.distribution[0],
             welfare=res.welfare_rate, a_hat=res.a_hat, l2_to_prediction=l2, samples=res.samples, seed=res.seed)
    return 0


def cmd_infer(args) -> int:
    M = export.read_distribution_csv(args.dist)
    noisy = args.noisy
    sample_size = args.sample_size
    if noisy is None:
        noisy = sample_size is not None or os.path.exists(_sidecar(args.dist))
    if abs(M.sum() - 1) > 1e-6 and np.allclose(M, np.round(M)):
        obs = ObservedDistribution.from_counts(M)
        noisy = True if args.noisy is None else noisy
    else:
        obs = ObservedDistribution(M, sample_size=sample_size)
    exp = minimal_explanation(obs, tol=args.ratio_tol, residual_tol=args.residual_tol, noisy=noisy)
    report = exp.as_dict()
    if args.out:
        export.atomic_write(args.out, export.dumps(report))
    if args.ratios_out:
        export.atomic_write(args.ratios_out, export.ratios_csv(obs.M))
    pi = ", ".join(f"{k}: {export.fmt(v)}" for k, v in sorted(exp.pi.items()))
    _summary(support=";".join(map(str, exp.support)), pi=pi, **{"lambda": exp.lam}, residual=exp.residual,
             mode="noisy" if noisy else "exact")
    return 0


def cmd_oracle(args) -> int:
    pop = load_population(args.config)
    if len(args.thresholds) != pop.n_types:
        raise ConfigError("one threshold per type is required")
    roles, tix = realize_agents(pop)
    if np.any(roles != 0):
        raise ConfigError("the exact chain covers standard agents only")
    agents = [pop.types[i] for i in tix]
    caps = [args.thresholds[i] for i in tix]
    res = exact_chain(agents, caps, args.total_money)
    report = {
        "agents": len(agents),
        "thresholds": caps,
        "total_money": args.total_money,
        "states": res.n_states,
        "symmetry_residual": str(res.symmetry_residual),
        "uniform_stationary": res.uniform_stationary,
        "pooled_marginal": [float(x) for x in res.pooled_marginal],
    }
    if args.out:
        export.atomic_write(args.out, export.dumps(report))
    _summary(states=res.n_states, symmetry_residual=str(res.symmetry_residual),
             uniform_stationary=res.uniform_stationary)
    return 0


def _manifest_argv(entry: dict, base: str) -> list:
    argv = [entry["command"]]
    args = entry.get("args", {})
    if isinstance(args, list):
        return argv + [str(a) for a in args]
    for key, value in args.items():
        name = key.replace("-", "_")
        if name in _PATH_ARGS and isinstance(value, str) and not os.path.isabs(value):
            value = os.path.join(base, value)
        flag = "--" + key.replace("_", "-")
        if value is True:
            argv.append(flag)
        elif value is False or value is None:
            continue
        else:
            argv += [flag, str(value)]
    return argv


def run_experiment_suite(manifest_path, index_path=None) -> int:
    """Run every experiment in a manifest; one failure does not stop the rest."""
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {manifest_path}: {exc}") from exc
    entries = manifest.get("experiments", []) if isinstance(manifest, dict) else manifest
    if not isinstance(entries, list):
        raise ConfigError("manifest must list experiments")
    base = os.path.dirname(os.path.abspath(manifest_path))
    index = []
    for i, entry in enumerate(entries):
        name = entry.get("name", f"experiment-{i}") if isinstance(entry, dict) else f"experiment-{i}"
        record = {"name": name}
        try:
            if not isinstance(entry, dict) or entry.get("command") in (None, "suite"):
                raise ConfigError("each experiment needs a command other than 'suite'")
            argv = _manifest_argv(entry, base)
            record["argv"] = _manifest_argv(entry, "")
            out, err = io.StringIO(), io.StringIO()
            with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
                code = main(argv)
            record["exit_code"] = code
            record["status"] = "ok" if code == 0 else "failed"
            if code:
                record["error"] = err.getvalue().strip().splitlines()[-1] if err.getvalue().strip() else ""
        except ScripError as exc:
            record.update(exit_code=1, status="failed", error=f"{type(exc).__name__}: {exc}")
        print(f"{record['status']:<6}  {name}")
        index.append(record)
    index_path = index_path or os.path.join(base, "index.json")
    export.atomic_write(index_path, export.dumps({"experiments": index}))
    return 0


def cmd_suite(args) -> int:
    return run_experiment_suite(args.manifest, args.index)


COMMANDS = {
    "equilibrium": cmd_equilibrium,
    "crash": cmd_crash,
    "sweep-money": cmd_sweep_money,
    "sweep-altruists": cmd_sweep_altruists,
    "sweep-hoarders": cmd_sweep_hoarders,
    "simulate": cmd_simulate,
    "infer": cmd_infer,
    "oracle": cmd_oracle,
    "suite": cmd_suite,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the offending flag
        return 2 if exc.code else 0
    try:
        return COMMANDS[args.command](args)
    except ScripError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def parse_and_dispatch(argv=None) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
