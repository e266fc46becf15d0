"""Command line interface.

Subcommands: simulate (draw a synthetic panel), fit (EM fit at a fixed
group count), select (BIC sweep over group counts), study (replicated
simulation study), quantile (cell-level quantiles from a saved fit).
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .em import EmOptions, em_fit
from .errors import ConfigError, ExtremePanelError, FitError, ParseError
from .gp_panel import em_fit_gp, extract_exceedances, select_groups_gp
from .io import (
    ModelConfig,
    _trace_block,
    read_dgp_config,
    read_fit_report,
    read_model_config,
    read_panel_csv,
    write_fit_report,
    write_panel_csv,
)
from .likelihood import GevPanelLikelihood
from .selection import select_groups
from .simulate import run_study, simulate_panel

THREADS_ENV = "EXTREME_PANEL_THREADS"


def _resolve_workers(value) -> int:
    """Worker count from --threads, the environment, or the machine."""
    if value is not None:
        workers = value
    else:
        env = os.environ.get(THREADS_ENV)
        if env is not None:
            try:
                workers = int(env)
            except ValueError:
                raise ConfigError(
                    f"{THREADS_ENV} must be an integer, got {env!r}"
                ) from None
        else:
            workers = os.cpu_count() or 1
    if workers < 1:
        raise ConfigError(f"thread count must be >= 1, got {workers}")
    return workers


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extreme-panel",
        description="Grouped panel regression for extremes.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    threads_help = f"worker processes (default: {THREADS_ENV} or all cores)"

    p_sim = sub.add_parser("simulate", help="draw a synthetic panel")
    p_sim.add_argument("--config", required=True, help="simulation design JSON")
    p_sim.add_argument("--out", required=True, help="output panel CSV")
    p_sim.add_argument("--truth", help="optional JSON with the generating truth")
    p_sim.add_argument("--seed", type=int, help="override the config seed")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="EM fit at a fixed group count")
    p_fit.add_argument("--data", required=True, help="panel CSV")
    p_fit.add_argument("--model", required=True, help="model config JSON")
    p_fit.add_argument("--groups", required=True, type=int, help="number of groups")
    p_fit.add_argument("--out", required=True, help="output report JSON")
    p_fit.add_argument("--threads", type=int, help=threads_help)
    p_fit.set_defaults(func=cmd_fit)

    p_sel = sub.add_parser("select", help="BIC sweep over group counts")
    p_sel.add_argument("--data", required=True, help="panel CSV")
    p_sel.add_argument("--model", required=True, help="model config JSON")
    p_sel.add_argument("--gmax", type=int, help="largest group count (default from config)")
    p_sel.add_argument("--out", required=True, help="output report JSON")
    p_sel.add_argument("--threads", type=int, help=threads_help)
    p_sel.set_defaults(func=cmd_select)

    p_study = sub.add_parser("study", help="replicated simulation study")
    p_study.add_argument("--config", required=True, help="simulation design JSON")
    p_study.add_argument("--reps", required=True, type=int, help="number of replications")
    p_study.add_argument("--gmax", type=int, default=6, help="largest group count (default 6)")
    p_study.add_argument("--out", required=True, help="output summary JSON")
    p_study.add_argument("--seed", type=int, help="override the config seed")
    p_study.add_argument("--restarts", type=int, default=10, help="EM restarts per fit (default 10)")
    p_study.add_argument("--threads", type=int, help=threads_help)
    p_study.set_defaults(func=cmd_study)

    p_q = sub.add_parser("quantile", help="cell-level quantiles from a saved fit")
    p_q.add_argument("--report", required=True, help="fit or sweep report JSON")
    p_q.add_argument("--data", required=True, help="panel CSV the fit used")
    level = p_q.add_mutually_exclusive_group(required=True)
    level.add_argument("--p", type=float, help="probability level in (0, 1)")
    level.add_argument("--return-period", type=float, help="return period > 1")
    p_q.set_defaults(func=cmd_quantile)

    return parser


def cmd_simulate(args) -> int:
    config = read_dgp_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    data, coefficients, assignment, true_q99 = simulate_panel(config)
    write_panel_csv(data, args.out)
    if args.truth:
        truth = {
            "assignment": assignment.labels.tolist(),
            "groups": [
                {
                    "kappa": c.kappa.tolist(),
                    "gamma": c.gamma.tolist(),
                    "delta": c.delta.tolist(),
                }
                for c in coefficients
            ],
            "true_q99": true_q99.tolist(),
        }
        with open(args.truth, "w") as handle:
            json.dump(truth, handle, indent=2)
            handle.write("\n")
    return 0


def cmd_fit(args) -> int:
    config = read_model_config(args.model)
    data = read_panel_csv(args.data, config)
    workers = _resolve_workers(args.threads)
    spec = config.link_spec(data.column_names)
    try:
        if config.mode == "gp-panel":
            panel = extract_exceedances(data, config.p0)
            fit = em_fit_gp(panel, args.groups, spec, config.em, workers=workers)
        else:
            fit = em_fit(data, args.groups, spec, config.em, workers=workers)
    except FitError as exc:
        _write_failure(args.out, exc, config)
        print(f"fit failed: {exc}", file=sys.stderr)
        return 1
    write_fit_report(fit, args.out, config=config, seed=config.em.seed)
    return 0


def cmd_select(args) -> int:
    config = read_model_config(args.model)
    data = read_panel_csv(args.data, config)
    workers = _resolve_workers(args.threads)
    g_max = args.gmax if args.gmax is not None else config.g_max
    spec = config.link_spec(data.column_names)
    if config.mode == "gp-panel":
        panel = extract_exceedances(data, config.p0)
        sweep = select_groups_gp(panel, spec, g_max, config.em, workers=workers)
    else:
        sweep = select_groups(data, spec, g_max, config.em, workers=workers)
    write_fit_report(sweep, args.out, config=config, seed=config.em.seed)
    return 0


def cmd_study(args) -> int:
    config = read_dgp_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    workers = _resolve_workers(args.threads)
    opts = EmOptions(n_restarts=args.restarts, seed=config.seed)
    summary = run_study(config, args.gmax, args.reps, opts, workers=workers)
    write_fit_report(summary, args.out, seed=config.seed)
    return 0


def cmd_quantile(args) -> int:
    report = read_fit_report(args.report)
    if report.kind == "study":
        raise ConfigError("quantile needs a fit or sweep report, not a study summary")
    if report.kind == "sweep":
        chosen = [e for e in report.sweep_entries if e[0] == report.g_star]
        if not chosen:
            raise ConfigError("sweep report has no fit at its selected group count")
        result = chosen[0][2]
    else:
        result = report.fit
    if not report.config:
        raise ConfigError("the report carries no model config; cannot resolve links")
    config = ModelConfig.from_dict(report.config)
    if config.mode == "gp-panel":
        raise ConfigError(
            "quantile applies to block-maxima fits; exceedance fits model only "
            "the excess distribution above a threshold"
        )
    data = read_panel_csv(args.data, config)
    if result.assignment.n_individuals != data.n_individuals:
        raise ConfigError(
            f"report covers {result.assignment.n_individuals} individuals, "
            f"data has {data.n_individuals}"
        )
    if args.p is not None:
        p = args.p
        if not 0.0 < p < 1.0:
            raise ConfigError(f"--p must lie strictly inside (0, 1), got {p}")
    else:
        if args.return_period <= 1.0:
            raise ConfigError(f"--return-period must exceed 1, got {args.return_period}")
        p = 1.0 - 1.0 / args.return_period

    spec = config.link_spec(data.column_names)
    lik = GevPanelLikelihood(spec)
    out = sys.stdout
    out.write("id,time,quantile\n")
    for i in range(data.n_individuals):
        group = int(result.assignment.labels[i])
        theta = lik.flatten(result.coefficients[group - 1])
        t_cells = np.flatnonzero(~data.missing[i])
        if not t_cells.size:
            continue
        obs = lik.stack(data.y[i, t_cells], data.x[i, t_cells], t_cells)
        q = lik.cell_quantile(theta, obs, p)
        for t, value in zip(t_cells, q):
            out.write(f"{data.individual_ids[i]},{data.time_labels[t]},{float(value)!r}\n")
    return 0


def _write_failure(path, exc: FitError, config) -> None:
    payload = {
        "version": __version__,
        "format": "failure",
        "error": str(exc),
        "config": config.to_dict() if config is not None else None,
        "chain_traces": [_trace_block(t) for t in exc.chain_traces],
    }
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExtremePanelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
