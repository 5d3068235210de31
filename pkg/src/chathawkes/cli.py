"""Command-line entry point: prepare, fit, simulate, analyze, validate.

Every run writes ``run_config.json`` (the fully resolved settings) into the
output directory next to its results.  Settings resolve as command-line flag,
then ``--config`` file, then built-in default.  A config file is a JSON object
with optional top-level ``seed``/``threads``/``out`` and one object per
subcommand, e.g. ``{"seed": 3, "fit": {"bootstrap": 5}}``.

Exit codes: 0 success, 2 validation failure, 3 input error, 4 numerical
failure, 5 nothing left after filtering (prepare), 6 runaway simulation.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np
from click.core import ParameterSource

from .analytics import AnalyticsError, branching_report, influence_report
from .events import (
    DEFAULT_EMOTIONS,
    EmotionSet,
    EventsFileError,
    filter_median_interval,
    filter_rate_bounds,
    map_extended_labels,
    parse_events_file,
    rate_quantile_bounds,
    summary_stats,
    write_events_file,
    write_stats_csv,
)
from .fitter import FitConfig, bootstrap_fit
from .kernels import ShapeConfig
from .likelihood import LikelihoodError
from .params import HawkesParams, dumps_json, load_params, save_params
from .simulator import MAX_EVENTS, RecoveryTolerances, SimConfig, SupercriticalError, round_trip_validate, simulate_corpus

log = logging.getLogger("chathawkes")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4
EXIT_EMPTY = 5
EXIT_SUPERCRITICAL = 6

GLOBAL_KEYS = ("seed", "threads", "out")


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _guard(fn):
    """Map library exceptions to exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CliFailure as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.code)
        except EventsFileError as exc:
            click.echo(f"input error: {exc}", err=True)
            sys.exit(EXIT_INPUT)
        except SupercriticalError as exc:
            click.echo(f"simulation aborted: {exc}", err=True)
            sys.exit(EXIT_SUPERCRITICAL)
        except (LikelihoodError, FloatingPointError, np.linalg.LinAlgError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except (OSError, KeyError, TypeError, ValueError) as exc:
            click.echo(f"input error: {exc}", err=True)
            sys.exit(EXIT_INPUT)

    return wrapper


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"input error: cannot read config {path}: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    if not isinstance(cfg, dict):
        click.echo("input error: config must be a JSON object", err=True)
        sys.exit(EXIT_INPUT)
    return cfg


def _check_config_keys(cfg: dict, commands: dict) -> None:
    for key, val in cfg.items():
        if key in GLOBAL_KEYS:
            continue
        if key not in commands or not isinstance(val, dict):
            raise click.UsageError(f"config: unknown section {key!r}")
        names = {p.name for p in commands[key].params}
        bad = sorted(set(val) - names)
        if bad:
            raise click.UsageError(f"config: unknown options for {key}: {', '.join(bad)}")


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Run seed for all random streams.")
@click.option("--threads", type=int, default=None, help="Worker threads (default: available cores).")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON config file; flags take precedence.")
@click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True,
              help="Output directory.")
@click.option("-v", "--verbose", count=True, help="Log progress (-vv for debug).")
@click.version_option(package_name="artifact")
@click.pass_context
def main(ctx, seed, threads, config_path, out, verbose):
    """Multivariate Hawkes models of emotions in live chat."""
    logging.basicConfig(
        level=logging.WARNING - 10 * min(verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    cfg = _load_config(config_path)
    try:
        _check_config_keys(cfg, main.commands)
    except click.UsageError as exc:
        click.echo(f"input error: {exc.message}", err=True)
        sys.exit(EXIT_INPUT)
    resolved = {"seed": seed, "threads": threads, "out": out}
    for key in GLOBAL_KEYS:
        if ctx.get_parameter_source(key) == ParameterSource.DEFAULT and key in cfg:
            resolved[key] = cfg[key]
    if resolved["threads"] is None:
        resolved["threads"] = os.cpu_count() or 1
    if resolved["threads"] < 1:
        raise click.BadParameter("must be >= 1", param_hint="--threads")
    ctx.obj = resolved
    ctx.default_map = {k: v for k, v in cfg.items() if k not in GLOBAL_KEYS}


def _out_dir(ctx) -> Path:
    out = Path(ctx.obj["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_config(ctx, out: Path, extra: dict | None = None) -> None:
    options = {}
    for name, value in ctx.params.items():
        options[name] = value
    record = {
        "command": ctx.info_name,
        "seed": ctx.obj["seed"],
        "threads": ctx.obj["threads"],
        "out": str(ctx.obj["out"]),
        "options": options,
    }
    if extra:
        record.update(extra)
    (out / "run_config.json").write_text(dumps_json(record), encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _emotions(text: str) -> EmotionSet:
    try:
        return EmotionSet.parse(text)
    except ValueError as exc:
        raise CliFailure(EXIT_INPUT, f"--emotions: {exc}") from None


def _shape(family: str, peak: float, median: float, c: float, eps: float) -> ShapeConfig:
    if family == "powerlaw":
        return ShapeConfig.powerlaw(c, eps)
    return ShapeConfig.from_peak_median(peak, median)


def _rates(text: str, k: int):
    vals = [float(x) for x in str(text).split(",") if x.strip()]
    if len(vals) == 1:
        return vals[0]
    if len(vals) != k:
        raise CliFailure(EXIT_INPUT, f"--subtitle-rate needs 1 or {k} values, got {len(vals)}")
    return tuple(vals)


emotions_option = click.option(
    "--emotions", default=",".join(DEFAULT_EMOTIONS), show_default=True,
    help="Comma-separated label universe, in order.",
)
extended_option = click.option(
    "--extended-labels", is_flag=True, help="Input uses the 11-label scheme; map it onto the 6 basic emotions."
)


def shape_options(fn):
    for opt in reversed([
        click.option("--shape", type=click.Choice(["lognormal", "powerlaw"]), default="lognormal",
                     show_default=True, help="Subtitle influence shape."),
        click.option("--peak", type=float, default=2 / 60, show_default=True, help="Log-normal mode (min)."),
        click.option("--median", type=float, default=10 / 60, show_default=True, help="Log-normal median (min)."),
        click.option("--c", "c", type=float, default=2.5, show_default=True, help="Power-law exponent."),
        click.option("--eps", type=float, default=1 / 60, show_default=True, help="Power-law offset (min)."),
    ]):
        fn = opt(fn)
    return fn


# ---------------------------------------------------------------------------


@main.command()
@click.argument("events", type=click.Path(dir_okay=False))
@emotions_option
@extended_option
@click.option("--strict", is_flag=True, help="Drop chat outside the first..last subtitle span.")
@click.option("--min-gap", type=float, default=1 / 60, show_default=True, help="Lower bound on median gap (min).")
@click.option("--max-gap", type=float, default=5.0, show_default=True, help="Upper bound on median gap (min).")
@click.option("--q-low", type=float, default=0.2, show_default=True, help="Lower rate quantile.")
@click.option("--q-high", type=float, default=0.8, show_default=True, help="Upper rate quantile.")
@click.option("--no-filters", is_flag=True, help="Copy sessions through unfiltered.")
@click.pass_context
@_guard
def prepare(ctx, events, emotions, extended_labels, strict, min_gap, max_gap, q_low, q_high, no_filters):
    """Filter an events file and write per-session statistics."""
    es = _emotions(emotions)
    coll = parse_events_file(events, es, strict=strict,
                             label_map=map_extended_labels if extended_labels else None)
    out = _out_dir(ctx)
    report = {"n_input": len(coll)}
    if not no_filters:
        coll = filter_median_interval(coll, min_gap, max_gap)
        report["n_after_median_gap"] = len(coll)
        if len(coll) >= 2:
            lo, hi = rate_quantile_bounds(coll, q_low, q_high)
            coll = filter_rate_bounds(coll, lo, hi)
            report["rate_bounds"] = {lab: [float(a), float(b)] for lab, a, b in zip(es, lo, hi)}
        report["n_after_rate_quantiles"] = len(coll)
    report["n_output"] = len(coll)
    write_events_file(coll, out / "events.jsonl")
    _write_text(out / "prepare_report.json", dumps_json(report))
    _write_run_config(ctx, out)
    if len(coll) == 0:
        raise CliFailure(EXIT_EMPTY, "no sessions left after filtering")
    write_stats_csv(summary_stats(coll), out / "stats.csv")
    click.echo(f"kept {len(coll)} of {report['n_input']} sessions -> {out}")


@main.command()
@click.argument("events", type=click.Path(dir_okay=False))
@click.option("--emotions", default=",".join(DEFAULT_EMOTIONS), show_default=True,
              help="Labels to model, in order; other labels in the file are ignored.")
@extended_option
@shape_options
@click.option("--bootstrap", type=int, default=10, show_default=True, help="Number of subsample replicas.")
@click.option("--frac", type=float, default=0.6, show_default=True, help="Fraction of sessions per replica.")
@click.option("--starts", type=int, default=3, show_default=True, help="Optimizer starts per fit.")
@click.option("--max-iter", type=int, default=500, show_default=True)
@click.option("--gtol", type=float, default=1e-6, show_default=True)
@click.pass_context
@_guard
def fit(ctx, events, emotions, extended_labels, shape, peak, median, c, eps, bootstrap, frac, starts,
        max_iter, gtol):
    """Fit every label by maximum likelihood on subsampled replicas."""
    es = _emotions(emotions)
    coll = parse_events_file(events, es, drop_unknown=True,
                             label_map=map_extended_labels if extended_labels else None)
    if len(coll) == 0:
        raise CliFailure(EXIT_INPUT, "events file has no sessions")
    seed, threads = ctx.obj["seed"], ctx.obj["threads"]
    config = FitConfig(max_iterations=max_iter, gtol=gtol, n_starts=starts, seed=seed)
    res = bootstrap_fit(coll, bootstrap, frac, seed, config, _shape(shape, peak, median, c, eps), threads)
    out = _out_dir(ctx)
    save_params(res.params, out / "params.json")
    _write_text(out / "fit_report.json", dumps_json(res.to_dict()))
    _write_run_config(ctx, out)
    if len(res.failed_labels) == len(es):
        raise CliFailure(EXIT_NUMERICAL, "every label failed to fit")
    for lab in res.failed_labels:
        click.echo(f"warning: {lab}: {res.errors[lab]}", err=True)
    click.echo(f"fitted {len(es)} labels on {len(coll)} sessions -> {out}")


@main.command()
@click.argument("params", type=click.Path(dir_okay=False))
@click.option("--sessions", type=int, default=50, show_default=True)
@click.option("--duration", type=float, default=120.0, show_default=True, help="Session length (min).")
@click.option("--subtitle-rate", default="1.0", show_default=True,
              help="Subtitles per minute: one value, or one per label.")
@click.option("--prefix", default="sim", show_default=True, help="Session id prefix.")
@click.option("--max-events", type=int, default=MAX_EVENTS, show_default=True,
              help="Abort a session that exceeds this many events.")
@click.pass_context
@_guard
def simulate(ctx, params, sessions, duration, subtitle_rate, prefix, max_events):
    """Draw a synthetic corpus from a params file."""
    p = load_params(params)
    sim = SimConfig(duration, ctx.obj["seed"], _rates(subtitle_rate, p.k), max_events=max_events)
    coll = simulate_corpus(p, sessions, sim, threads=ctx.obj["threads"], prefix=prefix)
    out = _out_dir(ctx)
    write_events_file(coll, out / "events.jsonl")
    _write_run_config(ctx, out)
    click.echo(f"simulated {len(coll)} sessions -> {out / 'events.jsonl'}")


def matrix_dump(params: HawkesParams) -> str:
    labels = list(params.emotion_set)
    rows = [",".join(["matrix", "target"] + labels)]
    for name in ("alpha", "nu"):
        m = getattr(params, name)
        for e, lab in enumerate(labels):
            rows.append(",".join([name, lab] + [repr(float(x)) for x in m[e]]))
    for name in ("mu0", "gamma"):
        rows.append(",".join([name, ""] + [repr(float(x)) for x in getattr(params, name)]))
    return "\n".join(rows) + "\n"


@main.command()
@click.argument("params", type=click.Path(dir_okay=False))
@click.argument("events", type=click.Path(dir_okay=False))
@click.option("--grid-step", type=float, default=None,
              help="Average ratios over a uniform time grid instead of event times.")
@click.pass_context
@_guard
def analyze(ctx, params, events, grid_step):
    """Endo/exo decomposition and branching structure of fitted params."""
    p = load_params(params)
    try:
        coll = parse_events_file(events, p.emotion_set)
    except EventsFileError as exc:
        raise CliFailure(EXIT_INPUT, f"events do not match the params' emotions "
                                     f"{list(p.emotion_set)}: {exc}") from None
    try:
        infl = influence_report(p, coll, grid_step=grid_step)
    except AnalyticsError as exc:
        raise CliFailure(EXIT_NUMERICAL, str(exc)) from None
    br = branching_report(p.alpha, labels=p.emotion_set.labels)
    out = _out_dir(ctx)
    _write_text(out / "influence.csv", infl.to_csv())
    _write_text(out / "influence_summary.json", dumps_json(infl.summary()))
    _write_text(out / "branching.json", dumps_json(br.to_dict()))
    _write_text(out / "matrices.csv", matrix_dump(p))
    _write_run_config(ctx, out)
    click.echo(f"spectral radius {br.spectral_radius:.4f} ({'sub' if br.subcritical else 'super'}critical)")


@main.command()
@click.argument("params", type=click.Path(dir_okay=False))
@click.option("--sessions", type=int, default=50, show_default=True)
@click.option("--duration", type=float, default=120.0, show_default=True)
@click.option("--subtitle-rate", default="1.0", show_default=True)
@click.option("--bootstrap", type=int, default=10, show_default=True)
@click.option("--frac", type=float, default=0.6, show_default=True)
@click.option("--quick", is_flag=True, help="Smoke run: 5 sessions of 30 min.")
@click.option("--alpha-rel", type=float, default=0.2, show_default=True)
@click.option("--alpha-abs", type=float, default=0.05, show_default=True)
@click.option("--mu0-rel", type=float, default=0.15, show_default=True)
@click.option("--nu-rel", type=float, default=0.3, show_default=True)
@click.option("--gamma-rel", type=float, default=0.5, show_default=True)
@click.pass_context
@_guard
def validate(ctx, params, sessions, duration, subtitle_rate, bootstrap, frac, quick,
             alpha_rel, alpha_abs, mu0_rel, nu_rel, gamma_rel):
    """Simulate from known params, refit, and check recovery."""
    p = load_params(params)
    if quick:
        sessions, duration = 5, 30.0
    tol = RecoveryTolerances(alpha_rel=alpha_rel, alpha_abs=alpha_abs, mu0_rel=mu0_rel,
                             nu_rel=nu_rel, gamma_rel=gamma_rel)
    seed = ctx.obj["seed"]
    rep = round_trip_validate(p, sessions, duration, FitConfig(seed=seed), seed,
                              _rates(subtitle_rate, p.k), bootstrap, frac, tol, ctx.obj["threads"])
    out = _out_dir(ctx)
    _write_text(out / "recovery.json", dumps_json(rep.to_dict()))
    lines = ["parameter,true,estimate,std,abs_error,rel_error,gated,passed"]
    for r in rep.rows:
        lines.append(f"{r.name},{r.true!r},{r.estimate!r},{r.std!r},{r.abs_error!r},{r.rel_error!r},"
                     f"{int(r.gated)},{int(r.passed)}")
    _write_text(out / "recovery.csv", "\n".join(lines) + "\n")
    _write_text(out / "fit_report.json", dumps_json(rep.fit.to_dict()))
    _write_run_config(ctx, out, {"effective": {"sessions": sessions, "duration": duration}})
    if not rep.passed:
        click.echo("recovery FAILED:", err=True)
        for r in rep.failures():
            click.echo(f"  {r.name}: true {r.true:.4g}, estimate {r.estimate:.4g} "
                       f"(rel error {r.rel_error:.3f})", err=True)
        sys.exit(EXIT_VALIDATION)
    click.echo(f"recovery passed for {sum(r.gated for r in rep.rows)} gated parameters")


if __name__ == "__main__":
    main()
