"""``circspace`` command-line interface.

Subcommands
-----------
describe   circular summary statistics and a rose histogram CSV
simulate   synthetic wrapped or projected data plus latent truth
fit        MCMC fit from a config file, written as a posterior archive
krig       predictions at target sites from an archive
eval       holdout refit and APE / CRPS scores

Exit codes are 0 (ok), 2 (invalid input or config), 3 (numerical
failure) and 4 (chains did not converge, PSRF >= 1.1).
"""

from __future__ import annotations

import functools
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import click
import numpy as np

from .circular import describe as describe_sample, rose_histogram
from .evaluation import evaluate, holdout_split
from .exceptions import (
    CircSpaceError,
    FactorizationError,
    InitializationError,
    InvalidArgumentError,
    UndefinedDirectionError,
)
from .io import (
    COORD_FORMATS,
    DIRECTION_UNITS,
    RunConfig,
    config_from_snapshot,
    fmt6,
    load_config,
    read_archive,
    read_manifest,
    read_site_origin,
    read_sites,
    read_targets,
    write_archive,
    write_csv,
    write_sites,
)
from .kriging import proj_krig, wrap_krig
from .projected import PgspParams, fit_pgsp, simulate_pgsp
from .spatial import SiteTable
from .wrapped import WgspParams, fit_wgsp, simulate_wgsp

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
EXIT_NOT_CONVERGED = 4

#: chains are declared converged when every PSRF is below this
PSRF_THRESHOLD = 1.1


class _Fail(click.ClickException):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.exit_code = code


def _guard(fn):
    """Map package errors to exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (FactorizationError, InitializationError) as exc:
            raise _Fail(f"numerical failure: {exc}", EXIT_NUMERICAL) from exc
        except (InvalidArgumentError, UndefinedDirectionError) as exc:
            raise _Fail(str(exc), EXIT_INVALID) from exc
        except CircSpaceError as exc:
            raise _Fail(str(exc), EXIT_NUMERICAL) from exc

    return wrapper


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Bayesian spatial models for circular (wind direction) data."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(levelname)s %(message)s")


_format_opt = click.option(
    "--format", "fmt", type=click.Choice(COORD_FORMATS), default="utm_m", show_default=True,
    help="Coordinate columns: UTM metres or longitude/latitude degrees.",
)
_unit_opt = click.option(
    "--direction-unit", type=click.Choice(DIRECTION_UNITS), default="deg", show_default=True,
)


# --------------------------------------------------------------------------- #
# describe
# --------------------------------------------------------------------------- #


@main.command()
@click.argument("data", type=click.Path(dir_okay=False))
@_format_opt
@_unit_opt
@click.option("--bins", default=16, show_default=True, help="Rose histogram sectors.")
@click.option("--out", "out", type=click.Path(dir_okay=False), help="Summary CSV.")
@click.option("--rose", "rose", type=click.Path(dir_okay=False), help="Rose histogram CSV.")
@_guard
def describe(data, fmt, direction_unit, bins, out, rose):
    """Circular descriptive statistics of the observed directions."""
    table = read_sites(data, format=fmt, direction_unit=direction_unit)
    s = describe_sample(table.direction)
    header = ("n", "mean_dir_rad", "median_dir_rad", "variance", "std_dev")
    row = (s.n, s.mean_dir, s.median_dir, s.variance, s.std_dev)
    click.echo("  ".join(f"{h:>14}" for h in header))
    click.echo("  ".join(f"{(v if isinstance(v, int) else fmt6(v)):>14}" for v in row))
    if out:
        write_csv(out, header, [row])
    if rose:
        hist = rose_histogram(table.direction, nbins=bins)
        write_csv(rose, ("bin_start_rad", "bin_start_deg", "count"), ((b, math.degrees(b), c) for b, c in hist))


# --------------------------------------------------------------------------- #
# simulate
# --------------------------------------------------------------------------- #

_SIM_PARAMS = {
    "wrapped": {"mu": 0.0, "sigma2": 0.15, "phi": 0.05},
    "projected": {"mu1": 1.0, "mu2": 1.0, "tau2": 1.0, "rho": 0.3, "phi": 0.05},
}


def _sim_params(model: str, pairs: Sequence[str]):
    values = dict(_SIM_PARAMS[model])
    for item in pairs:
        key, sep, text = item.partition("=")
        key = key.strip()
        if not sep or key not in values:
            raise InvalidArgumentError(
                f"--param {item!r}: expected NAME=VALUE with NAME in {sorted(values)}"
            )
        try:
            values[key] = float(text)
        except ValueError:
            raise InvalidArgumentError(f"--param {key}: cannot parse {text!r}") from None
    if model == "wrapped":
        return WgspParams(**values)
    return PgspParams(mu=(values["mu1"], values["mu2"]), tau2=values["tau2"], rho=values["rho"], phi=values["phi"])


def site_layout(layout: str, n: int, width: float, height: float, rng) -> np.ndarray:
    """Site coordinates (km) on a regular grid or uniform over the rectangle."""
    if n < 1 or not (width > 0 and height > 0):
        raise InvalidArgumentError("need n_sites >= 1 and a positive rectangle")
    if layout == "random":
        return np.column_stack([rng.uniform(0, width, n), rng.uniform(0, height, n)])
    cols = int(math.ceil(math.sqrt(n * width / height)))
    rows = int(math.ceil(n / cols))
    gx = (np.arange(cols) + 0.5) * width / cols
    gy = (np.arange(rows) + 0.5) * height / rows
    xx, yy = np.meshgrid(gx, gy)
    return np.column_stack([xx.ravel(), yy.ravel()])[:n]


@main.command()
@click.option("--model", type=click.Choice(["wrapped", "projected"]), default="wrapped", show_default=True)
@click.option("-p", "--param", "params", multiple=True, help="NAME=VALUE model parameter; repeatable.")
@click.option("--layout", type=click.Choice(["grid", "random"]), default="random", show_default=True)
@click.option("--n-sites", default=60, show_default=True)
@click.option("--width", default=300.0, show_default=True, help="Rectangle width (km).")
@click.option("--height", default=300.0, show_default=True, help="Rectangle height (km).")
@click.option("--seed", default=0, show_default=True, envvar="CIRCSPACE_SEED")
@_unit_opt
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Site CSV (x, y in metres).")
@_guard
def simulate(model, params, layout, n_sites, width, height, seed, direction_unit, out):
    """Simulate observations; latent truth goes to OUT with suffix .latent.csv."""
    p = _sim_params(model, params)
    rng = np.random.default_rng(seed)
    coords = site_layout(layout, n_sites, width, height, rng)
    if model == "wrapped":
        table, y = simulate_wgsp(coords, p, rng)
        latent_header = ("site_id", "latent")
        latent = zip(table.site_id, y)
    else:
        table, y = simulate_pgsp(coords, p, rng)
        latent_header = ("site_id", "latent_1", "latent_2")
        latent = zip(table.site_id, y[:, 0], y[:, 1])
    write_sites(out, table, direction_unit=direction_unit)
    out = Path(out)
    write_csv(out.with_name(out.stem + ".latent.csv"), latent_header, latent)
    click.echo(f"wrote {len(table)} sites to {out}")


# --------------------------------------------------------------------------- #
# fit
# --------------------------------------------------------------------------- #


def _load_run(config: str, data: Optional[str], seed: Optional[int], threads: Optional[int]) -> RunConfig:
    path = Path(config)
    if path.is_dir():
        run = config_from_snapshot(read_manifest(path)["config"])
    else:
        run = load_config(path)
    changes = {}
    if data is not None:
        changes["data"] = data
    if threads is not None:
        changes["threads"] = threads
    if seed is not None:
        changes["chain"] = replace(run.chain, seed=seed)
    if changes:
        run = replace(run, **changes)
    if not run.data:
        raise InvalidArgumentError("data: no input file given in the config or on the command line")
    return run


def _fit(run: RunConfig, table: SiteTable):
    fit = fit_wgsp if run.model == "wrapped" else fit_pgsp
    return fit(table, run.priors, run.chain, n_jobs=run.threads)


def _report_chains(post) -> bool:
    """Print PSRF and acceptance; True when every PSRF is below threshold."""
    ps = post.psrf()
    ok = True
    if ps:
        click.echo("parameter        psrf")
        for name, v in ps.items():
            flag = "" if v < PSRF_THRESHOLD else "  *"
            ok &= v < PSRF_THRESHOLD
            click.echo(f"{name:<12} {fmt6(v):>8}{flag}")
    else:
        click.echo("psrf: needs at least 2 chains")
    click.echo("acceptance rates (per chain)")
    acc = post.acceptance()
    names = [n for n in acc if not n.startswith("r[")]
    for name in names:
        click.echo(f"{name:<12} " + " ".join(f"{fmt6(v):>8}" for v in acc[name]))
    radii = [n for n in acc if n.startswith("r[")]
    if radii:
        mean_r = [float(np.mean([acc[n][c] for n in radii])) for c in range(len(post.chains))]
        click.echo(f"{'r (mean)':<12} " + " ".join(f"{fmt6(v):>8}" for v in mean_r))
    return ok


@main.command()
@click.argument("config", type=click.Path())
@click.option("--data", type=click.Path(dir_okay=False), help="Override the config's data file.")
@click.option("--out", type=click.Path(), help="Archive directory (overrides 'output').")
@click.option("--seed", type=int, help="Override the chain seed.")
@click.option("--threads", type=int, help="Parallel chains (-1 for all cores).")
@_guard
def fit(config, data, out, seed, threads):
    """Fit the configured model and write a posterior archive."""
    run = _load_run(config, data, seed, threads)
    out = out or run.output
    if not out:
        raise InvalidArgumentError("output: no archive path given in the config or with --out")
    table = read_sites(run.data, format=run.format, direction_unit=run.direction_unit)
    post = _fit(run, table)
    write_archive(post, out, run)
    click.echo(f"wrote {run.model} posterior ({post.n_draws} draws) to {out}")
    if not _report_chains(post):
        raise _Fail(f"chains not converged: PSRF >= {PSRF_THRESHOLD}", EXIT_NOT_CONVERGED)


# --------------------------------------------------------------------------- #
# krig
# --------------------------------------------------------------------------- #


def krig(post, data: Optional[SiteTable], targets: np.ndarray, seed: int = 0):
    fn = wrap_krig if post.model == "wrapped" else proj_krig
    return fn(post, data, targets, seed=seed)


@main.command("krig")
@click.argument("archive", type=click.Path(file_okay=False))
@click.argument("targets", type=click.Path(dir_okay=False))
@click.option("--data", type=click.Path(dir_okay=False), help="Observed sites; defaults to the archive's copy.")
@click.option("--model", type=click.Choice(["wrapped", "projected"]), help="Expected archive model.")
@_format_opt
@_unit_opt
@click.option("--seed", default=0, show_default=True, envvar="CIRCSPACE_SEED")
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Predictions CSV.")
@click.option("--draws-out", type=click.Path(dir_okay=False), help="Per-draw predictive samples CSV.")
@_guard
def krig_cmd(archive, targets, data, model, fmt, direction_unit, seed, out, draws_out):
    """Predict directions at TARGETS (CSV with target_id,x,y)."""
    post, run = read_archive(archive)
    if model is not None and model != post.model:
        raise InvalidArgumentError(f"archive holds a {post.model} posterior, not {model}")
    table = None
    origin = None
    if data is not None:
        table = read_sites(data, format=fmt, direction_unit=direction_unit)
        if fmt == "lonlat_deg":
            origin = read_site_origin(data)
    elif fmt == "lonlat_deg":
        if not run.data or run.format != "lonlat_deg":
            raise InvalidArgumentError("lon/lat targets need --data to fix the projection origin")
        origin = read_site_origin(run.data)
    ids, coords = read_targets(targets, format=fmt, origin=origin)
    results = krig(post, table, coords, seed=seed)
    write_csv(
        out,
        ("target_id", "direction_rad", "direction_deg", "concentration"),
        ((tid, r.direction, math.degrees(r.direction), r.concentration) for tid, r in zip(ids, results)),
    )
    if draws_out:
        rows = (
            (tid, b, float(a)) for tid, r in zip(ids, results) for b, a in enumerate(r.predictive_draws)
        )
        write_csv(draws_out, ("target_id", "draw", "direction_rad"), rows)
    click.echo(f"kriged {len(ids)} targets to {out}")


# --------------------------------------------------------------------------- #
# eval
# --------------------------------------------------------------------------- #


def run_eval(run: RunConfig, table: SiteTable, n_valid: int, split_seed: int, krig_seed: int = 0):
    """Holdout split, refit on the training part, score the held-out sites."""
    train, valid = holdout_split(table, n_valid, seed=split_seed)
    post = _fit(run, train)
    results = krig(post, train, valid.coords, seed=krig_seed)
    return evaluate(results, valid, kind=run.distance, model=run.model, split_seed=split_seed)


@main.command("eval")
@click.argument("config", type=click.Path())
@click.option("--data", type=click.Path(dir_okay=False), help="Override the data file.")
@click.option("--n-valid", default=10, show_default=True, help="Held-out sites.")
@click.option("--split-seed", default=0, show_default=True)
@click.option("--seed", type=int, help="Override the chain seed.")
@click.option("--threads", type=int)
@click.option("--out", type=click.Path(dir_okay=False), help="Per-site report CSV.")
@_guard
def eval_cmd(config, data, n_valid, split_seed, seed, threads, out):
    """Holdout evaluation. CONFIG is a config file or a posterior archive
    whose stored configuration is reused."""
    run = _load_run(config, data, seed, threads)
    table = read_sites(run.data, format=run.format, direction_unit=run.direction_unit)
    report = run_eval(run, table, n_valid, split_seed)
    click.echo(f"model {report.model}  split_seed {report.split_seed}  n_valid {n_valid}")
    click.echo(f"APE  {fmt6(report.ape)}")
    click.echo(f"CRPS {fmt6(report.crps)}")
    for note in report.notes:
        click.echo(f"note: {note}")
    if out:
        rows = [(s.site_id, s.truth, s.predicted, s.circ_error) for s in report.per_site]
        rows.append(("APE", "", "", report.ape))
        rows.append(("CRPS", "", "", report.crps))
        write_csv(out, ("site_id", "truth_rad", "predicted_rad", "circ_error"), rows)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
