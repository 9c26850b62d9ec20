"""Command-line interface: single runs, sweeps, and the shipped experiments.

Configuration files are plain ``key = value`` text; ``#`` starts a comment,
blank lines are ignored, list values are comma-separated.  Recognized keys
(defaults in parentheses):

    algorithm        ksa | entksa-k1 | entksa-kq        (entksa-k1)
    objective        registry name or tab:<csv path>    (benchmark-cosh)
    n_particles      ensemble size                      (200)
    n_steps          steps per run                      (1000)
    t_max            alternative to n_steps: t_max = n_steps * epsilon
    epsilon          time step                          (0.01)
    cadence          diagnostics every this many steps  (100)
    seed             64-bit master seed                 (20260815)
    T0               initial temperature                (2.0)
    delta            success-ball radius                (0.25)
    init             kind,params e.g. uniform,1,2       (uniform,1,2)
    grid             lo,hi,n_nodes                      (-20,20,501)
    p / theta / sigma2 / k / nu / alpha                 (0.25/0.5/0.1/1/1/0.05)
    literal_algorithm1 / paper_literal_closure /
    literal_accept_noise / scale_theta                  (false)
    alphas           sweep list                         (0.025,0.05,0.1)
    particle_counts  sweep list                         (50,100,200)
    t_finals         sweep list                         (50,100)
    n_repeats        repeats per sweep cell             (50)
    out              output directory                   (entksa-out)
    threads          worker processes for sweeps        (1)

Exit codes: 0 success, 1 configuration error, 2 runtime abort,
3 acceptance-check failure (``check`` subcommand).
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import click
import numpy as np

from .cooling import CoolingParams
from .density import GridSpec, write_density_csv
from .dsmc import (
    RunResult,
    SimulationConfig,
    run_simulation,
    write_diagnostics_csv,
    write_snapshot_csv,
)
from .errors import ConfigError, DiagnosticsAbort, SimulationAbort, StepSizeError


@dataclass(frozen=True)
class ExperimentPlan:
    """A base run configuration plus sweep axes and output routing."""

    base: SimulationConfig
    alphas: Tuple[float, ...] = (0.025, 0.05, 0.1)
    particle_counts: Tuple[int, ...] = (50, 100, 200)
    t_finals: Tuple[float, ...] = (50.0, 100.0)
    n_repeats: int = 50
    out_dir: str = "entksa-out"
    threads: int = 1


# key -> parser; every recognized config key appears here
def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError("expected a boolean, got %r" % s)


def _parse_floats(s: str) -> Tuple[float, ...]:
    if not s.strip():
        return ()
    return tuple(float(tok) for tok in s.split(","))


def _parse_ints(s: str) -> Tuple[int, ...]:
    if not s.strip():
        return ()
    return tuple(int(tok) for tok in s.split(","))


_KEY_PARSERS = {
    "algorithm": str.strip,
    "objective": str.strip,
    "n_particles": int,
    "n_steps": int,
    "t_max": float,
    "epsilon": float,
    "cadence": int,
    "seed": int,
    "T0": float,
    "delta": float,
    "init": str.strip,
    "grid": str.strip,
    "p": float,
    "theta": float,
    "sigma2": float,
    "k": float,
    "nu": float,
    "alpha": float,
    "literal_algorithm1": _parse_bool,
    "paper_literal_closure": _parse_bool,
    "literal_accept_noise": _parse_bool,
    "scale_theta": _parse_bool,
    "alphas": _parse_floats,
    "particle_counts": _parse_ints,
    "t_finals": _parse_floats,
    "n_repeats": int,
    "out": str.strip,
    "threads": int,
}


def _parse_text(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d is not 'key = value': %r" % (lineno, line))
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_PARSERS:
            raise ConfigError("unknown config key %r (line %d)" % (key, lineno))
        try:
            raw[key] = _KEY_PARSERS[key](value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("bad value for key %r: %s" % (key, exc)) from None
    return raw


def _plan_from_raw(raw: dict) -> ExperimentPlan:
    raw = dict(raw)

    cooling_kwargs = {}
    for key in (
        "p",
        "theta",
        "sigma2",
        "k",
        "nu",
        "alpha",
        "epsilon",
        "literal_algorithm1",
        "paper_literal_closure",
        "scale_theta",
    ):
        if key in raw:
            cooling_kwargs[key] = raw.pop(key)
    cooling = CoolingParams(**cooling_kwargs)

    base_kwargs = {"cooling": cooling}
    if "grid" in raw:
        parts = raw.pop("grid").split(",")
        if len(parts) != 3:
            raise ConfigError("grid must be 'lo,hi,n_nodes', got %r" % ",".join(parts))
        base_kwargs["grid"] = GridSpec(float(parts[0]), float(parts[1]), int(parts[2]))
    if "init" in raw:
        parts = raw.pop("init").split(",")
        base_kwargs["init_kind"] = parts[0].strip()
        base_kwargs["init_params"] = tuple(float(tok) for tok in parts[1:])
    if "seed" in raw:
        base_kwargs["seed_master"] = raw.pop("seed")
    for src, dst in (
        ("algorithm", "algorithm"),
        ("objective", "objective"),
        ("n_particles", "n_particles"),
        ("cadence", "cadence"),
        ("T0", "T0"),
        ("delta", "delta"),
        ("literal_accept_noise", "literal_accept_noise"),
    ):
        if src in raw:
            base_kwargs[dst] = raw.pop(src)

    n_steps = raw.pop("n_steps", None)
    t_max = raw.pop("t_max", None)
    if t_max is not None:
        steps_from_t = t_max / cooling.epsilon
        rounded = int(round(steps_from_t))
        if abs(steps_from_t - rounded) > 1e-9 * max(1.0, abs(steps_from_t)):
            raise ConfigError(
                "t_max=%g is not a whole number of epsilon=%g steps"
                % (t_max, cooling.epsilon)
            )
        if n_steps is not None and n_steps != rounded:
            raise ConfigError(
                "n_steps=%d conflicts with t_max=%g at epsilon=%g"
                % (n_steps, t_max, cooling.epsilon)
            )
        n_steps = rounded
    if n_steps is not None:
        base_kwargs["n_steps"] = n_steps

    plan_kwargs = {}
    for key in ("alphas", "particle_counts", "t_finals", "n_repeats", "threads"):
        if key in raw:
            plan_kwargs[key] = raw.pop(key)
    if "out" in raw:
        plan_kwargs["out_dir"] = raw.pop("out")

    if raw:
        raise ConfigError("unused config keys: %s" % ", ".join(sorted(raw)))

    base = SimulationConfig(**base_kwargs)
    if base.n_steps % base.cadence != 0:
        # SimulationConfig already validates; this is unreachable, kept for
        # a clearer message if defaults ever drift
        raise ConfigError("cadence must divide n_steps")
    return ExperimentPlan(base=base, **plan_kwargs)


def parse_config(path: Optional[str]) -> ExperimentPlan:
    """Parse a key-value config file into an ExperimentPlan.

    A missing path yields the all-defaults plan (algorithm entksa-k1 on the
    shipped benchmark).
    """
    if path is None:
        return _plan_from_raw({})
    if not os.path.exists(path):
        raise ConfigError("config file not found: %r" % path)
    with open(path) as fh:
        return _plan_from_raw(_parse_text(fh.read()))


# ---------------------------------------------------------------------------
# output layout
# ---------------------------------------------------------------------------

def _variant_name(cfg: SimulationConfig) -> str:
    return "%s_N%d_a%g_T%g_r%d" % (
        cfg.algorithm,
        cfg.n_particles,
        cfg.cooling.alpha,
        cfg.t_max,
        cfg.seed_run,
    )


def _write_run(result: RunResult, out_dir: str, name: str) -> dict:
    variant_dir = os.path.join(out_dir, name)
    os.makedirs(variant_dir, exist_ok=True)
    write_diagnostics_csv(result.diagnostics, os.path.join(variant_dir, "diagnostics.csv"))
    write_snapshot_csv(result, os.path.join(variant_dir, "final_snapshot.csv"))
    summary = dict(result.summary)
    summary["checkpoint_success"] = {
        format(t, "g"): v for t, v in sorted(result.checkpoint_success.items())
    }
    with open(os.path.join(variant_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return {
        "name": name,
        "dir": name,
        "algorithm": result.config.algorithm,
        "n_particles": result.config.n_particles,
        "alpha": result.config.cooling.alpha,
        "epsilon": result.config.epsilon,
        "t_max": result.config.t_max,
        "seed_master": result.config.seed_master,
        "seed_run": result.config.seed_run,
    }


def _run_variant(args) -> Tuple[dict, dict, dict]:
    """Worker: run one config and write its directory (process-pool safe)."""
    cfg, out_dir = args
    result = run_simulation(cfg)
    entry = _write_run(result, out_dir, _variant_name(cfg))
    return entry, dict(result.summary), dict(result.checkpoint_success)


def _execute_variants(configs: List[SimulationConfig], out_dir: str, threads: int):
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(cfg, out_dir) for cfg in configs]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(_run_variant, jobs))
    else:
        outcomes = [_run_variant(job) for job in jobs]
    manifest = {
        "variants": sorted((entry for entry, _, _ in outcomes), key=lambda e: e["name"])
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return outcomes


# ---------------------------------------------------------------------------
# experiment drivers (also used by the acceptance battery)
# ---------------------------------------------------------------------------

def table1_configs(plan: ExperimentPlan) -> List[SimulationConfig]:
    """One config per (N, alpha, repeat): a single run to the largest T with
    success checkpoints at every requested final time (exact common-random-
    number pairing across the T axis; the repeat index is the run seed, so
    cells share draws across N and alpha too)."""
    t_big = max(plan.t_finals)
    n_steps = int(round(t_big / plan.base.epsilon))
    configs = []
    for n in plan.particle_counts:
        for alpha in plan.alphas:
            for r in range(plan.n_repeats):
                configs.append(
                    replace(
                        plan.base,
                        algorithm="entksa-k1",
                        n_particles=n,
                        n_steps=n_steps,
                        cooling=replace(plan.base.cooling, alpha=alpha),
                        seed_run=r,
                        success_checkpoints=tuple(plan.t_finals),
                    )
                )
    return configs


def run_table1(plan: ExperimentPlan, write_runs: bool = True):
    """Success-rate table over (N, alpha, T): mean plus standard error.

    Returns a dict mapping (n_particles, alpha, t_final) -> (mean, se, n).
    The standard-error column is an artifact-side addition (the source table
    reports means only).
    """
    configs = table1_configs(plan)
    if write_runs:
        outcomes = _execute_variants(configs, plan.out_dir, plan.threads)
        checkpoint_by_cfg = [chk for _, _, chk in outcomes]
    else:
        checkpoint_by_cfg = []
        for cfg in configs:
            result = run_simulation(cfg)
            checkpoint_by_cfg.append(dict(result.checkpoint_success))

    cells: Dict[Tuple[int, float, float], List[float]] = {}
    for cfg, checkpoints in zip(configs, checkpoint_by_cfg):
        for t_final, rate in checkpoints.items():
            cells.setdefault(
                (cfg.n_particles, cfg.cooling.alpha, float(t_final)), []
            ).append(rate)

    table = {}
    for key, rates in sorted(cells.items()):
        arr = np.asarray(rates)
        se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
        table[key] = (float(arr.mean()), se, len(arr))
    return table


def write_table1_csv(table, path: str):
    with open(path, "w") as fh:
        fh.write("n_particles,alpha,t_final,mean_success,std_err,n_repeats\n")
        for (n, alpha, t_final), (mean, se, count) in sorted(table.items()):
            fh.write(
                "%d,%s,%s,%s,%s,%d\n"
                % (
                    n,
                    format(alpha, ".17g"),
                    format(t_final, ".17g"),
                    format(mean, ".17g"),
                    format(se, ".17g"),
                    count,
                )
            )


def entropy_configs(plan: ExperimentPlan) -> List[SimulationConfig]:
    """EntKSA at every alpha plus the KSA baseline, same seed family."""
    configs = []
    for alpha in plan.alphas:
        configs.append(
            replace(
                plan.base,
                algorithm="entksa-k1",
                cooling=replace(plan.base.cooling, alpha=alpha),
            )
        )
    if plan.alphas:
        configs.append(replace(plan.base, algorithm="ksa"))
    return configs


def run_entropy_experiment(plan: ExperimentPlan, write_runs: bool = True):
    """Time-to-half-entropy per variant plus the cost-gap sign trajectory.

    Returns a list of per-variant summaries (algorithm, alpha, t_half,
    fraction of diagnostics rows with I_F >= 0, first sign-flip time).
    An empty alpha list yields an empty summary.
    """
    configs = entropy_configs(plan)
    summaries = []
    for cfg in configs:
        result = run_simulation(cfg)
        if write_runs:
            os.makedirs(plan.out_dir, exist_ok=True)
            _write_run(result, plan.out_dir, _variant_name(cfg))
        rows = result.diagnostics
        signs = np.asarray([r.i_F for r in rows]) >= 0.0
        flip = None
        for prev, nxt, t in zip(signs[:-1], signs[1:], [r.t for r in rows][1:]):
            if prev != nxt:
                flip = t
                break
        summaries.append(
            {
                "algorithm": cfg.algorithm,
                "alpha": cfg.cooling.alpha if cfg.algorithm != "ksa" else None,
                "time_to_half_entropy": result.summary["time_to_half_entropy"],
                "H0": result.summary["H0"],
                "gap_nonnegative_fraction": float(np.mean(signs)),
                "first_gap_sign_flip_t": flip,
            }
        )
    return summaries


def write_entropy_csv(summaries, path: str):
    with open(path, "w") as fh:
        fh.write(
            "algorithm,alpha,time_to_half_entropy,H0,"
            "gap_nonnegative_fraction,first_gap_sign_flip_t\n"
        )
        for s in summaries:
            fh.write(
                "%s,%s,%s,%s,%s,%s\n"
                % (
                    s["algorithm"],
                    "" if s["alpha"] is None else format(s["alpha"], ".17g"),
                    "" if s["time_to_half_entropy"] is None
                    else format(s["time_to_half_entropy"], ".17g"),
                    format(s["H0"], ".17g"),
                    format(s["gap_nonnegative_fraction"], ".17g"),
                    "" if s["first_gap_sign_flip_t"] is None
                    else format(s["first_gap_sign_flip_t"], ".17g"),
                )
            )


# ---------------------------------------------------------------------------
# click wiring
# ---------------------------------------------------------------------------

def _common_options(fn):
    fn = click.option("--config", "config_path", type=str, default=None,
                      help="key-value config file")(fn)
    fn = click.option("--set", "overrides", multiple=True,
                      help="override a config key: --set key=value")(fn)
    fn = click.option("--seed", type=int, default=None, help="master seed")(fn)
    fn = click.option("--out", type=str, default=None, help="output directory")(fn)
    fn = click.option("--threads", type=int, default=None,
                      help="worker processes for sweeps")(fn)
    fn = click.option("--algo", type=str, default=None,
                      help="algorithm: ksa | entksa-k1 | entksa-kq")(fn)
    return fn


def _build_plan(config_path, overrides, seed, out, threads, algo) -> ExperimentPlan:
    raw = {}
    if config_path is not None:
        if not os.path.exists(config_path):
            raise ConfigError("config file not found: %r" % config_path)
        with open(config_path) as fh:
            raw = _parse_text(fh.read())
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--set expects key=value, got %r" % item)
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in _KEY_PARSERS:
            raise ConfigError("unknown config key %r" % key)
        try:
            raw[key] = _KEY_PARSERS[key](value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("bad value for key %r: %s" % (key, exc)) from None
    if seed is not None:
        raw["seed"] = seed
    if algo is not None:
        raw["algorithm"] = algo
    if out is not None:
        raw["out"] = out
    if threads is not None:
        raw["threads"] = threads
    return _plan_from_raw(raw)


def _exit_on_errors(fn):
    """Map package exceptions onto the documented exit codes."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo("config error: %s" % exc, err=True)
            sys.exit(1)
        except (SimulationAbort, DiagnosticsAbort, StepSizeError, RuntimeError) as exc:
            click.echo("runtime abort: %s" % exc, err=True)
            sys.exit(2)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
def main():
    """Entropy-controlled kinetic simulated annealing toolbox."""


@main.command()
@_common_options
@_exit_on_errors
def run(config_path, overrides, seed, out, threads, algo):
    """Run a single variant and write its output directory."""
    plan = _build_plan(config_path, overrides, seed, out, threads, algo)
    outcomes = _execute_variants([plan.base], plan.out_dir, 1)
    entry, summary, _ = outcomes[0]
    click.echo("wrote %s" % os.path.join(plan.out_dir, entry["dir"]))
    click.echo("success_rate=%.6g" % summary["success_rate"])


@main.command()
@_common_options
@_exit_on_errors
def sweep(config_path, overrides, seed, out, threads, algo):
    """Cartesian sweep over alphas x particle_counts x repeats."""
    plan = _build_plan(config_path, overrides, seed, out, threads, algo)
    configs = []
    for n in plan.particle_counts:
        for alpha in plan.alphas:
            for r in range(plan.n_repeats):
                configs.append(
                    replace(
                        plan.base,
                        n_particles=n,
                        cooling=replace(plan.base.cooling, alpha=alpha),
                        seed_run=r,
                    )
                )
    _execute_variants(configs, plan.out_dir, plan.threads)
    click.echo("wrote %d variants under %s" % (len(configs), plan.out_dir))


@main.command()
@_common_options
@_exit_on_errors
def table1(config_path, overrides, seed, out, threads, algo):
    """Success-rate table over (N, alpha, T) with mean and standard error."""
    plan = _build_plan(config_path, overrides, seed, out, threads, algo)
    table = run_table1(plan)
    os.makedirs(plan.out_dir, exist_ok=True)
    path = os.path.join(plan.out_dir, "table1.csv")
    write_table1_csv(table, path)
    click.echo("wrote %s" % path)
    for (n, alpha, t_final), (mean, se, count) in sorted(table.items()):
        click.echo(
            "N=%-5d alpha=%-7g T=%-5g mean=%.4f se=%.4f (n=%d)"
            % (n, alpha, t_final, mean, se, count)
        )


@main.command()
@_common_options
@_exit_on_errors
def entropy(config_path, overrides, seed, out, threads, algo):
    """Entropy-decay comparison: EntKSA at each alpha vs the KSA baseline."""
    plan = _build_plan(config_path, overrides, seed, out, threads, algo)
    summaries = run_entropy_experiment(plan)
    os.makedirs(plan.out_dir, exist_ok=True)
    path = os.path.join(plan.out_dir, "entropy_summary.csv")
    write_entropy_csv(summaries, path)
    click.echo("wrote %s" % path)
    for s in summaries:
        click.echo(
            "%-10s alpha=%-8s t_half=%s"
            % (
                s["algorithm"],
                "-" if s["alpha"] is None else "%g" % s["alpha"],
                "never" if s["time_to_half_entropy"] is None
                else "%g" % s["time_to_half_entropy"],
            )
        )


@main.command("meanfield-validate")
@_common_options
@click.option("--dt", type=float, default=1e-4, help="PDE time step")
@click.option("--t-max", "t_max", type=float, default=1.0, help="final time")
@_exit_on_errors
def meanfield_validate(config_path, overrides, seed, out, threads, algo, dt, t_max):
    """Coupled PDE run on the smooth double-well with snapshot series."""
    from .density import GridDensity, normalized_density
    from .meanfield import evolve_coupled
    from .objective import make_objective

    plan = _build_plan(config_path, overrides, seed, out, threads, algo)
    obj = make_objective("double-well")
    grid = GridSpec(obj.x_lo, obj.x_hi, 501)
    nodes = grid.nodes()
    f0 = normalized_density(grid, np.exp(-0.5 * ((nodes - 1.0) / 0.3) ** 2))
    traj = evolve_coupled(
        f0,
        obj,
        plan.base.cooling,
        t_max=t_max,
        dt=dt,
        m1_0=1.0,
        record_every=max(1, int(round(t_max / dt / 100))),
        snapshot_every=10,
    )
    os.makedirs(plan.out_dir, exist_ok=True)
    for idx, (t_snap, density) in enumerate(traj.snapshots):
        write_density_csv(
            density, os.path.join(plan.out_dir, "pde_snapshot_%04d.csv" % idx)
        )
    with open(os.path.join(plan.out_dir, "pde_trajectory.csv"), "w") as fh:
        fh.write("t,H,m_1,lambda,I_F,I_H\n")
        for i in range(len(traj.times)):
            fh.write(
                ",".join(
                    format(v, ".17g")
                    for v in (
                        traj.times[i],
                        traj.H[i],
                        traj.m_k[i],
                        traj.lam[i],
                        traj.i_F[i],
                        traj.i_H[i],
                    )
                )
                + "\n"
            )
    click.echo(
        "wrote %d snapshots and pde_trajectory.csv under %s"
        % (len(traj.snapshots), plan.out_dir)
    )


@main.command()
@click.option("--criteria", type=str, default=None,
              help="comma-separated criterion numbers to run (default: all)")
@click.option("--out", type=str, default=None, help="scratch directory")
def check(criteria, out):
    """Run the acceptance battery; exits 3 if any criterion fails."""
    from .acceptance import run_criteria

    wanted = None
    if criteria:
        try:
            wanted = tuple(int(tok) for tok in criteria.split(","))
        except ValueError:
            click.echo("config error: --criteria expects integers", err=True)
            sys.exit(1)
    try:
        results = run_criteria(wanted, scratch_dir=out)
    except ConfigError as exc:
        click.echo("config error: %s" % exc, err=True)
        sys.exit(1)
    except (SimulationAbort, DiagnosticsAbort, StepSizeError, RuntimeError) as exc:
        click.echo("runtime abort: %s" % exc, err=True)
        sys.exit(2)
    failed = False
    for res in results:
        click.echo("%s — criterion %d: %s" % ("PASS" if res.passed else "FAIL",
                                              res.number, res.detail))
        failed = failed or not res.passed
    sys.exit(3 if failed else 0)


if __name__ == "__main__":
    main()
