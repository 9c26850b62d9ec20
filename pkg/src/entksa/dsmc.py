"""Interacting-particle annealer: Metropolis moves plus temperature feedback.

Three algorithms share one loop:

* ``entksa-k1`` -- per-particle temperatures; the diffusivity D is the
  empirical mean temperature m_1, the feedback gain comes from the sign of
  the cost gap I_F measured on a histogram of the ensemble, and the
  temperatures follow the gated noisy multiplicative update.
* ``entksa-kq`` -- no particle temperatures; a scalar moment m_k evolves by
  the closed moment ODE and serves directly as D.
* ``ksa``       -- classical logarithmic schedule T(t) = T0 / log(t+2).

Each step: reconstruct the histogram, form the Gibbs target at the current
D, refresh lambda from the cost-gap sign, propose x' = x + sqrt(2 nu eps D) xi,
accept with probability min(1, exp(-(F(x')-F(x))/D)) against a fresh uniform
(the ``literal_accept_noise`` switch reuses the temperature noise draw as the
accept variate instead), then advance the temperature state.  Model time
advances by eps per step.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from .cooling import (
    CoolingParams,
    CoolingState,
    advance_moment_ode,
    alpha_bounds,
    apply_temperature_update,
    effective_half_width,
    lambda_k1,
    lambda_kgt1,
)
from .density import (
    GridSpec,
    _cost_gap_from_costs,
    _gibbs_from_costs,
    relative_entropy,
    reconstruct_histogram,
)
from .ensemble import (
    RunSeed,
    StreamPack,
    empirical_mean_var,
    empirical_moment,
    init_particles,
    init_temperatures,
)
from .errors import ConfigError, DiagnosticsAbort, SimulationAbort
from .objective import Objective, eval_cost, locate_minimizer, make_objective, sup_norm_on_grid

ALGORITHMS = ("ksa", "entksa-k1", "entksa-kq")

SPILL_ABORT_FRACTION = 0.01

# diagnostics CSV column order (fixed interface)
DIAGNOSTICS_COLUMNS = (
    "t",
    "H",
    "m_k",
    "lambda",
    "I_F",
    "m_x",
    "var_x",
    "accept_rate",
    "eta_halfwidth",
    "clamps",
    "spill_fraction",
)


@dataclass(frozen=True)
class SimulationConfig:
    """Full description of one run (defaults mirror the shipped benchmark)."""

    objective: str = "benchmark-cosh"
    algorithm: str = "entksa-k1"
    n_particles: int = 200
    n_steps: int = 1000
    cooling: CoolingParams = field(default_factory=CoolingParams)
    grid: GridSpec = field(default_factory=lambda: GridSpec(-20.0, 20.0, 501))
    cadence: int = 100
    seed_master: int = 20260815
    seed_run: int = 0
    T0: float = 2.0
    init_kind: str = "uniform"
    init_params: Tuple[float, ...] = (1.0, 2.0)
    delta: float = 0.25
    literal_accept_noise: bool = False
    coupling: str = "moment"
    success_checkpoints: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                "unknown algorithm %r (choose from %s)"
                % (self.algorithm, ", ".join(ALGORITHMS))
            )
        if self.coupling not in ("moment", "per-particle"):
            raise ConfigError(
                "coupling must be 'moment' or 'per-particle', got %r"
                % (self.coupling,)
            )
        if self.coupling == "per-particle" and self.algorithm != "entksa-k1":
            raise ConfigError(
                "per-particle coupling needs per-particle temperatures; "
                "algorithm %r tracks only a scalar moment" % (self.algorithm,)
            )
        if self.n_steps < 0:
            raise ConfigError("n_steps must be >= 0, got %d" % self.n_steps)
        if self.cadence < 1:
            raise ConfigError("cadence must be >= 1, got %d" % self.cadence)
        if self.n_steps % self.cadence != 0:
            raise ConfigError(
                "cadence %d must divide n_steps %d" % (self.cadence, self.n_steps)
            )
        if self.n_particles < 1:
            raise ConfigError("n_particles must be >= 1")
        if self.T0 < 0:
            raise ConfigError("T0 must be nonnegative, got %g" % self.T0)
        if not self.delta > 0:
            raise ConfigError("delta must be positive, got %g" % self.delta)

    @property
    def epsilon(self) -> float:
        return self.cooling.epsilon

    @property
    def t_max(self) -> float:
        return self.n_steps * self.epsilon


@dataclass(frozen=True)
class StepDiagnostics:
    """One diagnostics row: ensemble state at time t plus the statistics of
    the step that produced it (zeros for the t = 0 row)."""

    t: float
    H: float
    m_k: float
    lam: float
    i_F: float
    m_x: float
    var_x: float
    accept_rate: float
    eta_halfwidth: float
    clamps: int
    spill_fraction: float

    def as_row(self) -> tuple:
        return (
            self.t,
            self.H,
            self.m_k,
            self.lam,
            self.i_F,
            self.m_x,
            self.var_x,
            self.accept_rate,
            self.eta_halfwidth,
            self.clamps,
            self.spill_fraction,
        )


def acceptance_probability(obj: Objective, x, x_new, D: float):
    """Metropolis factor min(1, exp(-(F(x_new) - F(x))/D)), vectorized."""
    if not D > 0.0:
        raise ValueError("temperature D must be positive, got %g" % D)
    delta = (np.asarray(eval_cost(obj, x_new)) - np.asarray(eval_cost(obj, x))) / D
    out = np.exp(np.minimum(0.0, -delta))
    return float(out) if out.ndim == 0 else out


def success_rate(positions: np.ndarray, x_star: float, delta: float = 0.25) -> float:
    """Fraction of particles strictly inside the delta-ball around x_star."""
    x = np.asarray(positions, dtype=float)
    return float(np.count_nonzero(np.abs(x - x_star) < delta) / x.size)


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

@dataclass
class RunState:
    """Mutable per-run bookkeeping shared by the step functions."""

    cooling: CoolingState
    step: int = 0
    costs: Optional[np.ndarray] = None  # cached F(positions)
    grid_costs: Optional[np.ndarray] = None  # cached F on histogram grid nodes
    last_lam: float = 0.0
    last_accept_rate: float = 0.0
    last_halfwidth: float = 0.0
    last_spill: float = 0.0


def _ensure_cost_caches(obj, positions, grid, state: RunState):
    if state.grid_costs is None:
        state.grid_costs = eval_cost(obj, grid.nodes())
    if state.costs is None:
        state.costs = eval_cost(obj, positions)


def _gap_and_histogram(positions, grid, grid_costs, D):
    f_hat, spill = reconstruct_histogram(positions, grid)
    if spill > SPILL_ABORT_FRACTION:
        raise DiagnosticsAbort(
            "histogram spill fraction %.4f exceeds %.2f%%"
            % (spill, 100 * SPILL_ABORT_FRACTION)
        )
    fq = _gibbs_from_costs(grid_costs, max(D, 1e-300), grid)
    i_F = _cost_gap_from_costs(grid_costs, f_hat, fq)
    return f_hat, fq, i_F, spill


def _metropolis_sweep(obj, positions, costs, D, cfg, streams, step, accept_u):
    """Propose/accept one sweep; returns (positions, costs, accepted count).

    D may be a scalar (moment coupling) or a per-particle array (each
    particle proposes and accepts at its own temperature); a particle at
    D = 0 proposes a zero step, which is a bitwise no-op.
    """
    n = positions.shape[0]
    scale = np.sqrt(2.0 * cfg.cooling.nu * cfg.epsilon * np.maximum(D, 0.0))
    proposals = positions + scale * streams.normals(step, n)
    new_costs = eval_cost(obj, proposals)
    log_b = np.minimum(0.0, -(new_costs - costs) / np.maximum(D, 1e-300))
    accept = accept_u < np.exp(log_b)
    positions = np.where(accept, proposals, positions)
    costs = np.where(accept, new_costs, costs)
    return positions, costs, int(np.count_nonzero(accept))


def entksa_step_k1(ensemble_positions, temps, state: RunState, cfg, obj, streams):
    """One step of the k = 1 algorithm.

    Order within the step: (i) histogram / cost gap / lambda refresh at the
    current state, (ii) Metropolis sweep at D = m_1, (iii) temperature
    update, all drawing from the streams indexed by the current step.
    """
    params = cfg.cooling
    m1 = empirical_moment(temps, 1.0)
    _, _, i_F, spill = _gap_and_histogram(
        ensemble_positions, cfg.grid, state.grid_costs, m1
    )
    t_feedback = float(state.step) if params.literal_algorithm1 else state.cooling.t
    lam, clamped = lambda_k1(
        m1, state.cooling.H0, state.cooling.supF, params.alpha, t_feedback, i_F
    )
    a_eff = effective_half_width(lam, params)
    eta = streams.eta(state.step, temps.shape[0], a_eff)
    if cfg.literal_accept_noise:
        accept_u = eta
    else:
        accept_u = streams.accept_uniforms(state.step, temps.shape[0])
    D = temps if cfg.coupling == "per-particle" else m1
    positions, costs, n_acc = _metropolis_sweep(
        obj, ensemble_positions, state.costs, D, cfg, streams, state.step, accept_u
    )
    temps = apply_temperature_update(temps, lam, params, eta)
    state.costs = costs
    state.cooling = replace(
        state.cooling,
        m_k=empirical_moment(temps, 1.0),
        lam=lam,
        t=(state.step + 1) * cfg.epsilon,  # exact model time, no drift
        clamp_count=state.cooling.clamp_count + int(clamped),
    )
    state.step += 1
    state.last_lam = lam
    state.last_accept_rate = n_acc / temps.shape[0]
    state.last_halfwidth = a_eff
    state.last_spill = spill
    return positions, temps


def entksa_step_kq(ensemble_positions, state: RunState, cfg, obj, streams):
    """One step of the k > 1 algorithm: scalar moment m_k serves as D."""
    params = cfg.cooling
    mk = state.cooling.m_k
    D = mk  # the scalar moment doubles as the Metropolis temperature
    _, _, i_F, spill = _gap_and_histogram(
        ensemble_positions, cfg.grid, state.grid_costs, D
    )
    t_feedback = float(state.step) if params.literal_algorithm1 else state.cooling.t
    lam, clamped = lambda_kgt1(
        mk,
        state.cooling.H0,
        state.cooling.supF,
        params.alpha,
        params.k,
        params.p,
        params.sigma2,
        t_feedback,
        i_F,
    )
    n = ensemble_positions.shape[0]
    if cfg.literal_accept_noise:
        accept_u = streams.eta(state.step, n, effective_half_width(lam, params))
    else:
        accept_u = streams.accept_uniforms(state.step, n)
    positions, costs, n_acc = _metropolis_sweep(
        obj, ensemble_positions, state.costs, D, cfg, streams, state.step, accept_u
    )
    state.costs = costs
    state.cooling = advance_moment_ode(state.cooling, lam, cfg.epsilon)
    state.cooling = replace(
        state.cooling,
        t=(state.step + 1) * cfg.epsilon,  # exact model time, no drift
        clamp_count=state.cooling.clamp_count + int(clamped),
    )
    state.step += 1
    state.last_lam = lam
    state.last_accept_rate = n_acc / n
    state.last_halfwidth = 0.0  # no per-particle temperature noise in kq mode
    state.last_spill = spill
    return positions


def ksa_schedule(T0: float, t: float) -> float:
    """Classical logarithmic cooling T(t) = T0 / log(t + 2)."""
    return T0 / math.log(t + 2.0)


def ksa_step(ensemble_positions, state: RunState, cfg, obj, streams):
    """One step of the log-schedule baseline (no feedback)."""
    D = ksa_schedule(cfg.T0, state.cooling.t)
    n = ensemble_positions.shape[0]
    accept_u = streams.accept_uniforms(state.step, n)
    positions, costs, n_acc = _metropolis_sweep(
        obj, ensemble_positions, state.costs, D, cfg, streams, state.step, accept_u
    )
    state.costs = costs
    t_next = (state.step + 1) * cfg.epsilon
    state.cooling = replace(
        state.cooling, m_k=ksa_schedule(cfg.T0, t_next), lam=0.0, t=t_next
    )
    state.step += 1
    state.last_lam = 0.0
    state.last_accept_rate = n_acc / n
    state.last_halfwidth = 0.0
    state.last_spill = 0.0
    return positions


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    config: SimulationConfig
    diagnostics: List[StepDiagnostics]
    final_positions: np.ndarray
    final_temps: Optional[np.ndarray]
    x_star: float
    summary: dict
    checkpoint_success: dict


def _state_row(positions, temps, state: RunState, cfg, want_entropy=True):
    """Diagnostics row for the current state (post-step statistics attached)."""
    if temps is not None:
        m_k = empirical_moment(temps, 1.0)
        D = m_k
    else:
        m_k = state.cooling.m_k
        D = max(m_k, 1e-300)
    f_hat, fq, i_F, spill = _gap_and_histogram(
        positions, cfg.grid, state.grid_costs, D
    )
    H = relative_entropy(f_hat, fq) if want_entropy else float("nan")
    m_x, var_x = empirical_mean_var(positions)
    return StepDiagnostics(
        t=state.cooling.t,
        H=H,
        m_k=m_k,
        lam=state.last_lam,
        i_F=i_F,
        m_x=m_x,
        var_x=var_x,
        accept_rate=state.last_accept_rate,
        eta_halfwidth=state.last_halfwidth,
        clamps=state.cooling.clamp_count,
        spill_fraction=spill,
    )


def run_simulation(cfg: SimulationConfig) -> RunResult:
    """Execute one full run and collect diagnostics.

    Emits a diagnostics row for the initial state (t = 0) and after every
    ``cadence`` steps.  Component errors abort the run with the last
    completed step attached to the exception.
    """
    obj = make_objective(cfg.objective) if isinstance(cfg.objective, str) else cfg.objective
    params = cfg.cooling
    streams = StreamPack(RunSeed(cfg.seed_master, cfg.seed_run))

    positions = init_particles(cfg.init_kind, cfg.init_params, cfg.n_particles, 1, streams)
    supF = sup_norm_on_grid(obj, cfg.grid)

    temps = None
    if cfg.algorithm == "entksa-k1":
        temps = init_temperatures(cfg.T0, cfg.n_particles)
        m0 = empirical_moment(temps, 1.0)
        mode = "sampled"
    elif cfg.algorithm == "entksa-kq":
        m0 = ksa_schedule(cfg.T0, 0.0)  # matches the baseline start T0/log 2
        mode = "quasi"
    else:
        m0 = ksa_schedule(cfg.T0, 0.0)
        mode = "schedule"

    state = RunState(
        cooling=CoolingState(
            mode=mode, m_k=m0, lam=0.0, H0=0.0, supF=supF, t=0.0, params=params
        )
    )
    _ensure_cost_caches(obj, positions, cfg.grid, state)

    # H0: histogram of the actual initial ensemble against the Gibbs target
    # at the initial temperature
    f0, fq0, i_F0, spill0 = _gap_and_histogram(
        positions, cfg.grid, state.grid_costs, max(m0, 1e-300)
    )
    H0 = relative_entropy(f0, fq0)
    state.cooling = replace(state.cooling, H0=H0)

    if cfg.algorithm != "ksa":
        bounds = alpha_bounds(
            "sampled" if cfg.algorithm == "entksa-k1" else "quasi",
            params.k,
            params.p,
            params.sigma2,
            H0,
            supF,
            m0,
        )
        if bounds.empty:
            warnings.warn("alpha admissibility interval is empty", RuntimeWarning)
        elif not bounds.degenerate_start and not (
            bounds.lower < params.alpha < bounds.upper
        ):
            warnings.warn(
                "alpha=%g outside admissible interval (%g, %g)"
                % (params.alpha, bounds.lower, bounds.upper),
                RuntimeWarning,
            )

    x_star = None
    checkpoints = sorted(cfg.success_checkpoints)
    checkpoint_success = {}
    if checkpoints:
        x_star = locate_minimizer(obj, cfg.grid, refine_tol=1e-4)

    rows = [_state_row(positions, temps, state, cfg)]
    wall_start = time.perf_counter()
    try:
        for n in range(cfg.n_steps):
            if cfg.algorithm == "entksa-k1":
                positions, temps = entksa_step_k1(positions, temps, state, cfg, obj, streams)
            elif cfg.algorithm == "entksa-kq":
                positions = entksa_step_kq(positions, state, cfg, obj, streams)
            else:
                positions = ksa_step(positions, state, cfg, obj, streams)
            if (n + 1) % cfg.cadence == 0:
                rows.append(_state_row(positions, temps, state, cfg))
            while checkpoints and state.cooling.t >= checkpoints[0] - 0.5 * cfg.epsilon:
                t_chk = checkpoints.pop(0)
                checkpoint_success[t_chk] = success_rate(positions, x_star, cfg.delta)
    except (DiagnosticsAbort, FloatingPointError, ValueError) as exc:
        raise SimulationAbort(
            "run aborted at step %d (t=%.6g): %s" % (state.step, state.cooling.t, exc),
            last_step=state.step,
            diagnostics=rows,
        ) from exc

    if x_star is None:
        x_star = locate_minimizer(obj, cfg.grid, refine_tol=1e-4)

    H_path = [(r.t, r.H) for r in rows if np.isfinite(r.H)]
    t_half = None
    if H_path and H0 > 0:
        for t_r, H_r in H_path:
            if H_r <= 0.5 * H0:
                t_half = t_r
                break

    summary = {
        "algorithm": cfg.algorithm,
        "objective": obj.name,
        "n_particles": cfg.n_particles,
        "n_steps": cfg.n_steps,
        "epsilon": cfg.epsilon,
        "t_max": cfg.t_max,
        "alpha": params.alpha,
        "k": params.k,
        "seed_master": cfg.seed_master,
        "seed_run": cfg.seed_run,
        "H0": H0,
        "supF": supF,
        "x_star": x_star,
        "delta": cfg.delta,
        "success_rate": success_rate(positions, x_star, cfg.delta),
        "time_to_half_entropy": t_half,
        "lambda_clamp_events": state.cooling.clamp_count,
        "final_m_k": rows[-1].m_k,
        "wall_seconds": time.perf_counter() - wall_start,
    }
    return RunResult(
        config=cfg,
        diagnostics=rows,
        final_positions=positions,
        final_temps=temps if temps is not None else None,
        x_star=x_star,
        summary=summary,
        checkpoint_success=checkpoint_success,
    )


def metropolis_chain(obj, positions, D, epsilon, n_steps, streams, nu=1.0, step0=0):
    """Frozen-temperature Metropolis chain (ergodicity/fast-path helper).

    Runs ``n_steps`` sweeps at fixed D with proposal scale sqrt(2 nu eps D);
    returns (positions, mean acceptance rate).  ``step0`` offsets the
    counter-based draws, so a run split into segments (resuming each from
    the previous positions with step0 = steps done so far) reproduces the
    one-shot run bitwise — callers use this to record occupation snapshots
    mid-chain without perturbing the stream.
    """
    if not D > 0:
        raise ValueError("temperature D must be positive, got %g" % D)
    positions = np.asarray(positions, dtype=float).copy()
    costs = eval_cost(obj, positions)
    n = positions.shape[0]
    scale = math.sqrt(2.0 * nu * epsilon * D)
    accepted = 0
    for step in range(step0, step0 + n_steps):
        proposals = positions + scale * streams.normals(step, n)
        new_costs = eval_cost(obj, proposals)
        accept = streams.accept_uniforms(step, n) < np.exp(
            np.minimum(0.0, -(new_costs - costs) / D)
        )
        np.copyto(positions, proposals, where=accept)
        np.copyto(costs, new_costs, where=accept)
        accepted += int(np.count_nonzero(accept))
    return positions, accepted / (n * max(n_steps, 1))


# ---------------------------------------------------------------------------
# CSV output (17 significant digits -> exact float round trip)
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_diagnostics_csv(rows: List[StepDiagnostics], path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAGNOSTICS_COLUMNS)
        for r in rows:
            writer.writerow([_fmt(v) for v in r.as_row()])


def write_snapshot_csv(result: RunResult, path: str):
    """Final ensemble snapshot: particle index, position, temperature.

    Algorithms without per-particle temperatures (entksa-kq, ksa) fill the
    temperature column with the scalar temperature state.
    """
    positions = result.final_positions
    temps = result.final_temps
    if temps is None:
        temps = np.full(positions.shape[0], result.diagnostics[-1].m_k)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "position", "temperature"])
        for i, (x, T) in enumerate(zip(positions, temps)):
            writer.writerow([i, _fmt(x), _fmt(T)])
