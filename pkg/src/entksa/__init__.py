"""Entropy-controlled kinetic simulated annealing.

A gradient-free global-optimization toolbox built around a Metropolis
particle system whose temperature law carries multiplicative noise and an
entropy-feedback gain, together with the matching mean-field Fokker-Planck
solver used to validate the entropy-decay predictions.
"""

from .cooling import (
    AlphaBounds,
    CoolingParams,
    CoolingState,
    advance_moment_ode,
    alpha_bounds,
    closure_moment,
    eta_half_width,
    gamma_moment,
    gamma_qe_pdf,
    gamma_quasi_equilibrium,
    lambda_k1,
    lambda_kgt1,
    update_temperatures,
)
from .density import (
    GridDensity,
    GridSpec,
    cost_gap,
    gibbs_density,
    l1_distance,
    normalized_density,
    read_density_csv,
    reconstruct_histogram,
    relative_entropy,
    trapz,
    write_density_csv,
)
from .dsmc import (
    RunResult,
    SimulationConfig,
    StepDiagnostics,
    acceptance_probability,
    ksa_schedule,
    metropolis_chain,
    run_simulation,
    success_rate,
    write_diagnostics_csv,
    write_snapshot_csv,
)
from .ensemble import (
    ParticleEnsemble,
    RunSeed,
    StreamPack,
    empirical_mean_var,
    empirical_moment,
    init_particles,
    init_temperatures,
    sample_eta,
    sample_xi,
)
from .errors import ConfigError, DiagnosticsAbort, SimulationAbort, StepSizeError
from .meanfield import (
    MeanFieldState,
    MeanFieldTrajectory,
    entropy_balance_residual,
    evolve_coupled,
    fisher_information,
    fp_step,
)
from .objective import (
    OBJECTIVES,
    Objective,
    eval_cost,
    eval_drift,
    locate_minimizer,
    make_objective,
    sup_norm_on_grid,
    tabulated_objective,
)

__version__ = "0.1.0"
