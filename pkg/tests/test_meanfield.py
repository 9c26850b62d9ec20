"""Tests for the Fokker-Planck layer: fitted flux, Fisher information,
coupled evolution, and the entropy-balance residual."""

import math
from dataclasses import replace

import numpy as np
import pytest

from entksa.cooling import CoolingParams
from entksa.density import GridDensity, GridSpec, gibbs_density, trapz
from entksa.errors import StepSizeError
from entksa.meanfield import (
    MeanFieldState,
    entropy_balance_residual,
    evolve_coupled,
    fisher_information,
    fp_step,
)
from entksa.objective import make_objective


def _gaussian_density(grid: GridSpec, mean: float, sigma: float) -> GridDensity:
    x = grid.nodes()
    vals = np.exp(-0.5 * ((x - mean) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    return GridDensity(grid, vals)


def _euler_window(obj, f0, lam, dt, k):
    """k+1 explicit steps with constant forced gain; returns states k-1..k+1."""
    st = MeanFieldState(f=f0, m_k=1.0, lam=lam, t=0.0)
    states = [st]
    for _ in range(k + 1):
        nxt = fp_step(st, obj, dt)
        nxt = replace(nxt, m_k=st.m_k * (1.0 - lam * dt), lam=lam)
        states.append(nxt)
        st = nxt
    return states[k - 1], states[k], states[k + 1]


# ---------------------------------------------------------------------------
# flux step
# ---------------------------------------------------------------------------


class TestFpStep:
    def test_gibbs_is_stationary(self):
        # The exponentially fitted flux vanishes identically on the discrete
        # Gibbs density; measured drift after 100 steps is ~1e-16 relative.
        obj = make_objective("quadratic")
        grid = GridSpec(-8.0, 8.0, 321)
        g = gibbs_density(obj, 1.0, grid)
        st = MeanFieldState(f=g, m_k=1.0, lam=0.0, t=0.0)
        for _ in range(100):
            st = fp_step(st, obj, 1e-3)
        drift = np.max(np.abs(st.f.values - g.values)) / np.max(g.values)
        assert drift < 1e-13

    def test_mass_conserved_and_positive(self):
        obj = make_objective("double-well")
        grid = GridSpec(-6.0, 6.0, 501)
        st = MeanFieldState(
            f=GridDensity(grid, np.full(501, 1.0 / 12.0)), m_k=1.0, lam=0.0, t=0.0
        )
        for _ in range(200):
            st = fp_step(st, obj, 1e-4)
        assert trapz(grid, st.f.values) == pytest.approx(1.0, abs=1e-12)
        assert st.f.values.min() >= 0.0

    def test_rejects_nonsmooth_objective(self):
        obj = make_objective("benchmark-cosh")
        grid = GridSpec(-8.0, 8.0, 161)
        st = MeanFieldState(
            f=GridDensity(grid, np.full(161, 1.0 / 16.0)), m_k=1.0, lam=0.0, t=0.0
        )
        with pytest.raises(ValueError):
            fp_step(st, obj, 1e-4)

    def test_unstable_step_raises_with_remedy(self):
        obj = make_objective("double-well")
        grid = GridSpec(-6.0, 6.0, 501)
        st = MeanFieldState(
            f=GridDensity(grid, np.full(501, 1.0 / 12.0)), m_k=1.0, lam=0.0, t=0.0
        )
        with pytest.raises(StepSizeError, match="reduce dt"):
            fp_step(st, obj, 0.1)

    def test_time_advances(self):
        obj = make_objective("quadratic")
        grid = GridSpec(-8.0, 8.0, 321)
        st = MeanFieldState(f=gibbs_density(obj, 1.0, grid), m_k=1.0, lam=0.0, t=0.5)
        assert fp_step(st, obj, 1e-3).t == pytest.approx(0.501)


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------


class TestFisherInformation:
    def test_zero_at_equilibrium(self):
        obj = make_objective("quadratic")
        grid = GridSpec(-8.0, 8.0, 321)
        g = gibbs_density(obj, 1.0, grid)
        assert fisher_information(g, g, 1.0) == 0.0

    def test_shifted_gaussian_analytic_value(self):
        # f = N(mu, 1) against fq = N(0, 1) at D = 1: the log-ratio slope is
        # the constant mu, so I_H = mu^2 (= 0.25 for mu = 0.5); central
        # differences are exact for the linear log-ratio, measured agreement
        # ~3e-13 relative.
        obj = make_objective("quadratic")
        grid = GridSpec(-10.0, 10.0, 401)
        f = _gaussian_density(grid, 0.5, 1.0)
        fq = gibbs_density(obj, 1.0, grid)
        assert fisher_information(f, fq, 1.0) == pytest.approx(0.25, rel=1e-10)

    def test_scales_linearly_in_temperature(self):
        obj = make_objective("quadratic")
        grid = GridSpec(-10.0, 10.0, 401)
        f = _gaussian_density(grid, 0.5, 1.0)
        fq = gibbs_density(obj, 1.0, grid)
        i1 = fisher_information(f, fq, 1.0)
        i3 = fisher_information(f, fq, 3.0)
        assert i3 == pytest.approx(3.0 * i1, rel=1e-12)

    def test_nonnegative_for_random_densities(self):
        obj = make_objective("quadratic")
        grid = GridSpec(-10.0, 10.0, 401)
        fq = gibbs_density(obj, 1.0, grid)
        rng = np.random.default_rng(5)
        for _ in range(10):
            raw = rng.uniform(0.1, 1.0, 401) * np.exp(
                -0.3 * np.abs(grid.nodes() - rng.uniform(-2, 2))
            )
            raw /= trapz(grid, raw)
            assert fisher_information(GridDensity(grid, raw), fq, 0.7) >= 0.0

    def test_grid_mismatch_rejected(self):
        obj = make_objective("quadratic")
        f = gibbs_density(obj, 1.0, GridSpec(-8.0, 8.0, 321))
        fq = gibbs_density(obj, 1.0, GridSpec(-8.0, 8.0, 161))
        with pytest.raises(ValueError):
            fisher_information(f, fq, 1.0)


# ---------------------------------------------------------------------------
# coupled evolution
# ---------------------------------------------------------------------------


class TestEvolveCoupled:
    def test_forced_constant_gain_decays_moment_exactly(self):
        obj = make_objective("quadratic")
        grid = GridSpec(-8.0, 8.0, 321)
        f0 = _gaussian_density(grid, 0.5, 1.0)
        dt, lam = 1e-3, 0.4
        traj = evolve_coupled(
            f0, obj, CoolingParams(alpha=0.1, epsilon=1e-2), t_max=0.1, dt=dt,
            m1_0=1.0, forced_lambda=lambda t: lam, record_every=20,
        )
        for t_rec, m_rec in zip(traj.times, traj.m_k):
            n = int(round(t_rec / dt))
            assert m_rec == pytest.approx((1.0 - lam * dt) ** n, rel=1e-12)

    def test_rejects_bad_inputs(self):
        obj = make_objective("quadratic")
        grid = GridSpec(-8.0, 8.0, 321)
        f0 = _gaussian_density(grid, 0.5, 1.0)
        params = CoolingParams(alpha=0.1, epsilon=1e-2)
        with pytest.raises(ValueError):
            evolve_coupled(f0, obj, params, t_max=0.1, dt=0.0, m1_0=1.0)
        with pytest.raises(ValueError):
            evolve_coupled(
                f0, make_objective("benchmark-cosh"), params, t_max=0.1,
                dt=1e-3, m1_0=1.0,
            )

    def test_conditional_exponential_entropy_decay(self):
        # Start concentrated in one well (low cost, so the cost gap opens
        # nonnegative); on stretches where it stays nonnegative the decay
        # rate of H must beat -0.9 alpha.  Measured max slope is ~-1.5,
        # far below the -0.09 bound at alpha = 0.1.
        obj = make_objective("double-well")
        grid = GridSpec(-6.0, 6.0, 501)
        f0 = _gaussian_density(grid, 1.0, 0.25)
        alpha = 0.1
        traj = evolve_coupled(
            f0, obj, CoolingParams(alpha=alpha, epsilon=1e-2), t_max=0.3,
            dt=1e-4, m1_0=1.0, record_every=10,
        )
        assert traj.clamp_events == 0
        slopes = np.diff(np.log(traj.H)) / np.diff(traj.times)
        mask = (traj.i_F[:-1] >= 0) & (traj.i_F[1:] >= 0) & (traj.H[:-1] > 1e-10)
        assert mask.sum() > 100
        assert np.max(slopes[mask]) <= -0.9 * alpha

    def test_snapshots_recorded_on_request(self):
        obj = make_objective("quadratic")
        grid = GridSpec(-8.0, 8.0, 161)
        f0 = _gaussian_density(grid, 0.5, 1.0)
        traj = evolve_coupled(
            f0, obj, CoolingParams(alpha=0.1, epsilon=1e-2), t_max=0.02, dt=1e-3,
            m1_0=1.0, record_every=5, snapshot_every=2,
        )
        assert len(traj.snapshots) >= 2
        t0, snap0 = traj.snapshots[0]
        assert t0 == 0.0
        assert trapz(grid, snap0.values) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# entropy balance
# ---------------------------------------------------------------------------


class TestEntropyBalanceResidual:
    def test_stationary_state_residual_vanishes(self):
        obj = make_objective("quadratic")
        grid = GridSpec(-8.0, 8.0, 321)
        g = gibbs_density(obj, 1.0, grid)
        window = tuple(
            MeanFieldState(f=g, m_k=1.0, lam=0.0, t=i * 1e-3) for i in range(3)
        )
        assert entropy_balance_residual(window, obj) <= 1e-10

    def test_ou_relaxation_residual_small(self):
        # F = x^2/2, no feedback, dt = 1e-4 on 501 nodes; measured 1.2e-5.
        obj = make_objective("quadratic")
        grid = GridSpec(-8.0, 8.0, 501)
        f0 = _gaussian_density(grid, 0.5, 1.0)
        window = _euler_window(obj, f0, 0.0, 1e-4, 100)
        assert entropy_balance_residual(window, obj) <= 1e-3

    def test_residual_halves_with_dt(self):
        obj = make_objective("quadratic")
        grid = GridSpec(-8.0, 8.0, 321)
        f0 = _gaussian_density(grid, 0.5, 1.0)
        dt0, lam = 5e-4, 0.5
        r1 = entropy_balance_residual(_euler_window(obj, f0, lam, dt0, 100), obj)
        r2 = entropy_balance_residual(_euler_window(obj, f0, lam, dt0 / 2, 200), obj)
        assert r2 < r1
        assert r1 / r2 == pytest.approx(2.0, abs=0.1)

    def test_window_must_be_uniform(self):
        obj = make_objective("quadratic")
        grid = GridSpec(-8.0, 8.0, 321)
        g = gibbs_density(obj, 1.0, grid)
        window = (
            MeanFieldState(f=g, m_k=1.0, lam=0.0, t=0.0),
            MeanFieldState(f=g, m_k=1.0, lam=0.0, t=1e-3),
            MeanFieldState(f=g, m_k=1.0, lam=0.0, t=3e-3),
        )
        with pytest.raises(ValueError):
            entropy_balance_residual(window, obj)

    def test_window_too_short(self):
        obj = make_objective("quadratic")
        grid = GridSpec(-8.0, 8.0, 321)
        g = gibbs_density(obj, 1.0, grid)
        window = (
            MeanFieldState(f=g, m_k=1.0, lam=0.0, t=0.0),
            MeanFieldState(f=g, m_k=1.0, lam=0.0, t=1e-3),
        )
        with pytest.raises(ValueError):
            entropy_balance_residual(window, obj)
