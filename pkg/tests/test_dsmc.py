"""Tests for the stochastic optimizers: acceptance kernel, single steps,
full runs, and the CSV emitters."""

import math
import warnings

import numpy as np
import pytest

from entksa.cooling import CoolingParams
from entksa.dsmc import (
    DIAGNOSTICS_COLUMNS,
    SimulationConfig,
    acceptance_probability,
    ksa_schedule,
    metropolis_chain,
    run_simulation,
    success_rate,
    write_diagnostics_csv,
    write_snapshot_csv,
)
from entksa.ensemble import RunSeed, StreamPack
from entksa.errors import ConfigError, SimulationAbort
from entksa.density import GridSpec
from entksa.objective import Objective, eval_cost, make_objective


def _constant_objective(level=1.0):
    return Objective(
        name="flat",
        evaluate=lambda x: np.full_like(np.asarray(x, dtype=float), level),
        x_lo=-20.0,
        x_hi=20.0,
        smooth=True,
        drift=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def _small_config(**overrides):
    base = dict(
        objective="benchmark-cosh",
        algorithm="entksa-k1",
        n_particles=64,
        n_steps=200,
        cooling=CoolingParams(alpha=0.1, epsilon=1e-2, literal_algorithm1=True),
        cadence=20,
        seed_master=101,
        seed_run=0,
        T0=2.0,
        init_kind="uniform",
        init_params=(1.0, 2.0),
        delta=0.25,
    )
    base.update(overrides)
    return SimulationConfig(**base)


# ---------------------------------------------------------------------------
# acceptance kernel
# ---------------------------------------------------------------------------


class TestAcceptanceProbability:
    def test_downhill_always_accepted(self):
        obj = make_objective("benchmark-cosh")
        # F(0) = 3.0 > F(2), so the move 0 -> 2 is downhill.
        assert acceptance_probability(obj, 0.0, 2.0, 1.0) == 1.0

    def test_uphill_tenth_at_unit_temperature(self):
        # F jumps by exactly 0.1 between the two tabulation nodes, so the
        # uphill factor is exp(-0.1) = 0.9048374180359595.
        obj = Objective(
            name="step-tenth",
            evaluate=lambda x: 3.0 + 0.1 * np.asarray(x, dtype=float),
            x_lo=0.0,
            x_hi=1.0,
        )
        p = acceptance_probability(obj, 0.0, 1.0, 1.0)
        assert p == pytest.approx(0.9048374180359595, abs=1e-12)

    def test_vectorized_shape_and_range(self):
        obj = make_objective("benchmark-cosh")
        rng = np.random.default_rng(7)
        x = rng.uniform(-5, 7, 256)
        y = rng.uniform(-5, 7, 256)
        p = acceptance_probability(obj, x, y, 0.5)
        assert p.shape == (256,)
        assert np.all((p > 0) & (p <= 1))

    def test_invalid_temperature_rejected(self):
        obj = make_objective("benchmark-cosh")
        with pytest.raises(ValueError):
            acceptance_probability(obj, 0.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            acceptance_probability(obj, 0.0, 1.0, -1.0)

    def test_detailed_balance_on_random_pairs(self):
        # B(x->y) e^{-F(x)/D} = B(y->x) e^{-F(y)/D} holds exactly in real
        # arithmetic; in doubles the two sides agree to a few ulps (measured
        # worst case 2.4e-15 over 10^4 pairs).
        obj = make_objective("benchmark-cosh")
        rng = np.random.default_rng(42)
        x = rng.uniform(-6, 8, 10_000)
        y = rng.uniform(-6, 8, 10_000)
        D = 0.7
        lhs = acceptance_probability(obj, x, y, D) * np.exp(-eval_cost(obj, x) / D)
        rhs = acceptance_probability(obj, y, x, D) * np.exp(-eval_cost(obj, y) / D)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-13, atol=0.0)


# ---------------------------------------------------------------------------
# success rate
# ---------------------------------------------------------------------------


class TestSuccessRate:
    def test_counts_strict_ball(self):
        positions = np.array([1.8, 2.2, 2.3, 1.74, 2.0])
        assert success_rate(positions, 2.0, 0.25) == pytest.approx(0.6)

    def test_boundary_excluded(self):
        assert success_rate(np.array([2.25]), 2.0, 0.25) == 0.0

    def test_all_at_minimizer(self):
        assert success_rate(np.full(10, 2.0), 2.0, 0.25) == 1.0


# ---------------------------------------------------------------------------
# configuration validation
# ---------------------------------------------------------------------------


class TestSimulationConfig:
    def test_unknown_algorithm(self):
        with pytest.raises(ConfigError):
            _small_config(algorithm="gradient-descent")

    def test_cadence_must_divide(self):
        with pytest.raises(ConfigError):
            _small_config(n_steps=100, cadence=33)

    def test_bad_coupling_value(self):
        with pytest.raises(ConfigError):
            _small_config(coupling="ensemble")

    def test_per_particle_requires_sampled_temperatures(self):
        with pytest.raises(ConfigError):
            _small_config(algorithm="entksa-kq", coupling="per-particle")

    def test_negative_steps(self):
        with pytest.raises(ConfigError):
            _small_config(n_steps=-1)

    def test_delta_positive(self):
        with pytest.raises(ConfigError):
            _small_config(delta=0.0)

    def test_t_max_product(self):
        cfg = _small_config(n_steps=400, cadence=40)
        assert cfg.t_max == pytest.approx(400 * cfg.epsilon)


# ---------------------------------------------------------------------------
# schedule baseline
# ---------------------------------------------------------------------------


class TestKsaSchedule:
    def test_start_value(self):
        # T0/log(0 + 2) = 2/log 2 = 2.8853900817779268
        assert ksa_schedule(2.0, 0.0) == pytest.approx(2.8853900817779268, abs=1e-12)

    def test_decreasing(self):
        ts = np.linspace(0.0, 50.0, 64)
        vals = [ksa_schedule(2.0, t) for t in ts]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_ksa_run_follows_schedule(self):
        cfg = _small_config(algorithm="ksa", n_steps=100, cadence=25)
        res = run_simulation(cfg)
        for row in res.diagnostics:
            assert row.m_k == pytest.approx(ksa_schedule(cfg.T0, row.t), rel=1e-12)


# ---------------------------------------------------------------------------
# k = 1 stepping
# ---------------------------------------------------------------------------


class TestK1Stepping:
    def test_zero_temperature_freezes_positions(self):
        # T0 = 0 gives m_1 = 0: zero proposal scale, so every step is a
        # bitwise no-op on the positions and temperatures stay at zero.
        cfg = _small_config(T0=0.0, n_steps=10, cadence=10)
        ref = run_simulation(_small_config(T0=0.0, n_steps=0, cadence=1))
        res = run_simulation(cfg)
        np.testing.assert_array_equal(res.final_positions, ref.final_positions)
        assert np.all(res.final_temps == 0.0)
        assert res.diagnostics[-1].accept_rate == 1.0

    def test_constant_objective_accepts_everything(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cfg = _small_config(objective=_constant_objective(), n_steps=60, cadence=10)
            res = run_simulation(cfg)
        for row in res.diagnostics[1:]:
            assert row.accept_rate == 1.0

    def test_tiny_epsilon_is_near_noop_with_full_acceptance(self):
        # The zero-step-size limit: proposals collapse onto the current
        # positions and every move is accepted (config validation excludes
        # epsilon = 0 itself, so exercise the limit).
        cfg = _small_config(
            cooling=CoolingParams(alpha=0.1, epsilon=1e-300, literal_algorithm1=True),
            n_steps=5,
            cadence=5,
        )
        ref = run_simulation(_small_config(n_steps=0, cadence=1))
        res = run_simulation(cfg)
        np.testing.assert_allclose(
            res.final_positions, ref.final_positions, rtol=0, atol=1e-140
        )
        assert res.diagnostics[-1].accept_rate == 1.0

    def test_temperatures_cool_on_benchmark(self):
        cfg = _small_config(n_steps=400, cadence=400)
        res = run_simulation(cfg)
        assert res.diagnostics[-1].m_k < res.diagnostics[0].m_k
        assert np.all(res.final_temps >= 0.0)

    def test_literal_accept_noise_changes_trajectory(self):
        res_u = run_simulation(_small_config(n_steps=100, cadence=100))
        res_n = run_simulation(
            _small_config(n_steps=100, cadence=100, literal_accept_noise=True)
        )
        assert not np.array_equal(res_u.final_positions, res_n.final_positions)

    def test_per_particle_coupling_changes_trajectory_deterministically(self):
        res_m = run_simulation(_small_config(n_steps=100, cadence=100))
        res_p1 = run_simulation(
            _small_config(n_steps=100, cadence=100, coupling="per-particle")
        )
        res_p2 = run_simulation(
            _small_config(n_steps=100, cadence=100, coupling="per-particle")
        )
        assert not np.array_equal(res_m.final_positions, res_p1.final_positions)
        np.testing.assert_array_equal(res_p1.final_positions, res_p2.final_positions)

    def test_success_checkpoints_recorded(self):
        cfg = _small_config(n_steps=200, cadence=200, success_checkpoints=(1.0, 2.0))
        res = run_simulation(cfg)
        assert sorted(res.checkpoint_success) == [1.0, 2.0]
        for v in res.checkpoint_success.values():
            assert 0.0 <= v <= 1.0

    def test_benchmark_minimizer_located(self):
        res = run_simulation(_small_config(n_steps=20, cadence=20))
        assert res.x_star == pytest.approx(2.0, abs=1e-3)


# ---------------------------------------------------------------------------
# k > 1 stepping
# ---------------------------------------------------------------------------


class TestKqStepping:
    def test_initial_moment_matches_log_schedule_start(self):
        cfg = _small_config(
            algorithm="entksa-kq",
            cooling=CoolingParams(alpha=0.1, epsilon=1e-2, k=2.0),
            n_steps=10,
            cadence=10,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_simulation(cfg)
        assert res.diagnostics[0].m_k == pytest.approx(2.8853900817779268, rel=1e-12)

    def test_noise_free_moment_decays(self):
        cfg = _small_config(
            algorithm="entksa-kq",
            cooling=CoolingParams(alpha=0.1, epsilon=1e-2, k=2.0, sigma2=0.0),
            n_steps=200,
            cadence=50,
        )
        res = run_simulation(cfg)
        ms = [row.m_k for row in res.diagnostics]
        assert all(a > b for a, b in zip(ms, ms[1:]))

    def test_snapshot_fills_scalar_temperature(self, tmp_path):
        cfg = _small_config(
            algorithm="entksa-kq",
            cooling=CoolingParams(alpha=0.1, epsilon=1e-2, k=2.0),
            n_steps=20,
            cadence=20,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = run_simulation(cfg)
        path = tmp_path / "snap.csv"
        write_snapshot_csv(res, str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "index,position,temperature"
        temps = {line.split(",")[2] for line in lines[1:]}
        assert len(temps) == 1  # scalar moment broadcast to every particle


# ---------------------------------------------------------------------------
# aborts
# ---------------------------------------------------------------------------


class TestSpillAbort:
    def test_escaping_ensemble_aborts_with_context(self):
        cfg = _small_config(
            n_particles=200,
            n_steps=2000,
            cadence=2000,
            T0=5.0,
            grid=GridSpec(0.0, 4.0, 101),
            cooling=CoolingParams(alpha=0.01, epsilon=0.1, literal_algorithm1=True),
        )
        with pytest.raises(SimulationAbort) as exc_info:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                run_simulation(cfg)
        err = exc_info.value
        assert err.last_step >= 0
        assert len(err.diagnostics) >= 1


# ---------------------------------------------------------------------------
# frozen-temperature chain
# ---------------------------------------------------------------------------


class TestMetropolisChain:
    def test_reproducible_and_rate_in_range(self):
        obj = make_objective("benchmark-cosh")
        start = np.linspace(1.0, 2.0, 500)

        def run_once():
            streams = StreamPack(RunSeed(31337, 0))
            return metropolis_chain(obj, start, 0.5, 1e-2, 200, streams)

        pos1, rate1 = run_once()
        pos2, rate2 = run_once()
        np.testing.assert_array_equal(pos1, pos2)
        assert rate1 == rate2
        assert 0.0 < rate1 <= 1.0

    def test_rejects_nonpositive_temperature(self):
        obj = make_objective("benchmark-cosh")
        streams = StreamPack(RunSeed(31337, 0))
        with pytest.raises(ValueError):
            metropolis_chain(obj, np.zeros(4), 0.0, 1e-2, 1, streams)

    def test_segmented_run_matches_one_shot(self):
        obj = make_objective("benchmark-cosh")
        start = np.linspace(0.5, 2.5, 200)
        streams = StreamPack(RunSeed(31337, 1))
        whole, rate_whole = metropolis_chain(obj, start, 0.5, 1e-2, 40, streams)

        pos = start
        done = 0
        accepted = 0.0
        for block in (7, 13, 20):
            pos, rate = metropolis_chain(
                obj, pos, 0.5, 1e-2, block, streams, step0=done
            )
            accepted += rate * block * start.shape[0]
            done += block
        np.testing.assert_array_equal(pos, whole)
        assert accepted / (done * start.shape[0]) == pytest.approx(rate_whole)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


class TestCsvOutput:
    def test_diagnostics_header_and_row_count(self, tmp_path):
        cfg = _small_config(n_steps=100, cadence=25)
        res = run_simulation(cfg)
        path = tmp_path / "diag.csv"
        write_diagnostics_csv(res.diagnostics, str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == ",".join(DIAGNOSTICS_COLUMNS)
        assert (
            lines[0]
            == "t,H,m_k,lambda,I_F,m_x,var_x,accept_rate,eta_halfwidth,clamps,spill_fraction"
        )
        assert len(lines) == 1 + (100 // 25) + 1  # header + t=0 row + 4 rows

    def test_float_round_trip(self, tmp_path):
        cfg = _small_config(n_steps=40, cadence=20)
        res = run_simulation(cfg)
        path = tmp_path / "diag.csv"
        write_diagnostics_csv(res.diagnostics, str(path))
        lines = path.read_text().strip().splitlines()
        parsed = [float(lines[2].split(",")[i]) for i in (0, 2, 5)]
        row = res.diagnostics[1]
        assert parsed[0] == row.t
        assert parsed[1] == row.m_k
        assert parsed[2] == row.m_x

    def test_byte_identical_reruns(self, tmp_path):
        cfg = _small_config(n_steps=200, cadence=20)
        paths = []
        for tag in ("one", "two"):
            res = run_simulation(cfg)
            p_diag = tmp_path / ("diag_%s.csv" % tag)
            p_snap = tmp_path / ("snap_%s.csv" % tag)
            write_diagnostics_csv(res.diagnostics, str(p_diag))
            write_snapshot_csv(res, str(p_snap))
            paths.append((p_diag, p_snap))
        assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
        assert paths[0][1].read_bytes() == paths[1][1].read_bytes()

    def test_different_run_seed_differs(self, tmp_path):
        res0 = run_simulation(_small_config(n_steps=40, cadence=40, seed_run=0))
        res1 = run_simulation(_small_config(n_steps=40, cadence=40, seed_run=1))
        p0 = tmp_path / "r0.csv"
        p1 = tmp_path / "r1.csv"
        write_diagnostics_csv(res0.diagnostics, str(p0))
        write_diagnostics_csv(res1.diagnostics, str(p1))
        assert p0.read_bytes() != p1.read_bytes()
