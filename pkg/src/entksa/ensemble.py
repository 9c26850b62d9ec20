"""Particle/temperature ensembles and reproducible random streams.

Randomness is organized around counter-based splitting so that the draw a
particle sees is a pure function of (master seed, run id, draw kind, step,
particle index):

* one 128-bit Philox key per (master seed, run id, draw kind), derived with
  ``numpy.random.SeedSequence``;
* at step n the Philox counter is re-based to ``n * 2**64`` and the values
  for all particles are drawn as one block, so value i belongs to particle i.

Two consequences worth relying on: runs are bitwise reproducible no matter
how work is scheduled, and the first N draws of a step do not depend on the
ensemble size, so experiments sweeping N share common random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .errors import ConfigError

# draw kinds (fixed small integers; part of the documented splitting rule)
KIND_XI = 0  # Gaussian proposal noise
KIND_ACCEPT = 1  # uniform accept/reject variates
KIND_ETA = 2  # uniform temperature noise
KIND_INIT = 3  # initial particle positions


@dataclass(frozen=True)
class RunSeed:
    """Master seed plus a run (variant/repeat) index.

    Every stream in a run is derived from (master, run, kind); see the
    module docstring for the splitting rule.
    """

    master: int
    run: int = 0

    def __post_init__(self):
        if not (0 <= int(self.master) < 2**64):
            raise ConfigError("master seed must fit in 64 bits")
        if int(self.run) < 0:
            raise ConfigError("run index must be nonnegative")


_U64 = 0xFFFFFFFFFFFFFFFF


class StreamPack:
    """Per-run bundle of counter-based streams, one per draw kind."""

    def __init__(self, seed: RunSeed):
        self.seed = seed
        self._keys = {}
        self._cached = {}

    def _key(self, kind: int) -> np.ndarray:
        key = self._keys.get(kind)
        if key is None:
            ss = SeedSequence((int(self.seed.master), int(self.seed.run), kind))
            key = ss.generate_state(2, dtype=np.uint64)
            self._keys[kind] = key
        return key

    def generator(self, kind: int, step: int) -> Generator:
        """Fresh generator for (kind, step): counter re-based to step * 2**64.

        The returned generator owns its bit generator, so callers may hold
        onto it and draw later without interference from other streams.
        """
        return Generator(Philox(key=self._key(kind), counter=int(step) << 64))

    def _rebased(self, kind: int, step: int) -> Generator:
        # Hot path used by the per-step draw helpers below: re-key a cached
        # Philox instead of constructing one (draws are bitwise identical to
        # ``generator(kind, step)``, roughly 2x cheaper). The bit generator is
        # shared across calls of the same kind, hence not safe to hold onto.
        bg = self._cached.get(kind)
        if bg is None:
            bg = Philox(key=self._key(kind))
            self._cached[kind] = bg
        state = bg.state
        c = int(step) << 64
        state["state"]["counter"][:] = (
            c & _U64,
            (c >> 64) & _U64,
            (c >> 128) & _U64,
            (c >> 192) & _U64,
        )
        state["buffer_pos"] = 4  # discard buffered bits from the previous step
        bg.state = state
        return Generator(bg)

    def normals(self, step: int, n: int) -> np.ndarray:
        return self._rebased(KIND_XI, step).standard_normal(n)

    def accept_uniforms(self, step: int, n: int) -> np.ndarray:
        return self._rebased(KIND_ACCEPT, step).uniform(0.0, 1.0, n)

    def eta(self, step: int, n: int, half_width: float) -> np.ndarray:
        return sample_eta(n, half_width, self._rebased(KIND_ETA, step))


@dataclass
class ParticleEnsemble:
    """Positions of the interacting-particle system (one-dimensional)."""

    positions: np.ndarray
    streams: Optional[StreamPack] = None

    @property
    def n(self) -> int:
        return self.positions.shape[0]


def init_particles(kind: str, params, n: int, d: int, streams: StreamPack):
    """Draw the initial ensemble from the KIND_INIT stream at step 0.

    Args:
        kind: "uniform" (params = (lo, hi)), "gaussian" (params =
            (mean, std)), or "dirac" (params = (at,)).
        n: ensemble size; d: spatial dimension (the shipped solver is 1-D,
            higher d only affects the returned shape).
        streams: per-run stream pack.
    """
    if n < 1:
        raise ConfigError("ensemble size must be at least 1, got %d" % n)
    shape = n if d == 1 else (n, d)
    g = streams.generator(KIND_INIT, 0)
    if kind == "uniform":
        lo, hi = map(float, params)
        if not hi > lo:
            raise ConfigError("uniform init needs lo < hi, got (%g, %g)" % (lo, hi))
        return g.uniform(lo, hi, shape)
    if kind == "gaussian":
        mean, std = map(float, params)
        if std < 0:
            raise ConfigError("gaussian init needs std >= 0, got %g" % std)
        return mean + std * g.standard_normal(shape)
    if kind == "dirac":
        (at,) = map(float, params)
        return np.full(shape, at)
    raise ConfigError("unknown init kind %r" % kind)


def init_temperatures(T0: float, n: int) -> np.ndarray:
    """All particles start at the same temperature T0 >= 0."""
    if T0 < 0:
        raise ValueError("initial temperature must be nonnegative, got %g" % T0)
    return np.full(n, float(T0))


def sample_xi(n: int, d: int, rng: Generator) -> np.ndarray:
    """Standard Gaussian proposal noise, one row per particle."""
    return rng.standard_normal(n if d == 1 else (n, d))


def sample_eta(n: int, half_width: float, rng: Generator) -> np.ndarray:
    """Uniform temperature noise on [-a, a]; variance a^2/3."""
    if half_width < 0:
        raise ValueError("eta half-width must be nonnegative, got %g" % half_width)
    if half_width == 0.0:
        return np.zeros(n)
    return rng.uniform(-half_width, half_width, n)


def empirical_moment(temps: np.ndarray, k: float) -> float:
    """k-th empirical moment (1/N) sum T_i^k of the temperature samples."""
    t = np.asarray(temps, dtype=float)
    if k == 1.0:
        return float(np.mean(t))
    return float(np.mean(t**k))


def empirical_mean_var(values: np.ndarray):
    """Mean and biased (1/N) variance of a sample."""
    v = np.asarray(values, dtype=float)
    return float(np.mean(v)), float(np.var(v))
