"""Grid densities, histogram reconstruction, and entropy functionals.

All densities live on a uniform node grid over a closed interval and are
normalized against the trapezoidal quadrature rule.  Histograms are
node-centered: node i owns the cell [x_i - h/2, x_i + h/2] clipped to the
domain, so boundary nodes own half-width cells.  Dividing bin counts by
(N * cell width) then makes the trapezoidal mass of the raw histogram equal
to exactly 1 (up to out-of-domain spill, which is clipped into the boundary
cells and reported as a fraction).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Tuple

import numpy as np

from .errors import ConfigError
from .objective import Objective, eval_cost


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of ``n_nodes`` nodes on the closed interval [x_lo, x_hi]."""

    x_lo: float
    x_hi: float
    n_nodes: int

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ConfigError("grid needs at least 2 nodes, got %d" % self.n_nodes)
        if not self.x_hi > self.x_lo:
            raise ConfigError(
                "grid interval is empty: [%g, %g]" % (self.x_lo, self.x_hi)
            )

    @property
    def h(self) -> float:
        return (self.x_hi - self.x_lo) / (self.n_nodes - 1)

    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.n_nodes)

    def trapz_weights(self) -> np.ndarray:
        """Quadrature weights: h at interior nodes, h/2 at the two ends.

        The returned array is cached per grid and marked read-only; copy it
        before mutating.
        """
        return _cached_trapz_weights(self.x_lo, self.x_hi, self.n_nodes)


@lru_cache(maxsize=128)
def _cached_trapz_weights(x_lo: float, x_hi: float, n_nodes: int) -> np.ndarray:
    h = (x_hi - x_lo) / (n_nodes - 1)
    w = np.full(n_nodes, h)
    w[0] *= 0.5
    w[-1] *= 0.5
    w.setflags(write=False)
    return w


def trapz(grid: GridSpec, values: np.ndarray) -> float:
    """Trapezoidal integral of node values over the grid."""
    return float(grid.trapz_weights() @ np.asarray(values, dtype=float))


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative node values with unit trapezoidal mass (checked at init)."""

    grid: GridSpec
    values: np.ndarray = field(compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.shape != (self.grid.n_nodes,):
            raise ValueError(
                "values shape %s does not match grid with %d nodes"
                % (vals.shape, self.grid.n_nodes)
            )
        if np.any(vals < 0.0):
            raise ValueError("density values must be nonnegative")
        mass = trapz(self.grid, vals)
        if abs(mass - 1.0) > 1e-12:
            raise ValueError("density mass %.17g is not 1 within 1e-12" % mass)


def normalized_density(grid: GridSpec, values: np.ndarray) -> GridDensity:
    """Clip negatives at 0, divide by the trapezoidal mass, wrap up."""
    vals = np.maximum(np.asarray(values, dtype=float), 0.0)
    mass = trapz(grid, vals)
    if mass <= 0.0:
        raise ValueError("cannot normalize a zero-mass density")
    return GridDensity(grid, vals / mass)


def reconstruct_histogram(
    positions: np.ndarray, grid: GridSpec
) -> Tuple[GridDensity, float]:
    """Node-centered histogram density from particle positions.

    Particles outside [x_lo, x_hi] are counted into the nearest boundary
    cell; the fraction of such particles is returned as the spill fraction
    (callers abort diagnostics when it exceeds 1%).

    Returns:
        (density, spill_fraction)
    """
    x = np.asarray(positions, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot build a histogram from an empty ensemble")
    idx = np.floor((x - grid.x_lo) / grid.h + 0.5).astype(np.int64)
    spill = float(np.mean((idx < 0) | (idx > grid.n_nodes - 1)))
    np.clip(idx, 0, grid.n_nodes - 1, out=idx)
    counts = np.bincount(idx, minlength=grid.n_nodes).astype(float)
    # node i owns a cell of width equal to its trapezoid weight, so the raw
    # histogram already integrates to 1; normalize anyway for float hygiene
    raw = counts / (x.size * grid.trapz_weights())
    return normalized_density(grid, raw), spill


def gibbs_density(obj: Objective, D: float, grid: GridSpec) -> GridDensity:
    """Gibbs density proportional to exp(-F/D), trapezoid-normalized.

    The exponent is shifted by min F over the grid before exponentiation so
    the result is invariant (to rounding) under F -> F + const and immune to
    overflow for large |F|/D.
    """
    if not D > 0.0:
        raise ValueError("temperature D must be positive, got %g" % D)
    costs = eval_cost(obj, grid.nodes())
    return _gibbs_from_costs(costs, D, grid)


def _gibbs_from_costs(costs: np.ndarray, D: float, grid: GridSpec) -> GridDensity:
    z = np.exp(-(costs - np.min(costs)) / D)
    return normalized_density(grid, z)


def _check_same_grid(f: GridDensity, h: GridDensity):
    if f.grid != h.grid:
        raise ValueError("densities live on different grids")


def relative_entropy(f: GridDensity, h: GridDensity) -> float:
    """KL divergence H(f|h) = int f log(f/h) by trapezoidal quadrature.

    Uses the 0*log(0) = 0 convention wherever f < 1e-300, and returns +inf
    if h vanishes on a node where f does not.
    """
    _check_same_grid(f, h)
    fv, hv = f.values, h.values
    support = fv > 1e-300
    if np.any(hv[support] == 0.0):
        return float("inf")
    integrand = np.zeros_like(fv)
    integrand[support] = fv[support] * np.log(fv[support] / hv[support])
    return trapz(f.grid, integrand)


def cost_gap(obj: Objective, f: GridDensity, fq: GridDensity) -> float:
    """Signed gap int F (fq - f): positive when f overweights high-cost
    regions relative to the Gibbs target fq."""
    _check_same_grid(f, fq)
    costs = eval_cost(obj, f.grid.nodes())
    return _cost_gap_from_costs(costs, f, fq)


def _cost_gap_from_costs(
    costs: np.ndarray, f: GridDensity, fq: GridDensity
) -> float:
    return trapz(f.grid, costs * (fq.values - f.values))


def l1_distance(f: GridDensity, h: GridDensity) -> float:
    """Trapezoidal L1 distance between two densities on the same grid."""
    _check_same_grid(f, h)
    return trapz(f.grid, np.abs(f.values - h.values))


# ---------------------------------------------------------------------------
# CSV serialization (two columns, 17 significant digits -> exact round trip)
# ---------------------------------------------------------------------------

def write_density_csv(density: GridDensity, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "value"])
        for x, v in zip(density.grid.nodes(), density.values):
            writer.writerow([format(x, ".17g"), format(v, ".17g")])


def read_density_csv(path: str) -> GridDensity:
    # No renormalization on read: a file we wrote must round-trip bitwise,
    # and the GridDensity constructor already asserts unit mass.
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    xs, vals = data[:, 0], data[:, 1]
    grid = GridSpec(float(xs[0]), float(xs[-1]), len(xs))
    return GridDensity(grid, vals)
