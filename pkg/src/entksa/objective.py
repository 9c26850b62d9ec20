"""Cost-function registry and minimizer/grid utilities.

A cost function ("objective") is an immutable record holding a vectorized
evaluator on a closed interval, an optional analytic drift (derivative) used
by the mean-field PDE tools, and a smoothness flag that gates drift-based
code paths.  The registry ships:

* ``benchmark-cosh`` -- the discontinuous piecewise-cosh landscape used by
  the particle experiments: ``cosh(x/4) + 3`` outside [0, 2] and
  ``cosh(x/4) - cosh(x) + 3`` on the closed interval [0, 2].  Its global
  minimizer is x* = 2 with F(x*) = cosh(1/2) - cosh(2) + 3.
* ``cosh-smooth``   -- the smooth tail ``cosh(x/4) + 3`` everywhere (handy
  for PDE smoke tests and drift checks).
* ``quadratic``     -- F(x) = x^2 / 2.
* ``double-well``   -- F(x) = (x^2 - 1)^2 / 8 on [-6, 6].

plus a loader for tabulated objectives given as two-column CSV (x, F(x))
with linear interpolation between nodes.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Objective:
    """Immutable cost function on a closed interval.

    Attributes:
        name: registry key or a descriptive label.
        evaluate: vectorized callable mapping positions to costs.
        x_lo, x_hi: closed domain of interest (used for default grids).
        drift: optional analytic derivative F'(x); only meaningful when
            ``smooth`` is true.
        smooth: whether F is continuously differentiable on the domain.
        sup_norm: cached sup-norm of F over the last grid passed to
            :func:`sup_norm_on_grid` (None until computed).
    """

    name: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    x_lo: float
    x_hi: float
    drift: Optional[Callable[[np.ndarray], np.ndarray]] = None
    smooth: bool = False
    sup_norm: Optional[float] = field(default=None, compare=False)


def eval_cost(obj: Objective, x):
    """Evaluate the cost at ``x`` (scalar or array); scalar in, float out."""
    x_arr = np.asarray(x, dtype=float)
    out = np.asarray(obj.evaluate(x_arr), dtype=float)
    if x_arr.ndim == 0:
        return float(out)
    return out


def eval_drift(obj: Objective, x):
    """Evaluate the analytic drift F'(x).

    Raises:
        ValueError: if the objective is not flagged smooth or carries no
            analytic drift callable.
    """
    if not obj.smooth or obj.drift is None:
        raise ValueError(
            "objective %r has no analytic drift (smoothness flag is off)" % obj.name
        )
    x_arr = np.asarray(x, dtype=float)
    out = np.asarray(obj.drift(x_arr), dtype=float)
    if x_arr.ndim == 0:
        return float(out)
    return out


def _grid_nodes(obj: Objective, grid) -> np.ndarray:
    """Accept a GridSpec-like object (has .nodes()), an array, or None."""
    if grid is None:
        return np.linspace(obj.x_lo, obj.x_hi, 501)
    if hasattr(grid, "nodes"):
        return grid.nodes()
    return np.asarray(grid, dtype=float)


def sup_norm_on_grid(obj: Objective, grid=None) -> float:
    """Max of |F| over the grid nodes; the value is cached on the objective."""
    nodes = _grid_nodes(obj, grid)
    val = float(np.max(np.abs(eval_cost(obj, nodes))))
    object.__setattr__(obj, "sup_norm", val)
    return val


def locate_minimizer(obj: Objective, grid=None, refine_tol: float = 1e-6) -> float:
    """Locate the global minimizer: coarse grid scan plus local refinement.

    The coarse scan takes the first (smallest-x) grid node attaining the
    minimum, then a bracketing trisection refines within the one-cell
    neighbourhood down to ``refine_tol``.  The returned point is the best of
    the refined point and the scanned node, so a refinement step can never
    report a worse cost than the scan (this matters at jump discontinuities,
    where the one-sided minimum sits exactly on a node).  Ties resolve toward
    smaller x throughout.
    """
    nodes = _grid_nodes(obj, grid)
    vals = eval_cost(obj, nodes)
    j = int(np.argmin(vals))  # first minimum -> smaller x on ties
    lo = float(nodes[max(j - 1, 0)])
    hi = float(nodes[min(j + 1, len(nodes) - 1)])
    # Trisection: the shipped objectives are quasi-convex on the one-cell
    # neighbourhood of any grid argmin, so the bracket keeps the minimizer.
    while hi - lo > refine_tol:
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if eval_cost(obj, m1) <= eval_cost(obj, m2):
            hi = m2
        else:
            lo = m1
    refined = 0.5 * (lo + hi)
    candidates = np.array(sorted([refined, float(nodes[j])]))
    return float(candidates[np.argmin(eval_cost(obj, candidates))])


# ---------------------------------------------------------------------------
# shipped objectives
# ---------------------------------------------------------------------------

def _benchmark_cosh_eval(x):
    x = np.asarray(x, dtype=float)
    tail = np.cosh(0.25 * x) + 3.0
    inside = (x >= 0.0) & (x <= 2.0)
    # the well term -cosh(x) acts only on the closed interval [0, 2]
    return np.where(inside, tail - np.cosh(x), tail)


def _make_benchmark_cosh() -> Objective:
    return Objective(
        name="benchmark-cosh",
        evaluate=_benchmark_cosh_eval,
        x_lo=-20.0,
        x_hi=20.0,
        drift=None,
        smooth=False,  # jump discontinuities at x = 0 and x = 2
    )


def _make_cosh_smooth() -> Objective:
    return Objective(
        name="cosh-smooth",
        evaluate=lambda x: np.cosh(0.25 * np.asarray(x, dtype=float)) + 3.0,
        x_lo=-20.0,
        x_hi=20.0,
        drift=lambda x: 0.25 * np.sinh(0.25 * np.asarray(x, dtype=float)),
        smooth=True,
    )


def _make_quadratic() -> Objective:
    return Objective(
        name="quadratic",
        evaluate=lambda x: 0.5 * np.asarray(x, dtype=float) ** 2,
        x_lo=-20.0,
        x_hi=20.0,
        drift=lambda x: np.asarray(x, dtype=float),
        smooth=True,
    )


def _make_double_well() -> Objective:
    return Objective(
        name="double-well",
        evaluate=lambda x: (np.asarray(x, dtype=float) ** 2 - 1.0) ** 2 / 8.0,
        x_lo=-6.0,
        x_hi=6.0,
        drift=lambda x: np.asarray(x, dtype=float)
        * (np.asarray(x, dtype=float) ** 2 - 1.0)
        / 2.0,
        smooth=True,
    )


OBJECTIVES = {
    "benchmark-cosh": _make_benchmark_cosh,
    "cosh-smooth": _make_cosh_smooth,
    "quadratic": _make_quadratic,
    "double-well": _make_double_well,
}


def make_objective(name: str) -> Objective:
    """Instantiate a registered objective by name."""
    try:
        return OBJECTIVES[name]()
    except KeyError:
        raise ConfigError(
            "unknown objective %r (registered: %s)"
            % (name, ", ".join(sorted(OBJECTIVES)))
        ) from None


def tabulated_objective(path: str) -> Objective:
    """Load a tabulated objective from a two-column CSV (x, F(x)).

    Values between nodes are linearly interpolated; evaluation outside the
    tabulated range clamps to the endpoint values.  Tabulated objectives are
    treated as non-smooth (no analytic drift).
    """
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] != 2:
        raise ConfigError("tabulated objective %r must have two columns" % path)
    xs, fs = data[:, 0], data[:, 1]
    if not np.all(np.diff(xs) > 0):
        raise ConfigError("tabulated objective %r: x column must increase" % path)
    return Objective(
        name="tab:" + os.path.basename(path),
        evaluate=lambda x: np.interp(np.asarray(x, dtype=float), xs, fs),
        x_lo=float(xs[0]),
        x_hi=float(xs[-1]),
        drift=None,
        smooth=False,
    )
