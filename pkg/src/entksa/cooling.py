"""Temperature dynamics: noisy multiplicative cooling with entropy feedback.

The microscopic temperature update (per particle, time step eps) is

    T' = (1 - eps*lam) * T + sqrt(eps) * T^p * chi(T >= (1-p)*theta) * eta,

with eta uniform on [-a, a].  The half-width a is capped at the positivity
bound ``(1 - eps*lam) * ((1-p)*theta)^(1-p)`` (which keeps T' >= 0 for every
draw when eps <= 1) and at ``sqrt(3*sigma2)`` (so the nominal noise variance
never exceeds sigma2).  Setting ``literal_algorithm1`` drops the eps-scaling
and applies the update as a per-iteration map: T' = (1-lam)*T + T^p*chi*eta.

The feedback gain lam is chosen from the sign of the cost gap
I_F = int F (f^q - f): when the ensemble is ahead of its Gibbs target
(I_F >= 0) lam is proportional to alpha * m_k * sqrt(H0) / (sqrt(2) * supF);
otherwise a slow fallback schedule ~ 1/((t+2) log(t+2)) takes over.  lam is
always clamped to [0, 1] and clamp events are counted.

For k > 1 the per-particle temperatures are replaced by a scalar moment m_k
evolved by the closed moment ODE

    dm_k/dt = -k*lam*m_k + (k*(k-1)*sigma2/2) * m_{k+2(1-p)},

with m_{k+2(1-p)} closed through the generalized-Gamma quasi-equilibrium.
The moment-consistent closure carries the prefactor sigma2*(1-p)/lam; the
``paper_literal_closure`` switch ships the bare Gamma-ratio relation instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.special import gammaln

from .density import GridDensity, GridSpec, normalized_density
from .ensemble import sample_eta
from .errors import ConfigError

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class CoolingParams:
    """Static parameters of the temperature dynamics.

    p in (0, 1/2) and theta in (0, 1) shape the noise gate; sigma2 bounds the
    noise variance and drives the k > 1 moment source term; k >= 1 selects
    which moment is controlled; nu scales the proposal variance; alpha is the
    feedback gain; epsilon is the time step (kept <= 1 so the positivity
    bound applies).
    """

    p: float = 0.25
    theta: float = 0.5
    sigma2: float = 0.1
    k: float = 1.0
    nu: float = 1.0
    alpha: float = 0.05
    epsilon: float = 1e-2
    literal_algorithm1: bool = False
    paper_literal_closure: bool = False
    scale_theta: bool = False

    def __post_init__(self):
        if not 0.0 < self.p < 0.5:
            raise ConfigError("p must lie in (0, 1/2), got %g" % self.p)
        if not 0.0 < self.theta < 1.0:
            raise ConfigError("theta must lie in (0, 1), got %g" % self.theta)
        if self.sigma2 < 0.0:
            raise ConfigError("sigma2 must be nonnegative, got %g" % self.sigma2)
        if self.k < 1.0:
            raise ConfigError("moment order k must be >= 1, got %g" % self.k)
        if not self.nu > 0.0:
            raise ConfigError("nu must be positive, got %g" % self.nu)
        if not self.alpha > 0.0:
            raise ConfigError("alpha must be positive, got %g" % self.alpha)
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError(
                "epsilon must lie in (0, 1], got %g" % self.epsilon
            )


@dataclass(frozen=True)
class CoolingState:
    """Evolving temperature-feedback state.

    mode is "sampled" (k = 1: m_k mirrors the empirical mean temperature) or
    "quasi" (k > 1: m_k is the scalar moment evolved by the closed ODE).
    """

    mode: str
    m_k: float
    lam: float
    H0: float
    supF: float
    t: float
    params: CoolingParams
    clamp_count: int = 0


def eta_half_width(lam: float, p: float, theta: float, epsilon: float) -> float:
    """Positivity half-width a = (1 - eps*lam) * ((1-p)*theta)^(1-p)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1], got %g" % lam)
    if not 0.0 < p < 0.5:
        raise ValueError("p must lie in (0, 1/2), got %g" % p)
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1), got %g" % theta)
    if not 0.0 < epsilon <= 1.0:
        raise ValueError("epsilon must lie in (0, 1], got %g" % epsilon)
    return (1.0 - epsilon * lam) * ((1.0 - p) * theta) ** (1.0 - p)


def _pow_p(T: np.ndarray, p: float) -> np.ndarray:
    if p == 0.25:  # fast path for the shipped default
        return np.sqrt(np.sqrt(T))
    return T**p


def effective_half_width(lam: float, params: CoolingParams) -> float:
    """min(positivity bound, sqrt(3*sigma2)): the half-width actually used."""
    eps_for_bound = 1.0 if params.literal_algorithm1 else params.epsilon
    a_pos = eta_half_width(lam, params.p, params.theta, eps_for_bound)
    return min(a_pos, math.sqrt(3.0 * params.sigma2))


def apply_temperature_update(
    temps: np.ndarray, lam: float, params: CoolingParams, eta: np.ndarray
) -> np.ndarray:
    """Advance temperatures one step with a pre-drawn noise vector."""
    T = np.asarray(temps, dtype=float)
    threshold = (1.0 - params.p) * params.theta
    if params.scale_theta:
        threshold *= params.epsilon
    if params.literal_algorithm1:
        decay, noise_scale = 1.0 - lam, 1.0
    else:
        decay = 1.0 - params.epsilon * lam
        noise_scale = math.sqrt(params.epsilon)
    gate = T >= threshold
    out = decay * T + noise_scale * _pow_p(T, params.p) * np.where(gate, eta, 0.0)
    # T' >= 0 holds analytically for every admissible draw; the maximum only
    # sweeps up float dust when a gated particle sits exactly at the bound
    np.maximum(out, 0.0, out=out)
    return out


def update_temperatures(
    temps: np.ndarray, lam: float, params: CoolingParams, rng
) -> Tuple[np.ndarray, float]:
    """One temperature step; returns (new temps, half-width used)."""
    a_eff = effective_half_width(lam, params)
    eta = sample_eta(len(np.asarray(temps)), a_eff, rng)
    return apply_temperature_update(temps, lam, params, eta), a_eff


# ---------------------------------------------------------------------------
# feedback gain
# ---------------------------------------------------------------------------

def _fallback_schedule(t: float) -> float:
    return 1.0 / ((t + 2.0) * math.log(t + 2.0))


def _clamp_unit(raw: float) -> Tuple[float, bool]:
    lam = min(max(raw, 0.0), 1.0)
    return lam, lam != raw


def lambda_k1(
    m1: float, H0: float, supF: float, alpha: float, t: float, iF_sign: float
) -> Tuple[float, bool]:
    """Feedback gain for k = 1; returns (lambda, clamped?).

    When the cost gap is nonnegative the entropy-contraction gain
    alpha * m1 * sqrt(H0) / (sqrt(2) * supF) applies; otherwise the slow
    fallback 1/((t+2) log(t+2)).  The result is clamped to [0, 1].
    """
    if not supF > 0.0:
        raise ValueError("supF must be positive, got %g" % supF)
    if H0 < 0.0 or m1 < 0.0 or t < 0.0:
        raise ValueError("H0, m1 and t must be nonnegative")
    if iF_sign >= 0.0:
        raw = alpha * m1 * math.sqrt(H0) / (SQRT2 * supF)
    else:
        raw = _fallback_schedule(t)
    return _clamp_unit(raw)


def _gamma_ratio(a: float, b: float) -> float:
    return math.exp(gammaln(a) - gammaln(b))


def lambda_kgt1(
    mk: float,
    H0: float,
    supF: float,
    alpha: float,
    k: float,
    p: float,
    sigma2: float,
    t: float,
    iF_sign: float,
) -> Tuple[float, bool]:
    """Feedback gain for k > 1; returns (lambda, clamped?).

    The nonnegative-gap branch mirrors the k = 1 gain with m_k in place of
    m_1.  The negative-gap branch adds the quasi-equilibrium dissipation
    floor (sigma2*(k-1)/2) * Gamma((3-4p+k)/(2(1-p))) / Gamma((1-2p+k)/(2(1-p)))
    to a 1/k-slowed fallback schedule.
    """
    if not k > 1.0:
        raise ValueError("lambda_kgt1 requires k > 1, got %g" % k)
    if not supF > 0.0:
        raise ValueError("supF must be positive, got %g" % supF)
    if H0 < 0.0 or mk < 0.0 or t < 0.0:
        raise ValueError("H0, m_k and t must be nonnegative")
    if iF_sign >= 0.0:
        raw = alpha * mk * math.sqrt(H0) / (SQRT2 * supF)
    else:
        two1p = 2.0 * (1.0 - p)
        raw = (sigma2 * (k - 1.0) / 2.0) * _gamma_ratio(
            (3.0 - 4.0 * p + k) / two1p, (1.0 - 2.0 * p + k) / two1p
        ) + _fallback_schedule(t) / k
    return _clamp_unit(raw)


@dataclass(frozen=True)
class AlphaBounds:
    """Admissible feedback-gain interval with degeneracy signals."""

    lower: float
    upper: float
    empty: bool
    degenerate_start: bool


def alpha_bounds(
    mode: str,
    k: float,
    p: float,
    sigma2: float,
    H0: float,
    supF: float,
    m_at_0: float,
) -> AlphaBounds:
    """Admissible alpha interval for the entropy-contraction branch.

    For k = 1 the interval is (0, sqrt(2)*supF / (m_1(0)*sqrt(H0))).  For
    k > 1 the quasi-equilibrium moments entering the bound are evaluated at
    the unique lambda* whose equilibrium k-th moment equals m_k(0), which
    makes the upper bound exactly parallel to the k = 1 case.  H0 = 0 (start
    already at the target) or m_k(0) = 0 is flagged as a degenerate start.
    """
    if mode not in ("sampled", "quasi"):
        raise ValueError("mode must be 'sampled' or 'quasi', got %r" % mode)
    if not supF > 0.0:
        raise ValueError("supF must be positive, got %g" % supF)
    if H0 < 0.0 or m_at_0 < 0.0:
        raise ValueError("H0 and m_at_0 must be nonnegative")
    if H0 == 0.0 or m_at_0 == 0.0:
        return AlphaBounds(0.0, float("inf"), False, True)
    upper = SQRT2 * supF / (m_at_0 * math.sqrt(H0))
    if k <= 1.0:
        return AlphaBounds(0.0, upper, False, False)
    if sigma2 == 0.0:
        return AlphaBounds(0.0, upper, False, False)
    two1p = 2.0 * (1.0 - p)
    q0 = (1.0 - 2.0 * p) / two1p
    r_k = _gamma_ratio((1.0 - 2.0 * p + k) / two1p, q0)
    # lambda* with equilibrium k-th moment equal to m_k(0)
    scale = (m_at_0 / r_k) ** (1.0 / k)
    k2 = k + two1p
    mq_k2 = scale**k2 * _gamma_ratio((1.0 - 2.0 * p + k2) / two1p, q0)
    lower = supF * sigma2 * (k - 1.0) * mq_k2 / (math.sqrt(H0) * m_at_0**2)
    return AlphaBounds(lower, upper, lower >= upper, False)


# ---------------------------------------------------------------------------
# generalized-Gamma quasi-equilibrium
# ---------------------------------------------------------------------------

def _validate_gamma_args(lam: float, p: float, sigma2: float):
    if not lam > 0.0:
        raise ValueError("lambda must be positive, got %g" % lam)
    if not 0.0 < p < 0.5:
        raise ValueError("p must lie in (0, 1/2), got %g" % p)
    if not sigma2 > 0.0:
        raise ValueError("sigma2 must be positive, got %g" % sigma2)


def gamma_qe_pdf(T, lam: float, p: float, sigma2: float):
    """Closed-form quasi-equilibrium density on T > 0.

    g(T) = [2(1-p) / (Gamma(q0) * a^(1-2p))] * exp(-(T/a)^(2(1-p))) * T^(-2p)
    with a = (sigma2*(1-p)/lam)^(1/(2(1-p))) and q0 = (1-2p)/(2(1-p)).  The
    T^(-2p) endpoint singularity is integrable for p < 1/2.
    """
    _validate_gamma_args(lam, p, sigma2)
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0.0):
        raise ValueError("gamma_qe_pdf is defined for T > 0 only")
    two1p = 2.0 * (1.0 - p)
    a = (sigma2 * (1.0 - p) / lam) ** (1.0 / two1p)
    q0 = (1.0 - 2.0 * p) / two1p
    log_c = math.log(two1p) - gammaln(q0) - (1.0 - 2.0 * p) * math.log(a)
    return np.exp(log_c - (T / a) ** two1p - 2.0 * p * np.log(T))


def gamma_quasi_equilibrium(
    lam: float, p: float, sigma2: float, t_grid: GridSpec
) -> GridDensity:
    """Quasi-equilibrium tabulated on a temperature grid, grid-renormalized.

    The grid must start at a strictly positive temperature (the analytic
    density blows up like T^(-2p) at the origin).
    """
    if t_grid.x_lo <= 0.0:
        raise ValueError(
            "temperature grid must start above 0, got %g" % t_grid.x_lo
        )
    return normalized_density(t_grid, gamma_qe_pdf(t_grid.nodes(), lam, p, sigma2))


def gamma_moment(lam: float, p: float, sigma2: float, k: float) -> float:
    """k-th moment of the quasi-equilibrium:
    (sigma2*(1-p)/lam)^(k/(2(1-p))) * Gamma(q_k)/Gamma(q_0)."""
    _validate_gamma_args(lam, p, sigma2)
    if k < 0.0:
        raise ValueError("moment order must be nonnegative, got %g" % k)
    two1p = 2.0 * (1.0 - p)
    a = (sigma2 * (1.0 - p) / lam) ** (1.0 / two1p)
    q0 = (1.0 - 2.0 * p) / two1p
    qk = (1.0 - 2.0 * p + k) / two1p
    return a**k * _gamma_ratio(qk, q0)


# ---------------------------------------------------------------------------
# closed moment ODE (k > 1); also drives k = 1 where the source vanishes
# ---------------------------------------------------------------------------

def closure_moment(m_k: float, lam: float, params: CoolingParams) -> float:
    """Estimate m_{k+2(1-p)} from m_k through the quasi-equilibrium shape.

    Moment-consistent form: m_k * (sigma2*(1-p)/lam) * Gamma-ratio; the
    ``paper_literal_closure`` switch drops the sigma2*(1-p)/lam prefactor.
    """
    k, p = params.k, params.p
    two1p = 2.0 * (1.0 - p)
    ratio = _gamma_ratio((3.0 - 4.0 * p + k) / two1p, (1.0 - 2.0 * p + k) / two1p)
    if params.paper_literal_closure:
        return m_k * ratio
    if not lam > 0.0:
        raise ValueError("moment closure needs lambda > 0, got %g" % lam)
    return m_k * (params.sigma2 * (1.0 - p) / lam) * ratio


def advance_moment_ode(state: CoolingState, lam: float, dt: float) -> CoolingState:
    """One explicit-Euler step of the closed moment ODE; m_k clamped at 0."""
    if dt <= 0.0:
        raise ValueError("dt must be positive, got %g" % dt)
    params = state.params
    k = params.k
    m = state.m_k
    source = 0.0
    if k > 1.0 and params.sigma2 > 0.0 and m > 0.0:
        source = 0.5 * k * (k - 1.0) * params.sigma2 * closure_moment(m, lam, params)
    m_new = max(m + dt * (-k * lam * m + source), 0.0)
    return replace(state, m_k=m_new, lam=lam, t=state.t + dt)
