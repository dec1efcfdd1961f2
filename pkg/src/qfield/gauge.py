"""Gauge functions and numerical certification of their hypotheses.

A gauge is a strictly increasing continuous map ``q: [0, T] -> R_+`` with
``q(0) = 0``.  Three families are supported:

* ``powerlaw``      : ``q(tau) = tau**nu``
* ``logmodulated``  : ``q(tau) = (-log tau)**gamma * tau**nu`` on
  ``[0, exp(-gamma/nu)]``, the largest interval on which the map is
  non-decreasing (the right endpoint is a stationary point of q).
* ``tabulated``     : monotone piecewise-cubic interpolation of a user table.

Besides evaluation, inversion and the moving-average kernel
``K = sqrt(d(q^2)/dtau)``, the module certifies the increment-scale
hypotheses a gauge must satisfy for the field construction: monotonicity of
``q(tau)*sqrt(-log tau)`` near zero, decay of the same statistic, the
integral bound with constant ``C1``, and monotonicity of ``(q^2)'``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainError, NumericalError
from .quadrature import quad_checked, quad_semi_infinite

__all__ = [
    "POWER_LAW", "LOG_MODULATED", "TABULATED",
    "GaugeSpec", "ConditionReport",
    "eval_q", "eval_q_inverse", "eval_kernel",
    "check_q1", "check_q2", "check_q3", "check_kernel_monotone",
]

POWER_LAW = "powerlaw"
LOG_MODULATED = "logmodulated"
TABULATED = "tabulated"

_FAMILIES = (POWER_LAW, LOG_MODULATED, TABULATED)

_INV_RTOL = 1e-12
_INV_ATOL = 1e-15


@dataclass(frozen=True, eq=False)
class GaugeSpec:
    """Immutable description of a gauge function.

    Parameters
    ----------
    family : str
        One of ``powerlaw``, ``logmodulated``, ``tabulated``.
    nu : float
        Power exponent.  For tabulated gauges it only serves as the
        endpoint-flattening hint for singular quadrature (default 0.5).
    gamma : float
        Log exponent; must be 0 for the power law.
    T : float, optional
        Upper end of the domain ``[0, T]``.  Defaults to 1 for the power
        law and to ``exp(-gamma/nu)`` for the log-modulated family.
    table : tuple of ndarray, optional
        ``(tau, q)`` knots for the tabulated family.  Must start at
        ``(0, 0)`` and be strictly increasing in both columns.
    """

    family: str
    nu: float = 0.5
    gamma: float = 0.0
    T: Optional[float] = None
    table: Optional[tuple] = None
    _q_interp: object = field(default=None, repr=False, compare=False)
    _q2_interp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise DomainError(f"unknown gauge family {self.family!r}")
        if not self.nu > 0:
            raise DomainError("nu must be positive")
        if self.gamma < 0:
            raise DomainError("gamma must be nonnegative")
        if self.family == POWER_LAW:
            if self.gamma != 0.0:
                raise DomainError("powerlaw gauge requires gamma = 0")
            if self.T is None:
                object.__setattr__(self, "T", 1.0)
        elif self.family == LOG_MODULATED:
            if self.gamma <= 0:
                raise DomainError("logmodulated gauge requires gamma > 0")
            t_max = math.exp(-self.gamma / self.nu)
            if self.T is None:
                object.__setattr__(self, "T", t_max)
            elif self.T > t_max * (1.0 + 1e-12):
                raise DomainError(
                    f"logmodulated gauge is only non-decreasing up to "
                    f"exp(-gamma/nu) = {t_max:.6g}; got T = {self.T:.6g}")
        else:
            if self.table is None:
                raise DomainError("tabulated gauge requires a table")
            tau = np.asarray(self.table[0], dtype=float)
            qv = np.asarray(self.table[1], dtype=float)
            if tau.ndim != 1 or tau.shape != qv.shape or tau.size < 3:
                raise DomainError("table must be two equal 1-d arrays, >= 3 rows")
            if tau[0] != 0.0 or qv[0] != 0.0:
                raise DomainError("table must start at (0, 0)")
            if np.any(np.diff(tau) <= 0) or np.any(np.diff(qv) <= 0):
                raise DomainError("table must be strictly increasing")
            object.__setattr__(self, "table", (tau, qv))
            if self.T is None:
                object.__setattr__(self, "T", float(tau[-1]))
            elif self.T > tau[-1]:
                raise DomainError("T exceeds the tabulated range")
            object.__setattr__(self, "_q_interp", PchipInterpolator(tau, qv))
            object.__setattr__(self, "_q2_interp", PchipInterpolator(tau, qv ** 2))
        if not self.T > 0:
            raise DomainError("T must be positive")

    # -- raw evaluation (array friendly, no domain checks) ------------------

    def q(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.family == POWER_LAW:
            return tau ** self.nu
        if self.family == LOG_MODULATED:
            out = np.zeros_like(tau)
            pos = tau > 0.0
            tp = tau[pos]
            out[pos] = np.exp(
                self.gamma * np.log(-np.log(tp)) + self.nu * np.log(tp))
            return out
        return np.asarray(self._q_interp(tau), dtype=float)

    def q2(self, tau):
        if self.family == TABULATED:
            return np.asarray(self._q2_interp(tau), dtype=float)
        return self.q(tau) ** 2

    def dq2(self, tau):
        """Derivative of q^2; closed form for the analytic families."""
        tau = np.asarray(tau, dtype=float)
        if self.family == POWER_LAW:
            return 2.0 * self.nu * tau ** (2.0 * self.nu - 1.0)
        if self.family == LOG_MODULATED:
            L = -np.log(tau)
            return (tau ** (2.0 * self.nu - 1.0) * L ** (2.0 * self.gamma - 1.0)
                    * (2.0 * self.nu * L - 2.0 * self.gamma))
        # tabulated: central finite differences with relative step on the
        # q^2 interpolant; step collapses with tau so small scales survive
        h = 1e-6 * tau
        hi = np.minimum(tau + h, self.T)
        lo = np.maximum(tau - h, 0.0)
        return (self.q2(hi) - self.q2(lo)) / (hi - lo)

    def d2q2(self, tau):
        """Second derivative of q^2 for the log-modulated family."""
        if self.family != LOG_MODULATED:
            raise DomainError("closed-form second derivative is only "
                              "available for the logmodulated family")
        tau = np.asarray(tau, dtype=float)
        nu, ga = self.nu, self.gamma
        L = -np.log(tau)
        bracket = nu * (2 * nu - 1) * L ** 2 + ga * (1 - 4 * nu) * L \
            + ga * (2 * ga - 1)
        return 2.0 * tau ** (2 * nu - 2.0) * L ** (2 * ga - 2.0) * bracket

    def kernel(self, tau):
        """Moving-average kernel ``K = sqrt((q^2)')``, array friendly."""
        d = self.dq2(tau)
        return np.sqrt(np.maximum(d, 0.0))

    def q_inverse(self, v):
        """Vectorized inverse; closed form for the power law, bisection else."""
        v = np.asarray(v, dtype=float)
        if self.family == POWER_LAW:
            return v ** (1.0 / self.nu)
        lo = np.zeros_like(v)
        hi = np.full_like(v, self.T)
        for _ in range(110):
            mid = 0.5 * (lo + hi)
            below = self.q(mid) < v
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-16 * hi):
                break
        return 0.5 * (lo + hi)

    @property
    def singularity_exponent(self) -> float:
        """Flattening power for quadrature near the kernel singularity."""
        if self.family == TABULATED:
            return 0.5
        return self.nu

    def params(self) -> dict:
        out = {"family": self.family, "nu": self.nu, "gamma": self.gamma,
               "T": self.T}
        if self.family == TABULATED:
            out["table_len"] = int(self.table[0].size)
        return out


@dataclass(frozen=True, eq=False)
class ConditionReport:
    """Outcome of one gauge-hypothesis check."""

    condition: str                 # q1 | q2 | q3 | kernel_monotone
    passed: bool
    evidence_grid: np.ndarray      # (m, 2) array of (tau, statistic)
    constant_estimate: Optional[float]
    neighborhood: float

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "passed": bool(self.passed),
            "evidence_grid": [[float(t), float(s)] for t, s in self.evidence_grid],
            "constant_estimate": (None if self.constant_estimate is None
                                  else float(self.constant_estimate)),
            "neighborhood": float(self.neighborhood),
        }


# ---------------------------------------------------------------------------
# point evaluation with domain checks

def eval_q(g: GaugeSpec, tau: float) -> float:
    """Evaluate the gauge at a point of ``[0, T]``."""
    if tau < 0.0 or tau > g.T * (1.0 + 1e-12):
        raise DomainError(f"tau = {tau:g} outside [0, {g.T:g}]")
    if tau == 0.0:
        return 0.0
    return float(g.q(min(tau, g.T)))


def eval_q_inverse(g: GaugeSpec, v: float) -> float:
    """Invert the gauge: the tau with ``|q(tau) - v| <= rtol*v + atol``."""
    q_top = float(g.q(g.T))
    if v < 0.0 or v > q_top * (1.0 + 1e-12):
        raise DomainError(f"value {v:g} outside [0, q(T) = {q_top:g}]")
    if v == 0.0:
        return 0.0
    tau = float(g.q_inverse(min(v, q_top)))
    if abs(float(g.q(tau)) - v) > _INV_RTOL * v + _INV_ATOL:
        raise NumericalError(f"gauge inversion stalled at v = {v:g}")
    return tau


def eval_kernel(g: GaugeSpec, tau: float) -> float:
    """Evaluate ``K(tau) = sqrt((q^2)'(tau))`` for ``tau > 0``."""
    if tau <= 0.0:
        raise DomainError("kernel requires tau > 0")
    if tau > g.T * (1.0 + 1e-12):
        raise DomainError(f"tau = {tau:g} outside (0, {g.T:g}]")
    d = float(g.dq2(min(tau, g.T)))
    if d < -1e-10 * max(1.0, abs(d)):
        raise NumericalError(
            f"(q^2)'({tau:g}) = {d:g} < 0: q^2 is not non-decreasing")
    return math.sqrt(max(d, 0.0))


# ---------------------------------------------------------------------------
# condition checkers

def _default_tau0(g: GaugeSpec) -> float:
    return 0.1 * min(g.T, 1.0)


def check_q1(g: GaugeSpec, tau0: Optional[float] = None) -> ConditionReport:
    """Is ``tau -> q(tau)*sqrt(-log tau)`` non-decreasing near zero?

    The statistic is sampled on a 512-point log grid in ``(0, tau0]``.  The
    report's ``neighborhood`` is the largest grid point up to which every
    consecutive difference is ``>= -atol``; the check passes when that
    monotone prefix covers at least a quarter of the grid, i.e. the
    statistic is non-decreasing on a genuine neighborhood of zero even if
    it turns over before ``tau0``.
    """
    if tau0 is None:
        tau0 = _default_tau0(g)
    if not 0.0 < tau0 < 1.0:
        raise DomainError("tau0 must lie in (0, 1): -log tau must be positive")
    if tau0 > g.T:
        raise DomainError("tau0 exceeds the gauge domain")
    grid = np.geomspace(tau0 * 2.0 ** -30, tau0, 512)
    stat = g.q(grid) * np.sqrt(-np.log(grid))
    atol = 1e-12 * float(np.max(np.abs(stat)))
    diffs = np.diff(stat)
    bad = np.nonzero(diffs < -atol)[0]
    prefix = len(diffs) if bad.size == 0 else int(bad[0])
    passed = prefix >= 128
    neighborhood = float(grid[prefix])
    return ConditionReport("q1", passed,
                           np.column_stack([grid, stat]),
                           None, neighborhood)


def check_q2(g: GaugeSpec, tau0: Optional[float] = None) -> ConditionReport:
    """Does ``q(tau)*sqrt(-log tau)`` vanish as tau drops to zero?

    Sampled at ``tau_k = 2^-k * tau0`` for ``k = 1..48``.  The limit is
    certified when the tail of the sequence is non-increasing and either
    the final value has dropped below ``1e-6`` of the initial one or the
    tail decays geometrically (consecutive ratios bounded away from 1).
    The geometric branch is needed for slowly decaying gauges such as
    ``tau**0.1``, which can never lose six digits in 48 halvings.
    """
    if tau0 is None:
        tau0 = _default_tau0(g)
    if not 0.0 < tau0 < 1.0:
        raise DomainError("tau0 must lie in (0, 1)")
    k = np.arange(1, 49)
    grid = tau0 * 2.0 ** -k
    stat = g.q(grid) * np.sqrt(-np.log(grid))
    atol = 1e-12 * float(np.max(np.abs(stat)))
    tail = stat[-16:]
    tail_decreasing = bool(np.all(np.diff(tail) <= atol))
    hard_drop = stat[-1] < 1e-6 * (stat[0] + atol)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = stat[-10:] / stat[-11:-1]
    geometric = bool(np.all(np.isfinite(ratios))
                     and np.max(ratios) <= 1.0 - 1.0 / 64.0)
    passed = tail_decreasing and (hard_drop or geometric)
    return ConditionReport("q2", passed,
                           np.column_stack([grid, stat]),
                           None, float(tau0))


def q3_integral(g: GaugeSpec, T: float, tau: float, rtol: float = 1e-8) -> float:
    """``int_0^tau q(rho) / (rho * sqrt(log(T/rho))) drho``.

    The integrand is singular at both ends of ``(0, T)``.  The interval is
    split at ``T/2``; the left piece is computed after ``rho = exp(-u)``
    (which flattens the ``1/rho`` factor and turns the integral into an
    exponentially decaying one), the right piece after ``rho = T*(1-v^2)``
    (which removes the ``1/sqrt(log)`` blow-up at ``rho = T``).
    """
    if tau <= 0.0:
        return 0.0
    if tau > T * (1.0 + 1e-12):
        raise DomainError("tau exceeds the integral's T")
    tau = min(tau, T)
    left_top = min(tau, 0.5 * T)
    u0 = -math.log(left_top)
    logT = math.log(T)

    def left_integrand(u):
        return float(g.q(math.exp(-u))) / math.sqrt(logT + u)

    total = quad_semi_infinite(left_integrand, u0, rtol)
    if tau > 0.5 * T:
        v_tau = math.sqrt(max(1.0 - tau / T, 0.0))
        v_half = math.sqrt(0.5)

        def right_integrand(v):
            rho = T * (1.0 - v * v)
            return (2.0 * v * float(g.q(rho))
                    / ((1.0 - v * v) * math.sqrt(-math.log1p(-v * v))))

        total += quad_checked(right_integrand, v_tau, v_half, rtol)
    return total


def check_q3(g: GaugeSpec, T: Optional[float] = None,
             rtol: float = 1e-8) -> ConditionReport:
    """Bound ``int_0^tau q(rho)/(rho sqrt(log(T/rho))) drho`` by
    ``C1 * q(tau) * sqrt(log(T/tau))``.

    The ratio of the two sides is evaluated on a 128-point log grid in
    ``(0, T)``; ``constant_estimate`` is its maximum.  The check passes when
    the estimate is finite and the ratio does not diverge as tau drops to
    zero (the three smallest-grid ratios are within 10% of each other or
    decrease toward zero).
    """
    if T is None:
        T = g.T
    if not 0.0 < T <= g.T * (1.0 + 1e-12):
        raise DomainError("need 0 < T <= gauge domain")
    T = min(T, g.T)
    grid = np.geomspace(T * 2.0 ** -40, T * (1.0 - 2.0 ** -7), 128)
    ratios = np.empty_like(grid)
    for i, tau in enumerate(grid):
        denom = float(g.q(tau)) * math.sqrt(math.log(T / tau))
        ratios[i] = q3_integral(g, T, float(tau), rtol) / denom
    c1 = float(np.max(ratios))
    r0, r1, r2 = ratios[0], ratios[1], ratios[2]
    spread = (max(r0, r1, r2) - min(r0, r1, r2)) / max(r0, r1, r2, 1e-300)
    toward_zero = r0 <= r1 * (1.0 + 1e-9) and r1 <= r2 * (1.0 + 1e-9)
    passed = bool(np.isfinite(c1) and c1 > 0.0 and (spread <= 0.10 or toward_zero))
    return ConditionReport("q3", passed,
                           np.column_stack([grid, ratios]),
                           c1 if passed else None,
                           float(grid[0]))


def check_kernel_monotone(g: GaugeSpec) -> ConditionReport:
    """Is ``(q^2)'`` non-increasing on ``(0, T]``?

    ``neighborhood`` records the largest grid point up to which the sampled
    derivative is non-increasing; the check passes only when that covers
    the whole domain, which is what the covariance bound requires.  For the
    log-modulated family the sign of the closed-form second derivative is
    cross-checked against the sampled differences.
    """
    grid = np.geomspace(g.T * 2.0 ** -40, g.T, 512)
    d = g.dq2(grid)
    scale = np.maximum(np.abs(d[:-1]), np.abs(d[1:]))
    diffs = np.diff(d)
    ok = diffs <= 1e-10 * np.maximum(scale, 1e-300)
    bad = np.nonzero(~ok)[0]
    prefix = len(diffs) if bad.size == 0 else int(bad[0])
    passed = prefix == len(diffs)
    neighborhood = float(grid[prefix])
    if g.family == LOG_MODULATED:
        # where the closed-form curvature is clearly one-signed the sampled
        # differences must agree
        dd = g.d2q2(grid[:-1])
        strong = np.abs(dd) > 1e-6 * np.max(np.abs(dd))
        sampled_sign = np.sign(diffs)
        mism = strong & (np.sign(dd) != sampled_sign) & (np.abs(diffs) >
                                                         1e-10 * scale)
        if np.any(mism):
            raise NumericalError(
                "sampled (q^2)' differences contradict the closed-form "
                "second derivative of the log-modulated gauge")
    return ConditionReport("kernel_monotone", passed,
                           np.column_stack([grid, d]),
                           None, neighborhood)
