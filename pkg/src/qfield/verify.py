"""Numerical verification of the field's structural inequalities.

Four families of checks:

* two-sided isotropy of the canonical metric against the gauge of the
  point separation, with the explicit upper constant
  ``sqrt(2d) * q(T)^(d-1)``;
* conditional variance of the field at a point given finitely many
  predecessors, computed along two routes (Schur complement with a
  Cholesky solve, and the least-squares normal equations with an LU
  solve) that must agree to high relative accuracy;
* the local-nondeterminism lower bound
  ``q(t)^(2(d-1)) * sum_l min_j q(x_l - x_l^j)^2`` over randomized
  predecessor configurations in the left set of the target point;
* the Gaussian conditioning inequality
  ``P(max |X_j - X_{j-1}| < x) <= P(max_{j<n} ...) * P(|X_n - E(X_n|F)| < x)``
  by Monte Carlo with exact conditional means.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.stats import norm

from . import streams
from .covar import FieldModel, cholesky_with_jitter, cov, gram
from .errors import (DegenerateError, DomainError, NumericalError,
                     VerificationError)
from .gauge import check_kernel_monotone

__all__ = [
    "CondVarReport", "IsotropyReport", "AndersonInstance", "AndersonReport",
    "conditional_variance_schur", "conditional_variance_lsq", "lnd_bound",
    "lnd_check", "isotropy_bounds", "anderson_check", "anderson_instance",
]

log = logging.getLogger("qfield.verify")

_ABS_MEDIAN_Z = float(norm.ppf(0.75))  # median of |N(0,1)|


@dataclass(frozen=True, eq=False)
class CondVarReport:
    """Conditional variance at ``target`` given ``predecessors``."""

    target: np.ndarray
    predecessors: np.ndarray
    condvar_schur: float
    condvar_lsq: float
    lnd_bound: float
    ratio: float

    def __post_init__(self):
        scale = max(self.condvar_schur, 1e-12)
        if abs(self.condvar_schur - self.condvar_lsq) > 1e-8 * scale:
            raise NumericalError(
                "Schur and least-squares conditional variances disagree: "
                f"{self.condvar_schur!r} vs {self.condvar_lsq!r}")

    def to_dict(self) -> dict:
        return {
            "target": self.target.tolist(),
            "predecessors": self.predecessors.tolist(),
            "condvar_schur": self.condvar_schur,
            "condvar_lsq": self.condvar_lsq,
            "lnd_bound": self.lnd_bound,
            "ratio": self.ratio,
        }


@dataclass(frozen=True, eq=False)
class IsotropyReport:
    """Extremes of ``metric / q(|x - y|)`` over sampled pairs."""

    c_hat: float
    C_hat: float
    pair_count: int
    domain_used: tuple
    upper_cap: float
    upper_ok: bool
    resampled: int
    skipped_domain: int
    ratios: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "c_hat": self.c_hat, "C_hat": self.C_hat,
            "pair_count": self.pair_count,
            "domain_used": [float(self.domain_used[0]),
                            float(self.domain_used[1])],
            "upper_cap": self.upper_cap, "upper_ok": self.upper_ok,
            "resampled": self.resampled,
            "skipped_domain": self.skipped_domain,
        }


# ---------------------------------------------------------------------------
# conditional variance, two ways

def _cond_system(m: FieldModel, x, preds):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    pts = np.atleast_2d(np.asarray(preds, dtype=float))
    if pts.shape[0] < 1:
        raise DomainError("at least one predecessor required")
    sigma2 = cov(m, x, x)
    k = np.array([cov(m, x, p) for p in pts])
    G = gram(m, pts)
    L, lam = cholesky_with_jitter(G)  # shared escalation policy
    A = G + lam * np.eye(G.shape[0])
    return x, pts, sigma2, k, A, L


def _clamp_condvar(raw: float, sigma2: float, label: str) -> float:
    if raw < -1e-10 * sigma2 or raw > sigma2 * (1.0 + 1e-10):
        log.debug("%s conditional variance %g clamped to [0, %g]",
                  label, raw, sigma2)
    return min(max(raw, 0.0), sigma2)


def conditional_variance_schur(m: FieldModel, x, preds) -> float:
    """``cov(x,x) - k^T (G + lam I)^{-1} k`` via a Cholesky solve."""
    _, _, sigma2, k, _, L = _cond_system(m, x, preds)
    w = scipy.linalg.cho_solve((L, True), k)
    return _clamp_condvar(sigma2 - float(k @ w), sigma2, "schur")


def conditional_variance_lsq(m: FieldModel, x, preds) -> float:
    """Minimum of ``E[(X(x) - sum a_j X(x^j))^2]`` over coefficients.

    Solves the (regularized) normal equations by LU and evaluates the full
    quadratic objective at the minimizer, which makes it an independently
    computed value for the Schur route.
    """
    _, _, sigma2, k, A, _ = _cond_system(m, x, preds)
    a = np.linalg.solve(A, k)
    raw = sigma2 - 2.0 * float(a @ k) + float(a @ A @ a)
    return _clamp_condvar(raw, sigma2, "lsq")


def lnd_bound(m: FieldModel, x, preds, t: float) -> float:
    """``q(t)^{2(d-1)} * sum_l min_j q(x_l - x_l^j)^2``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    pts = np.atleast_2d(np.asarray(preds, dtype=float))
    if np.any(pts > x[None, :] * (1.0 + 1e-12)):
        raise DomainError("predecessors must lie in the left set of x")
    gaps = np.clip(x[None, :] - pts, 0.0, None)
    per_axis = np.min(np.asarray(m.gauge.q2(gaps)), axis=0)
    prefactor = float(m.gauge.q2(t)) ** (m.d - 1)
    return prefactor * float(np.sum(per_axis))


def condvar_report(m: FieldModel, x, preds, t: float) -> CondVarReport:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    pts = np.atleast_2d(np.asarray(preds, dtype=float))
    schur = conditional_variance_schur(m, x, pts)
    lsq = conditional_variance_lsq(m, x, pts)
    bound = lnd_bound(m, x, pts, t)
    ratio = schur / bound if bound > 0 else np.inf
    return CondVarReport(target=x, predecessors=pts, condvar_schur=schur,
                         condvar_lsq=lsq, lnd_bound=bound, ratio=ratio)


def lnd_check(m: FieldModel, t: float, n_max: int, trials: int, seed: int,
              strict: bool = True) -> list:
    """Randomized sweep of the local-nondeterminism lower bound.

    Draws targets in ``[t, T]^d`` and up to ``n_max`` predecessors uniform
    in the left set intersected with ``[t, T]^d``, and reports the
    conditional variance against the bound for each trial.  Requires the
    kernel-monotonicity hypothesis; with ``strict`` the minimum ratio must
    be at least ``1 - 1e-6``.
    """
    T = m.gauge.T
    if not 0.0 < t < T:
        raise DomainError("need 0 < t < T")
    if not 1 <= n_max <= 8:
        raise DomainError("n_max must lie in [1, 8]: the predecessor Gram "
                          "conditioning degrades beyond")
    km = check_kernel_monotone(m.gauge)
    if not km.passed:
        raise VerificationError(
            "local nondeterminism verification requires a non-increasing "
            "kernel derivative d(q^2)/dtau, which this gauge violates")
    reports = []
    resampled = 0
    for trial in range(trials):
        rng = streams.stream(seed, streams.TAG_LND, trial)
        for _attempt in range(100):
            x = t + (T - t) * rng.random(m.d)
            n = int(rng.integers(1, n_max + 1))
            preds = t + (x - t)[None, :] * rng.random((n, m.d))
            stacked = np.vstack([preds, x[None, :]])
            if np.unique(stacked, axis=0).shape[0] == n + 1:
                break
            resampled += 1
        else:
            raise DegenerateError("could not draw distinct predecessors")
        reports.append(condvar_report(m, x, preds, t))
    if resampled:
        log.info("lnd_check resampled %d degenerate configurations",
                 resampled)
    if strict and reports:
        worst = min(r.ratio for r in reports)
        if worst < 1.0 - 1e-6:
            raise VerificationError(
                f"LND bound violated: min ratio {worst:.9f} < 1 - 1e-6")
    return reports


# ---------------------------------------------------------------------------
# isotropy

def isotropy_bounds(m: FieldModel, t: float, pairs: int, seed: int,
                    strict: bool = True,
                    keep_ratios: bool = False) -> IsotropyReport:
    """Sample ``metric / q(|x - y|)`` on ``[t, T]^d`` and report extremes.

    Pairs whose separation exceeds the gauge domain are skipped and
    counted (only possible for elongated boxes in d >= 2); coincident
    pairs are resampled and counted.  With ``strict`` the maximum ratio
    must stay below ``sqrt(2d) * q(T)^(d-1) * (1 + 1e-6)``.
    """
    T = m.gauge.T
    if not 0.0 < t < T:
        raise DomainError("need 0 < t < T")
    if pairs < 100:
        raise DomainError("at least 100 pairs are required")
    rng = streams.stream(seed, streams.TAG_ISOTROPY)
    ratios = np.empty(pairs)
    resampled = 0
    skipped = 0
    got = 0
    while got < pairs:
        x = t + (T - t) * rng.random(m.d)
        y = t + (T - t) * rng.random(m.d)
        dist = float(np.linalg.norm(x - y))
        if dist == 0.0:
            resampled += 1
            continue
        if dist > T:
            skipped += 1
            continue
        dxy = float(np.sqrt(max(
            cov(m, x, x) + cov(m, y, y) - 2.0 * cov(m, x, y), 0.0)))
        ratios[got] = dxy / float(m.gauge.q(dist))
        got += 1
    cap = float(np.sqrt(2.0 * m.d)) * float(m.gauge.q(T)) ** (m.d - 1) \
        * (1 + 1e-6)
    c_hat = float(np.min(ratios))
    C_hat = float(np.max(ratios))
    ok = bool(C_hat <= cap)
    if strict and not ok:
        raise VerificationError(
            f"isotropy upper bound violated: C_hat = {C_hat:.6g} exceeds "
            f"sqrt(2d) q(T)^(d-1) = {cap:.6g}")
    return IsotropyReport(c_hat=c_hat, C_hat=C_hat, pair_count=pairs,
                          domain_used=(t, T), upper_cap=cap, upper_ok=ok,
                          resampled=resampled, skipped_domain=skipped,
                          ratios=ratios if keep_ratios else None)


# ---------------------------------------------------------------------------
# Gaussian conditioning inequality

@dataclass(frozen=True, eq=False)
class AndersonInstance:
    """Monte Carlo outcome for one covariance instance."""

    n: int
    threshold: float
    p_lhs: float
    p_max_head: float
    p_residual: float
    diff: float               # p_lhs - p_max_head * p_residual
    se: float                 # delta-method standard error of diff
    violated: bool

    def to_dict(self) -> dict:
        return {"n": self.n, "threshold": self.threshold,
                "p_lhs": self.p_lhs, "p_max_head": self.p_max_head,
                "p_residual": self.p_residual, "diff": self.diff,
                "se": self.se, "violated": self.violated}


@dataclass(frozen=True, eq=False)
class AndersonReport:
    instances: list
    violations: int
    regenerated: int

    def to_dict(self) -> dict:
        return {"violations": self.violations,
                "regenerated": self.regenerated,
                "instances": [i.to_dict() for i in self.instances]}


def anderson_instance(Sigma: np.ndarray, mc_samples: int,
                      rng: np.random.Generator,
                      threshold: Optional[float] = None) -> AndersonInstance:
    """Estimate both sides of the conditioning inequality for one Sigma.

    ``Sigma`` is the covariance of ``(X_0, ..., X_n)``.  The conditional
    expectation ``E(X_n | X_0..X_{n-1})`` is computed exactly from the
    Gram solve; only the probabilities are Monte Carlo estimates.  The
    default threshold is the median of ``|X_1 - X_0|`` so that neither
    probability degenerates.
    """
    npts = Sigma.shape[0]
    n = npts - 1
    if n < 1:
        raise DomainError("need at least two coordinates")
    try:
        L = np.linalg.cholesky(Sigma + 1e-12 * np.trace(Sigma) / npts
                               * np.eye(npts))
    except np.linalg.LinAlgError as exc:
        raise DegenerateError(f"instance covariance is singular: {exc}")
    if threshold is None:
        s_inc = np.sqrt(Sigma[0, 0] + Sigma[1, 1] - 2.0 * Sigma[0, 1])
        if s_inc <= 0:
            raise DegenerateError("first increment is degenerate")
        threshold = _ABS_MEDIAN_Z * float(s_inc)
    beta = np.linalg.solve(Sigma[:n, :n], Sigma[:n, n])
    X = rng.standard_normal((mc_samples, npts)) @ L.T
    D = np.abs(np.diff(X, axis=1))
    ind_lhs = np.all(D < threshold, axis=1)
    ind_head = np.all(D[:, :n - 1] < threshold, axis=1) if n > 1 \
        else np.ones(mc_samples, dtype=bool)
    resid = X[:, n] - X[:, :n] @ beta
    ind_res = np.abs(resid) < threshold
    inds = np.column_stack([ind_lhs, ind_head, ind_res]).astype(float)
    p1, p2, p3 = inds.mean(axis=0)
    diff = p1 - p2 * p3
    C = np.cov(inds, rowvar=False)
    grad = np.array([1.0, -p3, -p2])
    se = float(np.sqrt(max(grad @ C @ grad, 0.0) / mc_samples))
    return AndersonInstance(n=n, threshold=float(threshold), p_lhs=float(p1),
                            p_max_head=float(p2), p_residual=float(p3),
                            diff=float(diff), se=se,
                            violated=bool(diff > 4.0 * se))


def anderson_check(n: int, trials: int, mc_samples: int, seed: int,
                   strict: bool = True) -> AndersonReport:
    """Random-covariance sweep of the conditioning inequality.

    Each trial draws ``Sigma = A A^T`` with standard normal ``A`` for the
    ``n+1`` coordinates, regenerating numerically singular instances, and
    asserts ``LHS <= RHS + 4 * SE``.
    """
    if not 2 <= n <= 5:
        raise DomainError("n must lie in [2, 5]")
    if mc_samples < 10 ** 5:
        raise DomainError("at least 1e5 Monte Carlo samples are required")
    instances = []
    regenerated = 0
    for trial in range(trials):
        rng = streams.stream(seed, streams.TAG_ANDERSON, n, trial)
        for _attempt in range(50):
            A = rng.standard_normal((n + 1, n + 1))
            Sigma = A @ A.T
            if np.linalg.cond(Sigma) < 1e10:
                break
            regenerated += 1
        else:
            raise DegenerateError("could not draw a well-conditioned Sigma")
        instances.append(anderson_instance(Sigma, mc_samples, rng))
    violations = sum(1 for i in instances if i.violated)
    if strict and violations:
        raise VerificationError(
            f"conditioning inequality violated beyond 4 SE in "
            f"{violations}/{trials} instances")
    return AndersonReport(instances=instances, violations=violations,
                          regenerated=regenerated)
