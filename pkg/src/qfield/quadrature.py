"""Adaptive quadrature helpers for integrands with endpoint singularities.

The integrals in this package share two awkward endpoint behaviours: a
``1/(rho*sqrt(log(T/rho)))`` blow-up at ``rho = 0`` and a ``1/sqrt(log(T/rho))``
blow-up at ``rho = T``.  Raw adaptive quadrature stalls near both, so callers
substitute first (log transform on the left, ``rho = T*(1 - v^2)`` on the
right) and integrate the flattened integrand with the checked Gauss-Kronrod
wrapper below.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate

from .errors import QuadratureError

__all__ = ["quad_checked", "quad_semi_infinite"]


def quad_checked(f, a: float, b: float, rtol: float, atol: float = 0.0,
                 limit: int = 200) -> float:
    """Integrate ``f`` on ``[a, b]``, raising if the tolerance is not met."""
    if a == b:
        return 0.0
    out = integrate.quad(f, a, b, epsrel=rtol, epsabs=atol, limit=limit,
                         full_output=1)
    if len(out) > 3:
        raise QuadratureError(
            f"quadrature on [{a:g}, {b:g}] did not converge: {out[3]}")
    value, abserr = out[0], out[1]
    if abserr > 10.0 * (rtol * abs(value) + atol) + 1e-300:
        raise QuadratureError(
            f"quadrature on [{a:g}, {b:g}] reports error {abserr:.3e} "
            f"for value {value:.6e} (rtol={rtol:g})")
    return value


def quad_semi_infinite(f, u0: float, rtol: float, window: float = 40.0,
                       max_windows: int = 12) -> float:
    """Integrate ``f`` on ``[u0, inf)`` for integrands with exponential decay.

    Used after the log transform ``rho = exp(-u)``: the transformed integrand
    decays like ``exp(-nu*u)`` times a slowly varying factor.  Windows of
    fixed width are summed until one contributes less than ``rtol`` of the
    running total.
    """
    total = 0.0
    lo = u0
    for k in range(max_windows):
        part = quad_checked(f, lo, lo + window, rtol)
        total += part
        if k > 0 and abs(part) <= rtol * abs(total):
            return total
        lo += window
    # last window must itself be negligible
    if abs(part) > 10.0 * rtol * max(abs(total), 1e-300):
        raise QuadratureError(
            "semi-infinite tail did not become negligible after "
            f"{max_windows} windows of width {window:g}")
    return total


def gauss_legendre_nodes(order: int):
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w
