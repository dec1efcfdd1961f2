"""Covariance and exact simulation of the gauge Brownian sheet.

The field is the centered Gaussian random field on ``[0, T]^d`` whose
covariance factorizes over axes,

    cov(x, y) = prod_l C(x_l, y_l),
    C(s, t)   = int_0^{min(s,t)} K(s-u) K(t-u) du,

with the moving-average kernel ``K = sqrt((q^2)')`` of a gauge ``q``.  On
the diagonal the isometry collapses to ``C(t, t) = q(t)^2`` exactly, which
doubles as an accuracy certificate for every quadrature path in here.

Three samplers are provided: exact dense Cholesky of the Gram matrix
(jittered; the jitter actually used is always recorded), a truncated
eigenexpansion that is distributionally identical to Cholesky at full
rank, and an approximate moving-average discretization for 1-d grids that
serves only as a distributional cross-check.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from itertools import product as _iproduct
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from . import _kernels, streams
from .errors import (DegenerateError, DomainError, FactorizationError,
                     NumericalError, QuadratureError)
from .gauge import GaugeSpec
from .quadrature import gauss_legendre_nodes, quad_checked

__all__ = [
    "QuadSettings", "FieldModel", "GridSample",
    "cov1d", "cov", "canonical_metric", "gram",
    "make_dyadic_grid", "grid_gram_1d", "cov_band_1d", "grid_gram_nd",
    "CholeskySampler", "sample_cholesky", "sample_spectral",
    "sample_moving_average", "write_grid_sample",
]

SAMPLER_CHOLESKY = "cholesky"
SAMPLER_SPECTRAL = "spectral"
SAMPLER_MOVING_AVERAGE = "moving_average"

_JITTER_START = 1e-12
_JITTER_CAP = 1e-6
_JITTER_STEP = 10.0

_PANEL_ORDER = 12        # Gauss-Legendre nodes per regular grid panel
_SINGULAR_ORDER = 40     # nodes for the flattened panel touching zero


@dataclass(frozen=True)
class QuadSettings:
    """Tolerances for the adaptive covariance quadrature."""

    rtol: float = 1e-9
    max_subdivisions: int = 200


@dataclass(frozen=True, eq=False)
class FieldModel:
    """The d-dimensional field over a compact box ``[a, b]``."""

    gauge: GaugeSpec
    d: int
    box: tuple
    quad: QuadSettings = field(default_factory=QuadSettings)
    grid_limit: int = 16384

    def __post_init__(self):
        if self.d < 1:
            raise DomainError("d must be a positive integer")
        a = np.atleast_1d(np.asarray(self.box[0], dtype=float))
        b = np.atleast_1d(np.asarray(self.box[1], dtype=float))
        if a.shape != (self.d,) or b.shape != (self.d,):
            raise DomainError("box endpoints must be d-vectors")
        if np.any(a < 0.0) or np.any(b <= a):
            raise DomainError("box must satisfy 0 <= a_l < b_l")
        if np.any(b > self.gauge.T * (1.0 + 1e-12)):
            raise DomainError("box must lie inside [0, T]^d")
        object.__setattr__(self, "box", (a, b))

    @property
    def diameter(self) -> float:
        a, b = self.box
        return float(np.linalg.norm(b - a))

    @property
    def gamma_min(self) -> float:
        a, b = self.box
        return float(np.min(b - a))

    @property
    def model_hash(self) -> str:
        payload = {
            "gauge": self.gauge.params(), "d": self.d,
            "box": [self.box[0].tolist(), self.box[1].tolist()],
            "rtol": self.quad.rtol,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class GridSample:
    """One realization of the field on a fixed point set."""

    model_hash: str
    resolution: int          # dyadic resolution n, or -1 for free grids
    points: np.ndarray       # (P, d)
    values: np.ndarray       # (P,)
    seed: int
    replicate_index: int
    sampler: str
    jitter_used: float = 0.0

    def __post_init__(self):
        if self.values.shape != (self.points.shape[0],):
            raise DomainError("one value per grid point required")


# ---------------------------------------------------------------------------
# pointwise covariance

def _check_axis(m: FieldModel, v: float, name: str):
    if v < 0.0 or v > m.gauge.T * (1.0 + 1e-12):
        raise DomainError(f"{name} = {v:g} outside [0, {m.gauge.T:g}]")


def cov1d(m: FieldModel, s: float, t: float) -> float:
    """One-axis covariance ``int_0^{min} K(s-u) K(t-u) du``.

    The diagonal is returned analytically as ``q(t)^2``.  Off the diagonal
    the integral is taken in the variable ``w = min(s,t) - u``; the power
    singularity of ``K`` at ``w = 0`` is flattened by ``w = s*v^(1/nubar)``
    with ``nubar = nu/2`` before adaptive refinement, which makes the
    transformed integrand vanish polynomially at the origin for every
    supported gauge.
    """
    _check_axis(m, s, "s")
    _check_axis(m, t, "t")
    if s > t:
        s, t = t, s
    if s == 0.0:
        return 0.0
    if s == t:
        return float(m.gauge.q2(min(t, m.gauge.T)))
    g = m.gauge
    delta = t - s
    nubar = 0.5 * g.singularity_exponent
    inv_nubar = 1.0 / nubar

    def integrand(v):
        if v <= 0.0:
            return 0.0
        w = s * v ** inv_nubar
        if w == 0.0:
            return 0.0
        jac = s * inv_nubar * v ** (inv_nubar - 1.0)
        return float(g.kernel(w)) * float(g.kernel(w + delta)) * jac

    return quad_checked(integrand, 0.0, 1.0, m.quad.rtol,
                        limit=m.quad.max_subdivisions)


def cov(m: FieldModel, x, y) -> float:
    """Covariance of the field at two points: product of axis covariances."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (m.d,) or y.shape != (m.d,):
        raise DomainError("x and y must be d-vectors")
    out = 1.0
    for l in range(m.d):
        out *= cov1d(m, float(x[l]), float(y[l]))
        if out == 0.0:
            return 0.0
    return out


def canonical_metric(m: FieldModel, x, y) -> float:
    """L2 distance between field values at two points."""
    cxx = cov(m, x, x)
    cyy = cov(m, y, y)
    cxy = cov(m, x, y)
    rad = cxx + cyy - 2.0 * cxy
    scale = max(cxx, cyy, 1e-300)
    if rad < -1e-12 * scale:
        raise NumericalError(
            f"negative squared metric {rad:g} beyond round-off tolerance")
    return math.sqrt(max(rad, 0.0))


def gram(m: FieldModel, points) -> np.ndarray:
    """Gram matrix of the field on a finite point set (PSD, symmetric)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != m.d:
        raise DomainError("points must be d-vectors")
    n = pts.shape[0]
    if np.unique(pts, axis=0).shape[0] != n:
        raise DegenerateError("gram requires distinct points")
    G = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            G[i, j] = cov(m, pts[i], pts[j])
            G[j, i] = G[i, j]
    return 0.5 * (G + G.T)


# ---------------------------------------------------------------------------
# uniform-grid covariance via panel accumulation

def make_dyadic_grid(m: FieldModel, n: int):
    """Closed dyadic grid ``x = a + j*(b-a)*2^-n`` with both endpoints.

    Returns ``(points, axes)`` where points are in C order (last axis
    fastest), matching the Kronecker assembly of the product Gram.
    """
    if n < 0:
        raise DomainError("resolution must be nonnegative")
    a, b = m.box
    side = 2 ** n + 1
    axes = [a[l] + (b[l] - a[l]) * np.arange(side) / 2.0 ** n
            for l in range(m.d)]
    if m.d == 1:
        points = axes[0][:, None].copy()
    else:
        points = np.array(list(_iproduct(*axes)), dtype=float)
    return points, axes


def _panel_tables(m: FieldModel, t_axis: np.ndarray, n_offsets: int):
    """Node tables feeding the band/gram accumulation kernels."""
    g = m.gauge
    t = np.asarray(t_axis, dtype=float)
    N = t.size
    if N < 2:
        raise DomainError("grid axis needs at least two points")
    h = t[1] - t[0]
    if not np.allclose(np.diff(t), h, rtol=1e-10, atol=1e-300):
        raise DomainError("grid fast path requires uniform spacing")
    a = t[0]
    xg, wg = gauss_legendre_nodes(_PANEL_ORDER)
    # regular panels [t_p, t_{p+1}], p = 1..N-2; row 0 and N-1 unused
    K1 = np.zeros((N, _PANEL_ORDER))
    p = np.arange(1, N - 1)
    nodes = t[p][:, None] + xg[None, :] * h
    K1[1:N - 1] = g.kernel(nodes)
    Wg = wg * h
    offsets = np.arange(n_offsets) * h

    nubar = 0.5 * g.singularity_exponent
    xs, ws = gauss_legendre_nodes(_SINGULAR_ORDER)

    def singular_piece(upper, shifts):
        """int_0^upper K(w) K(w + shift) dw for each shift, flattened.

        Gauss-Legendre nodes are interior, so w stays strictly positive
        and the kernel values are finite even at shift 0.
        """
        w_sub = upper * xs ** (1.0 / nubar)
        jac = upper * (1.0 / nubar) * xs ** (1.0 / nubar - 1.0)
        k_base = g.kernel(w_sub)
        k_shift = g.kernel(w_sub[None, :] + shifts[:, None])
        return ((ws * jac)[None, :] * k_base[None, :] * k_shift).sum(axis=1)

    if a == 0.0:
        P0 = np.zeros(n_offsets)
        S01 = singular_piece(h, offsets)
    else:
        # prefix [0, a]: a flattened panel at zero plus regular sub-panels
        q_pref = max(int(math.ceil(a / h)), 1)
        hp = a / q_pref
        P0 = singular_piece(hp, offsets)
        if q_pref > 1:
            pp = np.arange(1, q_pref)
            nod = (pp[:, None] + xg[None, :]) * hp
            kb = g.kernel(nod)
            for idx, sh in enumerate(offsets):
                P0[idx] += float(np.sum((wg * hp)[None, :] * kb
                                        * g.kernel(nod + sh)))
        # panel [a, a+h] is regular; subdivide toward a to tame the nearby
        # kernel singularity when a is small
        edges = a + h * np.geomspace(2.0 ** -8, 1.0, 9)
        edges[0] = a
        S01 = np.zeros(n_offsets)
        for lo, hi in zip(edges[:-1], edges[1:]):
            nod = lo + xg * (hi - lo)
            kb = g.kernel(nod)
            for idx, sh in enumerate(offsets):
                S01[idx] += float(np.sum(wg * (hi - lo) * kb
                                         * g.kernel(nod + sh)))
    return K1, Wg, P0, S01


def _certify_diagonal(m: FieldModel, t_axis: np.ndarray, diag: np.ndarray):
    q2 = m.gauge.q2(t_axis)
    scale = np.maximum(q2, np.max(q2) * 1e-12 + 1e-300)
    err = float(np.max(np.abs(diag - q2) / scale))
    if err > 1e-7:
        raise QuadratureError(
            f"grid covariance failed the diagonal identity: "
            f"max relative deviation {err:.3e}")


def cov_band_1d(m: FieldModel, t_axis: np.ndarray,
                max_offset: int) -> np.ndarray:
    """Banded one-axis Gram: ``band[k, j] = cov(t_j, t_{j+k})``, k <= w."""
    t = np.asarray(t_axis, dtype=float)
    N = t.size
    w = min(max_offset, N - 1)
    K1, Wg, P0, S01 = _panel_tables(m, t, w + 1)
    band = np.zeros((w + 1, N))
    _kernels.band_fill(band, P0, S01, K1, Wg)
    _certify_diagonal(m, t, band[0])
    return band


def grid_gram_1d(m: FieldModel, t_axis: np.ndarray) -> np.ndarray:
    """Full one-axis Gram on a uniform grid (allocates N x N)."""
    t = np.asarray(t_axis, dtype=float)
    N = t.size
    K1, Wg, P0, S01 = _panel_tables(m, t, N)
    G = np.empty((N, N))
    _kernels.gram_fill(G, P0, S01, K1, Wg)
    _certify_diagonal(m, t, np.diag(G))
    return G


def grid_gram_nd(m: FieldModel, axes: Sequence[np.ndarray]) -> np.ndarray:
    """Gram on a product grid as the Kronecker product of axis Grams."""
    if len(axes) != m.d:
        raise DomainError("one axis per dimension required")
    G = grid_gram_1d(m, axes[0])
    for ax in axes[1:]:
        G = np.kron(G, grid_gram_1d(m, ax))
    return G


# ---------------------------------------------------------------------------
# factorization with recorded jitter

def _cholesky_inplace(G: np.ndarray) -> np.ndarray:
    arr = G.T if G.flags.c_contiguous and not G.flags.f_contiguous else G
    return scipy.linalg.cholesky(arr, lower=True, overwrite_a=True,
                                 check_finite=False)


def cholesky_with_jitter(G: np.ndarray,
                         rebuild: Optional[Callable[[], np.ndarray]] = None):
    """Factor ``G + lam*I`` with the escalating jitter policy.

    ``lam`` starts at ``1e-12 * max(diag)``, escalates by 10x and is capped
    at ``1e-6 * max(diag)``; the value actually used is returned so callers
    can record it.  ``rebuild`` regenerates ``G`` after a failed in-place
    attempt; when omitted a copy is factored instead.
    """
    max_diag = float(np.max(np.diag(G)))
    if max_diag <= 0.0:
        raise FactorizationError("Gram matrix has no positive diagonal")
    lam = _JITTER_START * max_diag
    cap = _JITTER_CAP * max_diag
    work = G if rebuild is not None else None
    while True:
        if work is None:
            work = G.copy()
        idx = np.arange(work.shape[0])
        work[idx, idx] += lam
        try:
            L = _cholesky_inplace(work)
            return L, lam
        except np.linalg.LinAlgError:
            work = rebuild() if rebuild is not None else None
            if lam >= cap:
                raise FactorizationError(
                    f"Cholesky failed at maximal jitter {lam:g}")
            lam = min(lam * _JITTER_STEP, cap)


# ---------------------------------------------------------------------------
# samplers

class CholeskySampler:
    """Exact sampler that factors the Gram once and draws many replicates.

    Replicate ``r`` uses the Philox substream ``(seed; cholesky, res, r)``,
    so draws are reproducible and independent of evaluation order.
    """

    def __init__(self, m: FieldModel, points: np.ndarray, *,
                 resolution: int = -1,
                 axes: Optional[Sequence[np.ndarray]] = None,
                 gram_matrix: Optional[np.ndarray] = None,
                 gram_rebuild: Optional[Callable[[], np.ndarray]] = None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] > m.grid_limit:
            raise DomainError(
                f"grid size {pts.shape[0]} exceeds the configured limit "
                f"{m.grid_limit}")
        self.model = m
        self.points = pts
        self.resolution = resolution
        if gram_matrix is not None:
            G = gram_matrix
            rebuild = gram_rebuild  # in-place factorization when provided
        elif axes is not None:
            if m.d == 1:
                G = grid_gram_1d(m, axes[0])
                rebuild = lambda: grid_gram_1d(m, axes[0])  # noqa: E731
            else:
                G = grid_gram_nd(m, axes)
                rebuild = lambda: grid_gram_nd(m, axes)  # noqa: E731
        else:
            G = gram(m, pts)
            rebuild = None
        self.L, self.jitter_used = cholesky_with_jitter(G, rebuild=rebuild)

    def draw(self, seed: int, replicate_index: int = 0) -> GridSample:
        rng = streams.stream(seed, streams.TAG_CHOLESKY,
                             max(self.resolution, 0) + 1, replicate_index)
        z = rng.standard_normal(self.points.shape[0])
        return GridSample(
            model_hash=self.model.model_hash, resolution=self.resolution,
            points=self.points, values=self.L @ z, seed=int(seed),
            replicate_index=int(replicate_index), sampler=SAMPLER_CHOLESKY,
            jitter_used=self.jitter_used)


def sample_cholesky(m: FieldModel, grid, seed: int,
                    replicate_index: int = 0, *,
                    resolution: int = -1,
                    axes: Optional[Sequence[np.ndarray]] = None) -> GridSample:
    """One exact draw; see :class:`CholeskySampler` for batched use."""
    sampler = CholeskySampler(m, grid, resolution=resolution, axes=axes)
    return sampler.draw(seed, replicate_index)


def sample_spectral(m: FieldModel, grid, seed: int, rank: int,
                    replicate_index: int = 0, *,
                    axes: Optional[Sequence[np.ndarray]] = None) -> GridSample:
    """Truncated eigenexpansion draw: ``values = U sqrt(Lambda) z``.

    At full rank this is distributionally identical to the Cholesky
    sampler; at lower rank it keeps the leading variance modes.
    """
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    if not 1 <= rank <= pts.shape[0]:
        raise DomainError("rank must lie in [1, number of grid points]")
    if pts.shape[0] > m.grid_limit:
        raise DomainError(
            f"grid size {pts.shape[0]} exceeds the configured limit")
    if axes is not None:
        G = grid_gram_nd(m, axes) if m.d > 1 else grid_gram_1d(m, axes[0])
    else:
        G = gram(m, pts)
    try:
        lam, U = np.linalg.eigh(G)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(lam)[::-1][:rank]
    lam_r = np.clip(lam[order], 0.0, None)
    rng = streams.stream(seed, streams.TAG_SPECTRAL, replicate_index)
    z = rng.standard_normal(rank)
    values = U[:, order] @ (np.sqrt(lam_r) * z)
    return GridSample(model_hash=m.model_hash, resolution=-1, points=pts,
                      values=values, seed=int(seed),
                      replicate_index=int(replicate_index),
                      sampler=SAMPLER_SPECTRAL)


def sample_moving_average(m: FieldModel, grid, seed: int,
                          oversample: int = 64,
                          replicate_index: int = 0) -> GridSample:
    """Approximate 1-d draw by discretizing the moving-average integral.

    Each grid cell is split into ``oversample`` substeps; the field value
    is the kernel-weighted sum of the substep white-noise increments with
    the kernel evaluated at substep midpoints.  The midpoint rule is
    biased near the kernel singularity (variance is underestimated and
    converges from below as ``oversample`` grows), so this sampler is a
    distributional cross-check only, never a verification input.
    """
    if m.d != 1:
        raise DomainError("moving-average sampler is restricted to d = 1")
    if oversample < 8:
        raise DomainError("oversample must be at least 8")
    t = np.asarray(grid, dtype=float).reshape(-1)
    if np.any(np.diff(t) <= 0) or t[0] < 0:
        raise DomainError("grid must be strictly increasing and nonnegative")
    breaks = t if t[0] == 0.0 else np.concatenate([[0.0], t])
    sub = (breaks[:-1, None]
           + np.diff(breaks)[:, None] * (np.arange(oversample) + 0.5)
           / oversample).ravel()
    widths = np.repeat(np.diff(breaks) / oversample, oversample)
    rng = streams.stream(seed, streams.TAG_MOVING_AVERAGE, replicate_index)
    dW = np.sqrt(widths) * rng.standard_normal(widths.size)
    offset = 0 if t[0] == 0.0 else 1
    values = np.zeros(t.size)
    for i, ti in enumerate(t):
        c = (i + offset) * oversample  # substeps strictly below t_i
        values[i] = m.gauge.kernel(ti - sub[:c]) @ dW[:c]
    return GridSample(model_hash=m.model_hash, resolution=-1,
                      points=t[:, None].copy(), values=values,
                      seed=int(seed), replicate_index=int(replicate_index),
                      sampler=SAMPLER_MOVING_AVERAGE)


def moving_average_discrete_variance(m: FieldModel, t: float,
                                     oversample: int,
                                     t_grid=None) -> float:
    """Exact variance of the discretized moving-average value at ``t``."""
    grid = np.asarray(t_grid, dtype=float) if t_grid is not None \
        else np.array([t])
    breaks = grid if grid[0] == 0.0 else np.concatenate([[0.0], grid])
    breaks = breaks[breaks <= t + 1e-15]
    sub = (breaks[:-1, None]
           + np.diff(breaks)[:, None] * (np.arange(oversample) + 0.5)
           / oversample).ravel()
    widths = np.repeat(np.diff(breaks) / oversample, oversample)
    k = m.gauge.kernel(t - sub)
    return float(np.sum(k * k * widths))


# ---------------------------------------------------------------------------
# serialization

def write_grid_sample(sample: GridSample, csv_path, sidecar_extra=None):
    """Write the sample as CSV plus a JSON sidecar.

    CSV columns are ``x_1..x_d,value`` with 17 significant digits so that
    downstream tools reproduce bit-exact values.
    """
    import pathlib

    csv_path = pathlib.Path(csv_path)
    d = sample.points.shape[1]
    header = ",".join(f"x_{l + 1}" for l in range(d)) + ",value"
    data = np.column_stack([sample.points, sample.values])
    np.savetxt(csv_path, data, fmt="%.17g", delimiter=",",
               header=header, comments="")
    sidecar = {
        "model": sample.model_hash,
        "seed": sample.seed,
        "replicate_index": sample.replicate_index,
        "sampler": sample.sampler,
        "jitter_used": sample.jitter_used,
        "resolution": sample.resolution,
    }
    if sidecar_extra:
        sidecar.update(sidecar_extra)
    csv_path.with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return csv_path
