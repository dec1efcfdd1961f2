"""Hot numeric kernels: numba-compiled with a pure-numpy fallback.

Two loops dominate runtime at fine resolutions: accumulating the banded
grid covariance from per-panel quadrature values, and scanning grid pairs
for the normalized-increment suprema.  Both are provided twice, as
``@njit`` kernels and as vectorized numpy implementations with identical
semantics.  The active backend is chosen at import time: numpy is used
when numba is unavailable or when the environment variable
``QFIELD_NO_NUMBA`` is set to a truthy value.

``benchmarks/bench_kernels.py`` times the two backends against each other.
"""

from __future__ import annotations

import math
import os
import warnings

import numpy as np

__all__ = [
    "USE_NUMBA", "band_fill", "gram_fill", "scan_band", "scan_dense",
]

_env = os.environ.get("QFIELD_NO_NUMBA", "").strip().lower()
_numpy_forced = _env in {"1", "true", "yes", "on"}

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via the env flag instead
    HAVE_NUMBA = False
    if not _numpy_forced:
        warnings.warn("numba not available; using the slower numpy kernels")

USE_NUMBA = HAVE_NUMBA and not _numpy_forced


# ---------------------------------------------------------------------------
# covariance accumulation
#
# On a uniform grid t_j = a + j*h the one-axis covariance is
# cov(t_j, t_{j+k}) = H(t_j, k*h) with H(t, d) = int_0^t K(w) K(w+d) dw.
# Splitting [0, t_j] at the grid points makes every panel integral a fixed
# Gauss-Legendre sum over node values K1[p, g], and the shifted factor
# K(w + k*h) lands exactly on the nodes of panel p+k.  H then fills by a
# running sum over panels.  P0[k] and S01[k] carry the (possibly singular)
# integrals up to t_0 and t_1, computed by the caller.

def _band_fill_numpy(band, P0, S01, K1, Wg):
    wmax = band.shape[0] - 1
    N = band.shape[1]
    for k in range(wmax + 1):
        band[k, 0] = P0[k]
        if k > N - 2:
            continue
        m = N - k  # valid j range: 0..m-1
        if m < 2:
            continue
        E = (K1[1:m - 1] * K1[1 + k:m - 1 + k]) @ Wg
        band[k, 1] = P0[k] + S01[k]
        if m > 2:
            band[k, 2:m] = band[k, 1] + np.cumsum(E)
    return band


def _gram_fill_numpy(G, P0, S01, K1, Wg):
    N = G.shape[0]
    row = np.empty(N)
    for k in range(N):
        m = N - k
        row[0] = P0[k]
        if m >= 2:
            row[1] = P0[k] + S01[k]
        if m > 2:
            E = (K1[1:m - 1] * K1[1 + k:m - 1 + k]) @ Wg
            row[2:m] = row[1] + np.cumsum(E)
        idx = np.arange(m)
        G[idx, idx + k] = row[:m]
        G[idx + k, idx] = row[:m]
    return G


# ---------------------------------------------------------------------------
# pair scans
#
# For each candidate pair the canonical metric dd comes from the exact
# covariance (band or dense Gram), the normalizing denominator
# dd*sqrt(log(diam/qinv(dd))) is linearly interpolated from a fine
# log-spaced table, and the normalized increment is folded into the
# deepest ladder rung whose epsilon still dominates dd.  Rung comparisons
# carry a 1e-12 relative snap: on dyadic grids many metrics land exactly
# on rung boundaries and accumulation-order noise must not flip them.

_SNAP = 1.0 + 1e-12


def _bucket_index_numpy(ladder_snapped_desc, d):
    asc = ladder_snapped_desc[::-1]
    pos = np.searchsorted(asc, d, side="left")
    return ladder_snapped_desc.size - 1 - pos


def _denom_numpy(d, logd0, inv_step, table):
    x = (np.log(d) - logd0) * inv_step
    i0 = np.clip(x.astype(np.int64), 0, table.size - 2)
    frac = x - i0
    return table[i0] * (1.0 - frac) + table[i0 + 1] * frac


def _scan_band_numpy(values, band, ladder, dmax, d2floor,
                     logd0, inv_step, table):
    L = ladder.size
    snapped = ladder * _SNAP
    bucket_max = np.zeros(L)
    bucket_cnt = np.zeros(L, dtype=np.int64)
    examined = 0
    zero_excluded = 0
    denom_excluded = 0
    N = values.size
    var = band[0]
    for k in range(1, band.shape[0]):
        m = N - k
        if m <= 0:
            break
        d2 = var[:m] + var[k:k + m] - 2.0 * band[k, :m]
        zero = d2 <= d2floor
        zero_excluded += int(np.count_nonzero(zero))
        live = ~zero
        examined += int(np.count_nonzero(live))
        d = np.sqrt(np.maximum(d2, 0.0))
        big = live & (d >= dmax)
        denom_excluded += int(np.count_nonzero(big))
        use = live & ~big & (d <= snapped[0])
        if not np.any(use):
            continue
        du = d[use]
        inc = np.abs(values[k:k + m][use] - values[:m][use])
        ratio = inc / _denom_numpy(du, logd0, inv_step, table)
        r = _bucket_index_numpy(snapped, du)
        np.maximum.at(bucket_max, r, ratio)
        np.add.at(bucket_cnt, r, 1)
    return bucket_max, bucket_cnt, examined, zero_excluded, denom_excluded


def _scan_dense_numpy(points, values, gram, radius, ladder, dmax, d2floor,
                      logd0, inv_step, table):
    L = ladder.size
    snapped = ladder * _SNAP
    bucket_max = np.zeros(L)
    bucket_cnt = np.zeros(L, dtype=np.int64)
    examined = 0
    zero_excluded = 0
    denom_excluded = 0
    P = values.size
    var = np.diag(gram).copy()
    r2 = radius * radius
    for i in range(P - 1):
        dx = points[i + 1:] - points[i]
        within = np.einsum("ij,ij->i", dx, dx) <= r2
        if not np.any(within):
            continue
        j = np.nonzero(within)[0] + i + 1
        d2 = var[i] + var[j] - 2.0 * gram[i, j]
        zero = d2 <= d2floor
        zero_excluded += int(np.count_nonzero(zero))
        live = ~zero
        examined += int(np.count_nonzero(live))
        d = np.sqrt(np.maximum(d2, 0.0))
        big = live & (d >= dmax)
        denom_excluded += int(np.count_nonzero(big))
        use = live & ~big & (d <= snapped[0])
        if not np.any(use):
            continue
        du = d[use]
        inc = np.abs(values[j][use] - values[i])
        ratio = inc / _denom_numpy(du, logd0, inv_step, table)
        r = _bucket_index_numpy(snapped, du)
        np.maximum.at(bucket_max, r, ratio)
        np.add.at(bucket_cnt, r, 1)
    return bucket_max, bucket_cnt, examined, zero_excluded, denom_excluded


if HAVE_NUMBA:
    from numba import njit

    @njit(cache=True, nogil=True)
    def _band_fill_numba(band, P0, S01, K1, Wg):  # pragma: no cover
        wmax = band.shape[0] - 1
        N = band.shape[1]
        Gn = Wg.size
        for k in range(wmax + 1):
            band[k, 0] = P0[k]
            if k > N - 2:
                continue
            m = N - k
            if m < 2:
                continue
            acc = P0[k] + S01[k]
            band[k, 1] = acc
            for j in range(2, m):
                p = j - 1
                e = 0.0
                for g in range(Gn):
                    e += Wg[g] * K1[p, g] * K1[p + k, g]
                acc += e
                band[k, j] = acc
        return band

    @njit(cache=True, nogil=True)
    def _gram_fill_numba(G, P0, S01, K1, Wg):  # pragma: no cover
        N = G.shape[0]
        Gn = Wg.size
        for k in range(N):
            m = N - k
            G[0, k] = P0[k]
            G[k, 0] = P0[k]
            if m < 2:
                continue
            acc = P0[k] + S01[k]
            G[1, 1 + k] = acc
            G[1 + k, 1] = acc
            for j in range(2, m):
                p = j - 1
                e = 0.0
                for g in range(Gn):
                    e += Wg[g] * K1[p, g] * K1[p + k, g]
                acc += e
                G[j, j + k] = acc
                G[j + k, j] = acc
        return G

    @njit(cache=True, nogil=True)
    def _scan_band_numba(values, band, ladder, dmax, d2floor,
                         logd0, inv_step, table):  # pragma: no cover
        L = ladder.size
        snapped = ladder * _SNAP
        bucket_max = np.zeros(L)
        bucket_cnt = np.zeros(L, dtype=np.int64)
        examined = 0
        zero_excluded = 0
        denom_excluded = 0
        N = values.size
        tmax = table.size - 2
        for k in range(1, band.shape[0]):
            m = N - k
            for j in range(m):
                d2 = band[0, j] + band[0, j + k] - 2.0 * band[k, j]
                if d2 <= d2floor:
                    zero_excluded += 1
                    continue
                examined += 1
                d = math.sqrt(d2)
                if d >= dmax:
                    denom_excluded += 1
                    continue
                if d > snapped[0]:
                    continue
                r = 0
                while r + 1 < L and snapped[r + 1] >= d:
                    r += 1
                x = (math.log(d) - logd0) * inv_step
                i0 = int(x)
                if i0 < 0:
                    i0 = 0
                elif i0 > tmax:
                    i0 = tmax
                frac = x - i0
                denom = table[i0] * (1.0 - frac) + table[i0 + 1] * frac
                ratio = abs(values[j + k] - values[j]) / denom
                if ratio > bucket_max[r]:
                    bucket_max[r] = ratio
                bucket_cnt[r] += 1
        return bucket_max, bucket_cnt, examined, zero_excluded, denom_excluded

    @njit(cache=True, nogil=True)
    def _scan_dense_numba(points, values, gram, radius, ladder, dmax,
                          d2floor, logd0, inv_step, table):  # pragma: no cover
        L = ladder.size
        snapped = ladder * _SNAP
        bucket_max = np.zeros(L)
        bucket_cnt = np.zeros(L, dtype=np.int64)
        examined = 0
        zero_excluded = 0
        denom_excluded = 0
        P = values.size
        dim = points.shape[1]
        r2 = radius * radius
        tmax = table.size - 2
        for i in range(P - 1):
            for j in range(i + 1, P):
                s = 0.0
                for l in range(dim):
                    dx = points[j, l] - points[i, l]
                    s += dx * dx
                if s > r2:
                    continue
                d2 = gram[i, i] + gram[j, j] - 2.0 * gram[i, j]
                if d2 <= d2floor:
                    zero_excluded += 1
                    continue
                examined += 1
                d = math.sqrt(d2)
                if d >= dmax:
                    denom_excluded += 1
                    continue
                if d > snapped[0]:
                    continue
                r = 0
                while r + 1 < L and snapped[r + 1] >= d:
                    r += 1
                x = (math.log(d) - logd0) * inv_step
                i0 = int(x)
                if i0 < 0:
                    i0 = 0
                elif i0 > tmax:
                    i0 = tmax
                frac = x - i0
                denom = table[i0] * (1.0 - frac) + table[i0 + 1] * frac
                ratio = abs(values[j] - values[i]) / denom
                if ratio > bucket_max[r]:
                    bucket_max[r] = ratio
                bucket_cnt[r] += 1
        return bucket_max, bucket_cnt, examined, zero_excluded, denom_excluded


if USE_NUMBA:
    band_fill = _band_fill_numba
    gram_fill = _gram_fill_numba
    scan_band = _scan_band_numba
    scan_dense = _scan_dense_numba
else:
    band_fill = _band_fill_numpy
    gram_fill = _gram_fill_numpy
    scan_band = _scan_band_numpy
    scan_dense = _scan_dense_numpy
