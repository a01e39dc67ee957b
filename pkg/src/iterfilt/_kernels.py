"""Hot inner kernels, each in a numba and a pure-numpy flavour.

The public names (``ancestor_indices``, ``ancestor_indices_sorted``,
``pair_sums``, ``sorted_sum``, ``scatter_matrix``) are aliases for the
flavour selected by :mod:`iterfilt.accel`.  Both flavours of every
kernel are importable at all times (``*_numpy`` / ``*_numba``) so they
can be compared and benchmarked against each other in one process.

The index kernels and the summation kernels produce bit-identical
results under either backend; ``scatter_matrix`` agrees to
floating-point roundoff because the numpy flavour delegates to BLAS.
"""

import numpy as np

from . import accel

if accel.NUMBA_AVAILABLE:
    from numba import njit
else:  # pragma: no cover - exercised only when numba is absent
    njit = None


# --- ancestor index lookup ------------------------------------------------
#
# Given the running sum of nonnegative weights and sample positions in
# [0, total), return for each position the smallest index whose running
# sum exceeds it.  This is the inverse-CDF step shared by multinomial
# and systematic resampling.  Indices are clamped to the last particle
# to guard against positions that round up to exactly `total`.
# ``ancestor_indices_sorted`` requires ascending positions (systematic
# resampling produces them) and walks the running sum once instead of
# binary-searching per position.


def ancestor_indices_numpy(cum_weights, positions):
    n = cum_weights.shape[0]
    idx = np.searchsorted(cum_weights, positions, side="right")
    return np.minimum(idx, n - 1).astype(np.int64)


ancestor_indices_sorted_numpy = ancestor_indices_numpy


def _ancestor_indices_loop(cum_weights, positions, out):
    n = cum_weights.shape[0]
    for k in range(positions.shape[0]):
        v = positions[k]
        lo = 0
        hi = n
        while lo < hi:
            mid = (lo + hi) // 2
            if cum_weights[mid] <= v:
                lo = mid + 1
            else:
                hi = mid
        if lo > n - 1:
            lo = n - 1
        out[k] = lo
    return out


def _ancestor_indices_sorted_loop(cum_weights, positions, out):
    n = cum_weights.shape[0]
    i = 0
    for k in range(positions.shape[0]):
        v = positions[k]
        while i < n - 1 and cum_weights[i] <= v:
            i += 1
        out[k] = i
    return out


# --- order-insensitive summation ------------------------------------------
#
# Summing in ascending order makes weight totals exactly invariant under
# particle relabelling, so per-step conditional likelihoods depend only
# on the multiset of weights.  ``pair_sums`` expects the caller to have
# sorted ascending already (one shared np.sort per filter step) and
# returns the total and the total of squares in a single pass.


def pair_sums_numpy(ascending):
    if ascending.shape[0] == 0:
        return 0.0, 0.0
    total = float(np.cumsum(ascending)[-1])
    total_sq = float(np.cumsum(ascending * ascending)[-1])
    return total, total_sq


def _pair_sums_loop(ascending):
    total = 0.0
    total_sq = 0.0
    for k in range(ascending.shape[0]):
        v = ascending[k]
        total += v
        total_sq += v * v
    return total, total_sq


def sorted_sum_numpy(values):
    if values.shape[0] == 0:
        return 0.0
    return float(np.cumsum(np.sort(values))[-1])


def _sorted_sum_loop(values):
    if values.shape[0] == 0:
        return 0.0
    ordered = np.sort(values)
    total = 0.0
    for k in range(ordered.shape[0]):
        total += ordered[k]
    return total


# --- deviation scatter matrix ----------------------------------------------
#
# sum_j (row_j - center)(row_j - center)^T, the building block of the
# per-step parameter prediction variance.


def scatter_matrix_numpy(rows, center):
    dev = rows - center
    mat = dev.T @ dev
    return (mat + mat.T) / 2.0


def _scatter_matrix_loop(rows, center):
    n, d = rows.shape
    mat = np.zeros((d, d))
    for i in range(d):
        for j in range(i, d):
            acc = 0.0
            for k in range(n):
                acc += (rows[k, i] - center[i]) * (rows[k, j] - center[j])
            mat[i, j] = acc
            mat[j, i] = acc
    return mat


if njit is not None:
    _ancestor_indices_nb = njit(cache=True)(_ancestor_indices_loop)
    _ancestor_indices_sorted_nb = njit(cache=True)(_ancestor_indices_sorted_loop)
    pair_sums_numba = njit(cache=True)(_pair_sums_loop)
    sorted_sum_numba = njit(cache=True)(_sorted_sum_loop)
    scatter_matrix_numba = njit(cache=True)(_scatter_matrix_loop)

    def ancestor_indices_numba(cum_weights, positions):
        out = np.empty(positions.shape[0], dtype=np.int64)
        _ancestor_indices_nb(cum_weights, positions, out)
        return out

    def ancestor_indices_sorted_numba(cum_weights, positions):
        out = np.empty(positions.shape[0], dtype=np.int64)
        _ancestor_indices_sorted_nb(cum_weights, positions, out)
        return out

else:  # pragma: no cover - exercised only when numba is absent
    ancestor_indices_numba = None
    ancestor_indices_sorted_numba = None
    pair_sums_numba = None
    sorted_sum_numba = None
    scatter_matrix_numba = None


if accel.USING_NUMBA:
    ancestor_indices = ancestor_indices_numba
    ancestor_indices_sorted = ancestor_indices_sorted_numba
    pair_sums = pair_sums_numba
    sorted_sum = sorted_sum_numba
    scatter_matrix = scatter_matrix_numba
else:
    ancestor_indices = ancestor_indices_numpy
    ancestor_indices_sorted = ancestor_indices_sorted_numpy
    pair_sums = pair_sums_numpy
    sorted_sum = sorted_sum_numpy
    scatter_matrix = scatter_matrix_numpy
