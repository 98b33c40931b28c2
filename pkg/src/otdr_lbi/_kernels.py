"""Compiled inner loops for the sparse Kaczmarz solver."""

import numba
import numpy as np


@numba.njit(cache=True, fastmath=True)
def _shrink(x, lam):
    # max(|x| - lam, 0) * sign(x), written branch-free
    return x - max(min(x, lam), -lam)


@numba.njit(cache=True, fastmath=True)
def _mean_abs_residual(y, v, sig_i, lam):
    n = y.shape[0]
    b0 = _shrink(v[0], lam)
    acc = 0.0
    level = 0.0
    for i in range(n):
        level += _shrink(v[i + 1], lam)
        acc += abs(y[i] - sig_i[i] * b0 - level)
    return acc / n


@numba.njit(cache=True, fastmath=True)
def kaczmarz_sweeps(y, v, inv_norm, sig_i, lam, k0, budget, eps):
    """Run up to ``budget`` cyclic row updates starting at iteration ``k0``.

    ``v`` is updated in place; beta is never stored because
    ``beta = shrink(v)`` is recomputed on the fly. The running sum of the
    freshly shrunk entries of row ``i - 1`` gives the inner product of row
    ``i`` in O(1) extra work.

    Returns ``(k, mean_abs_residual, converged)`` where the residual is the
    exact ``mean |y - A beta|`` at the last completed sweep (NaN if none).
    """
    n = y.shape[0]
    k = k0
    end = k0 + budget
    last = np.nan
    # prefix sum of shrink(v[1..i-1]) for a start in the middle of a sweep
    i = k % n + 1
    S = 0.0
    for c in range(1, i):
        S += _shrink(v[c], lam)
    while k < end:
        i = k % n + 1
        if i == 1:
            S = 0.0
        s = sig_i[i - 1]
        r = y[i - 1] - (s * _shrink(v[0], lam) + S + _shrink(v[i], lam))
        w = r * inv_norm[i - 1]
        v[0] += s * w
        S = 0.0
        for c in range(1, i + 1):
            vc = v[c] + w
            v[c] = vc
            S += vc - max(min(vc, lam), -lam)
        k += 1
        if i == n:
            last = _mean_abs_residual(y, v, sig_i, lam)
            if last < eps:
                return k, last, True
    return k, last, False
