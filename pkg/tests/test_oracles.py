"""The oracles are checked against brute force before anything is checked against them."""

import itertools

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from oracles import dense_dictionary, dense_lstsq_on, exhaustive_support, ml_change_points


def _brute_force_support(y, sigma, max_faults=2):
    A = dense_dictionary(y.size + 1, sigma)
    results = []
    for k in range(max_faults + 1):
        for combo in itertools.combinations(range(1, y.size + 1), k):
            fit = dense_lstsq_on(A, y, (0, *combo))
            results.append((float(np.sum((y - A @ fit) ** 2)), k, combo))
    floor = min(r[0] for r in results)
    tol = 1e-9 * max(float(y @ y), 1.0)
    return min((r for r in results if r[0] <= floor + tol), key=lambda r: (r[1], r[2]))[2]


@given(p=st.integers(3, 12), seed=st.integers(0, 2**32 - 1), noisy=st.booleans())
def test_exhaustive_support_matches_brute_force(p, seed, noisy):
    rng = np.random.default_rng(seed)
    beta = np.zeros(p)
    beta[0] = rng.normal()
    k = rng.integers(0, 3)
    beta[rng.choice(np.arange(1, p), size=min(k, p - 1), replace=False)] = rng.uniform(-3, -0.5, size=min(k, p - 1))
    y = dense_dictionary(p, 0.5) @ beta + (rng.normal(0, 0.3, p - 1) if noisy else 0)
    assert exhaustive_support(y, 0.5) == _brute_force_support(y, 0.5)


def test_dense_dictionary_rows():
    np.testing.assert_array_equal(dense_dictionary(4, 0.5), [[0.5, 1, 0, 0], [1.0, 1, 1, 0], [1.5, 1, 1, 1]])


def test_ml_change_points_noiseless():
    z = np.concatenate([np.zeros(30), -np.ones(50), -3 * np.ones(20)])
    slope = -0.01
    y = z + slope * np.arange(1, 101)
    np.testing.assert_array_equal(ml_change_points(y, 2, slope), [31, 81])
