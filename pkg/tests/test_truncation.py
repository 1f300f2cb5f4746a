"""Truncation study: how the N-mode covariance approaches its infinite-mode limit.

For lambda_k = -nu k^2 and power-law noise q_k = a k^-p the trace of gamma is
sum_k a k^-p (1 - e^{-2 nu k^2 t}) / (2 nu k^2), so the tail beyond N is at most
a / (2 nu) sum_{k>N} k^-(p+2) <= a / (2 nu (p+1) N^(p+1)).
"""
import mpmath as mp
import numpy as np
import pytest

from spdescore.malliavin import malliavin_covariance
from spdescore.spectral import make_dirichlet_laplacian, make_power_law_q


def trace_limit(a, p, nu, t):
    mp.mp.dps = 30
    f = lambda k: a * k ** (-p) * (1 - mp.e ** (-2 * nu * k**2 * t)) / (2 * nu * k**2)
    return float(mp.nsum(f, [1, mp.inf]))


@pytest.mark.parametrize("a, p, nu, t", [(1.0, 2.0, 1.0, 1.0), (0.5, 1.5, 0.1, 0.3), (2.0, 3.0, 2.0, 2.0)])
def test_trace_tail_bound(a, p, nu, t):
    limit = trace_limit(a, p, nu, t)
    prev = 0.0
    for N in (2, 4, 8, 16, 32, 64):
        tr = malliavin_covariance(make_dirichlet_laplacian(N, np.pi, nu), make_power_law_q(N, a, p), t).trace
        gap = limit - tr
        assert tr > prev  # each added mode carries positive variance
        assert -1e-12 * limit <= gap <= a / (2 * nu * (p + 1) * N ** (p + 1)) * (1 + 1e-9)
        prev = tr


def test_leading_block_is_truncation_invariant():
    """Adding modes never changes the covariance among the modes already present."""
    nu, t = 0.7, 0.9
    small = malliavin_covariance(make_dirichlet_laplacian(6, np.pi, nu), make_power_law_q(6, 1.0, 2.0), t).gamma
    big = malliavin_covariance(make_dirichlet_laplacian(24, np.pi, nu), make_power_law_q(24, 1.0, 2.0), t).gamma
    np.testing.assert_array_equal(big[:6, :6], small)
