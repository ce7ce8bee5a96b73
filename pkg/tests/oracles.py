"""Independent reference computations used by the tests."""

import math
from itertools import product

import numpy as np


def _subset_masks(n):
    return ((np.arange(1 << n)[:, None] >> np.arange(n)) & 1).astype(bool)


def prohorov_cross_batch(cross, p, q):
    """Prohorov distance for a batch of cross matrices by subset enumeration.

    ``cross`` has shape (G, n, m).  For a threshold l the worst defect is
    h(l) = max over subsets C of P(C) - Q(C^l) and Q(C) - P(C^l); the
    distance is the minimum over thresholds l in {0} and the cross entries
    of max(l, h(l)).
    """
    cross = np.asarray(cross, dtype=float)
    G, n, m = cross.shape
    p, q = np.asarray(p, float), np.asarray(q, float)
    Sp, Sq = _subset_masks(n), _subset_masks(m)
    levels = np.concatenate([np.zeros((G, 1)), cross.reshape(G, -1)], axis=1)
    best = np.full(G, np.inf)
    for t in range(levels.shape[1]):
        lvl = levels[:, t]
        A = cross <= lvl[:, None, None]  # (G, n, m)
        # Q-mass within lvl of each P-subset, and vice versa
        reach_q = np.einsum("sn,gnm->gsm", Sp.astype(float), A.astype(float)) > 0
        reach_p = np.einsum("sm,gnm->gsn", Sq.astype(float), A.astype(float)) > 0
        h1 = (Sp @ p)[None, :] - reach_q @ q
        h2 = (Sq @ q)[None, :] - reach_p @ p
        h = np.maximum(h1.max(axis=1), h2.max(axis=1))
        best = np.minimum(best, np.maximum(lvl, h))
    return best


def _admissible(dx, dy, cross, tol=1e-9):
    G, n, m = cross.shape
    N = n + m
    Z = np.zeros((G, N, N))
    Z[:, :n, :n] = dx
    Z[:, n:, n:] = dy
    Z[:, :n, n:] = cross
    Z[:, n:, :n] = cross.transpose(0, 2, 1)
    ok = np.ones(G, dtype=bool)
    for k in range(N):
        ok &= np.all(Z <= Z[:, :, k, None] + Z[:, None, k, :] + tol, axis=(1, 2))
    return ok


def glueing_grid_optimum(x, y, step=0.01, hi=3.0):
    """Minimum Prohorov distance over all admissible glueings on a grid.

    Cross distances range over {0, step, ..., hi}; marks enter additively.
    Feasible only for at most two cross entries.
    """
    n, m = x.n, y.n
    if n * m > 2:
        raise ValueError("grid oracle supports at most two cross entries")
    axis = np.round(np.arange(0.0, hi + step / 2, step), 12)
    grid = np.array(list(product(axis, repeat=n * m))).reshape(-1, n, m)
    grid = grid[_admissible(x.dist, y.dist, grid)]
    marks = np.zeros((n, m))
    if x.dim == y.dim and x.dim:
        marks = np.linalg.norm(x.marks[:, None] - y.marks[None], axis=-1)
    return float(prohorov_cross_batch(grid + marks, x.weights, y.weights).min())


def gw_survival_geometric_half(n):
    return 1.0 / (n + 1)


def gw_tail_given_survival(n, j):
    """P(Z_n >= j | Z_n > 0) for geometric(1/2) offspring: geometric with ratio n/(n+1)."""
    return (n / (n + 1.0)) ** (j - 1)


def gw_raw_moments(n):
    """E Z_n, E Z_n^2, E Z_n^3 for geometric(1/2) offspring, from the explicit pmf.

    P(Z_n = j) = (1/(n+1))^2 (n/(n+1))^(j-1) for j >= 1; the sums are done
    with the standard polylog identities for a geometric law.
    """
    s = 1.0 / (n + 1)
    r = n / (n + 1.0)
    # sum_j j^k r^(j-1) for k = 1, 2, 3
    m1 = 1 / (1 - r) ** 2
    m2 = (1 + r) / (1 - r) ** 3
    m3 = (1 + 4 * r + r * r) / (1 - r) ** 4
    return s * s * m1, s * s * m2, s * s * m3


def carleman_partial_sum_factorial_sq(K):
    """sum_{k<=K} ((k!)^2)^(-1/(2k)) = sum (k!)^(-1/k)."""
    return math.fsum(math.exp(-math.lgamma(k + 1) / k) for k in range(1, K + 1))
