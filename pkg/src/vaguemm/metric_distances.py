"""Prohorov and Gromov-Prohorov distances for finite spaces.

The Prohorov distance between two finite measures P, Q on a common finite
metric space is computed exactly.  For a threshold delta let F(delta) be the
maximal flow in the bipartite network source -> p_i -> {j : d(i, j) <= delta}
-> q_j -> sink.  By the supply-demand theorem,

    max_C P(C) - Q(C^delta) = |P| - F(delta),

so the smallest admissible eps on the interval of thresholds where the
neighbourhoods are constant is max(delta, max(|P|, |Q|) - F(delta)).  The
distance is the minimum of that quantity over the finitely many distinct
cross distances, found by bisection since the first term increases and the
second decreases.

The Gromov-Prohorov distance is bounded above by searching over glueings
(cross-distance matrices making the disjoint union a metric space) and below
by mass gaps and monomial discrepancies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .errors import BudgetExceeded, InvalidMetric, ZeroMass
from .mmm_core import METRIC_TOL, FiniteMmmSpace, canonicalize, check_metric, diameter, total_mass
from .monomials import Add, Dist, ExpNeg, Mark, Monomial, Mul, TestFunction, evaluate_exact

_FLOW_TOL = 1e-14


# -- max flow ------------------------------------------------------------------


@njit(cache=True)
def _flow_kernel(adj, p, q, f, greedy, tol):
    a, b = adj.shape
    supply = p - f.sum(axis=1)
    demand = q - f.sum(axis=0)
    if greedy:
        for i in range(a):
            for j in range(b):
                if supply[i] <= 0:
                    break
                if adj[i, j] and demand[j] > 0:
                    amt = min(supply[i], demand[j])
                    f[i, j] += amt
                    supply[i] -= amt
                    demand[j] -= amt
    left_parent = np.empty(a, np.int64)
    right_parent = np.empty(b, np.int64)
    left_seen = np.empty(a, np.bool_)
    right_seen = np.empty(b, np.bool_)
    queue = np.empty(a, np.int64)
    while True:
        # BFS in the residual graph from left nodes with spare supply
        head = 0
        tail = 0
        for i in range(a):
            left_seen[i] = supply[i] > tol
            left_parent[i] = -1
            if left_seen[i]:
                queue[tail] = i
                tail += 1
        if tail == 0:
            break
        right_seen[:] = False
        target = -1
        while head < tail and target < 0:
            i = queue[head]
            head += 1
            for j in range(b):
                if adj[i, j] and not right_seen[j]:
                    right_seen[j] = True
                    right_parent[j] = i
                    if demand[j] > tol:
                        target = j
                        break
                    for i2 in range(a):
                        if not left_seen[i2] and f[i2, j] > tol:
                            left_seen[i2] = True
                            left_parent[i2] = j
                            queue[tail] = i2
                            tail += 1
        if target < 0:
            break
        # bottleneck along the path back to the source
        bottleneck = demand[target]
        j = target
        while True:
            i = right_parent[j]
            jp = left_parent[i]
            if jp < 0:
                bottleneck = min(bottleneck, supply[i])
                break
            bottleneck = min(bottleneck, f[i, jp])
            j = jp
        j = target
        demand[target] -= bottleneck
        while True:
            i = right_parent[j]
            f[i, j] += bottleneck
            jp = left_parent[i]
            if jp < 0:
                supply[i] -= bottleneck
                break
            f[i, jp] = max(f[i, jp] - bottleneck, 0.0)
            j = jp
    return f


def _max_transport(adj: np.ndarray, p: np.ndarray, q: np.ndarray, flow: np.ndarray | None = None):
    """Maximal flow through a bipartite relation with unbounded middle edges.

    Augmenting paths on the residual graph, started from a greedy flow.
    Returns ``(value, flow_matrix)``.  ``flow`` may warm-start the search; it
    must be feasible for ``adj``.
    """
    p = np.ascontiguousarray(p, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    adj = np.ascontiguousarray(adj, dtype=np.bool_)
    f = np.zeros(adj.shape) if flow is None else np.array(flow, dtype=np.float64)
    tol = _FLOW_TOL * max(float(p.sum()), float(q.sum()), 1.0)
    f = _flow_kernel(adj, p, q, f, flow is None, tol)
    return float(f.sum()), f


def prohorov_cross(cross: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    """Prohorov distance when only distances between the two supports matter.

    ``cross[i, j]`` is the distance from atom i of P to atom j of Q.  Valid
    whenever P and Q live on a common (pseudo)metric space and ``cross`` is
    the block of its distance matrix between the two supports.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    P, Q = float(p.sum()), float(q.sum())
    M = max(P, Q)
    if M <= 0:
        return 0.0
    li = np.flatnonzero(p > 0)
    rj = np.flatnonzero(q > 0)
    if li.size == 0 or rj.size == 0:
        return M
    p, q = p[li], q[rj]
    sub = np.asarray(cross, dtype=float)[np.ix_(li, rj)]
    levels = np.unique(np.concatenate(([0.0], sub.ravel())))

    flows: dict[int, tuple[float, np.ndarray]] = {}

    def gap(idx: int) -> float:
        if idx not in flows:
            # warm start from the largest evaluated level below idx
            below = [k for k in flows if k < idx]
            warm = flows[max(below)][1] if below else None
            flows[idx] = _max_transport(sub <= levels[idx], p, q, warm)
        return max(M - flows[idx][0], 0.0)

    # first level with gap <= level
    lo, hi = 0, levels.size - 1
    if gap(hi) > levels[hi]:
        return gap(hi)
    while lo < hi:
        mid = (lo + hi) // 2
        if gap(mid) <= levels[mid]:
            hi = mid
        else:
            lo = mid + 1
    if lo == 0:
        return float(levels[0])
    return float(min(levels[lo], gap(lo - 1)))


def prohorov_exact(dist, p, q, check: bool = True) -> float:
    """Exact Prohorov distance between finite measures on a common space.

    Parameters
    ----------
    dist : array of shape (N, N)
        Metric on the union of the two supports.
    p, q : arrays of shape (N,)
        Nonnegative masses of the two measures.

    Returns
    -------
    float
        The smallest eps with P(C) <= Q(C^eps) + eps and Q(C) <= P(C^eps) + eps
        for all subsets C (as an infimum over open neighbourhoods).

    Raises
    ------
    InvalidMetric
        If ``dist`` is not a metric (checked when ``check`` is true).
    """
    dist = np.asarray(dist, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    if check:
        check_metric(dist)
    if p.shape != q.shape or p.shape[0] != dist.shape[0]:
        raise ValueError("weight vectors must match the distance matrix")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("weights must be nonnegative")
    if np.array_equal(p, q):
        return 0.0
    return prohorov_cross(dist, p, q)


def prohorov_bruteforce(dist, p, q) -> float:
    """Prohorov distance by enumerating all subsets C (at most 16 atoms).

    Works directly from the definition with closed neighbourhoods: the
    answer is the smallest candidate eps (a distance or an achievable
    mass difference) satisfying both inequalities for every subset.
    """
    dist = np.asarray(dist, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    N = p.size
    if N > 16:
        raise ValueError("brute force is limited to 16 atoms")
    if N == 0:
        return 0.0
    masks = ((np.arange(1 << N)[:, None] >> np.arange(N)) & 1).astype(bool)
    P_C = masks @ p
    Q_C = masks @ q
    levels = np.unique(np.concatenate(([0.0], dist.ravel())))

    def neighbourhood_mass(eps):
        near = (masks.astype(np.int64) @ (dist <= eps).astype(np.int64)) > 0
        return near @ p, near @ q

    cands = [levels]
    for delta in levels:
        Pn, Qn = neighbourhood_mass(delta)
        cands.append(P_C - Qn)
        cands.append(Q_C - Pn)
    cands = np.unique(np.concatenate(cands))
    cands = cands[cands >= 0]

    def feasible(eps):
        Pn, Qn = neighbourhood_mass(eps)
        slack = 1e-12 * max(1.0, p.sum(), q.sum())
        return bool(np.all(P_C <= Qn + eps + slack) and np.all(Q_C <= Pn + eps + slack))

    lo, hi = 0, cands.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(cands[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(cands[lo])


# -- glueings ---------------------------------------------------------------------


@dataclass(frozen=True)
class Glueing:
    """Cross distances between the atoms of two spaces.

    A glueing is admissible when the block matrix [[d, cross], [cross.T, d']]
    is a pseudometric; it then defines a common space Z with isometric
    embeddings of both spaces.
    """

    cross: np.ndarray

    def block(self, x: FiniteMmmSpace, y: FiniteMmmSpace) -> np.ndarray:
        c = np.asarray(self.cross, dtype=float)
        return np.block([[x.dist, c], [c.T, y.dist]])

    def is_admissible(self, x: FiniteMmmSpace, y: FiniteMmmSpace, tol: float = METRIC_TOL) -> bool:
        if np.any(np.asarray(self.cross) < -tol):
            return False
        try:
            check_metric(self.block(x, y), tol)
        except InvalidMetric:
            return False
        return True


@dataclass(frozen=True)
class GlueSearchConfig:
    """Settings of the glueing search behind :func:`gp_upper`."""

    n_seeds: int = 32
    n_steps: int = 200
    tol: float = 1e-9
    n_refine: int = 3
    refine_max_cross: int = 64
    anchor_atoms: int = 6
    embed_nodes: int = 20000
    seed: int = 0


DEFAULT_SEARCH = GlueSearchConfig()


def _mark_cross(x: FiniteMmmSpace, y: FiniteMmmSpace) -> np.ndarray:
    if x.dim == 0 and y.dim == 0:
        return np.zeros((x.n, y.n))
    if x.dim != y.dim:
        raise ValueError(f"mark dimensions differ: {x.dim} vs {y.dim}")
    diff = x.marks[:, None, :] - y.marks[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def anchor_glueing(dx, dy, anchors: Sequence[tuple[int, int]], slack=None) -> np.ndarray:
    """Cross matrix min_r d(i, a_r) + t_r + d'(b_r, j) over anchor pairs.

    Admissible when t_r + t_s >= |d(a_r, a_s) - d'(b_r, b_s)| for all anchor
    pairs; by default every t_r is half the distortion of the anchor relation.
    """
    a = np.array([r[0] for r in anchors], dtype=int)
    b = np.array([r[1] for r in anchors], dtype=int)
    if slack is None:
        dis = np.abs(dx[np.ix_(a, a)] - dy[np.ix_(b, b)])
        slack = np.full(a.size, dis.max() / 2 if dis.size else 0.0)
    slack = np.asarray(slack, dtype=float)
    # (n, r) + (r,) + (r, n')
    via = dx[:, a][:, :, None] + slack[None, :, None] + dy[b, :][None, :, :]
    return via.min(axis=1)


def _feasible_interval(C, dx, dy, i, j):
    col = C[:, j]
    row = C[i, :]
    mi = np.arange(C.shape[0]) != i
    mj = np.arange(C.shape[1]) != j
    upper = math.inf
    lower = 0.0
    if mi.any():
        dxi = dx[i, mi]
        cj = col[mi]
        upper = min(upper, float(np.min(dxi + cj)))
        lower = max(lower, float(np.max(dxi - cj)), float(np.max(cj - dxi)))
    if mj.any():
        dyj = dy[j, mj]
        ci = row[mj]
        upper = min(upper, float(np.min(dyj + ci)))
        lower = max(lower, float(np.max(dyj - ci)), float(np.max(ci - dyj)))
    return lower, upper


def _partial_isometry(x: FiniteMmmSpace, y: FiniteMmmSpace, node_limit: int, tol: float = 1e-9):
    """Largest-weight distance-preserving partial injection found by backtracking.

    Maps atoms of ``x`` into ``y``; candidates are ranked by mark and weight
    mismatch so that restrictions are embedded onto their originals first.
    """
    order = np.argsort(-x.weights, kind="stable")
    markd = _mark_cross(x, y)
    cost = markd + np.abs(x.weights[:, None] - y.weights[None, :])
    best: list[tuple[int, int]] = []
    best_w = -1.0
    nodes = 0
    assign: list[tuple[int, int]] = []
    used = np.zeros(y.n, dtype=bool)

    def rec(pos, w):
        nonlocal nodes, best, best_w
        if w > best_w:
            best, best_w = list(assign), w
        if pos == order.size or nodes >= node_limit:
            return
        u = order[pos]
        cands = np.argsort(cost[u], kind="stable")
        for v in cands:
            if used[v]:
                continue
            nodes += 1
            if nodes >= node_limit:
                return
            ok = all(abs(x.dist[u, uu] - y.dist[v, vv]) <= tol for uu, vv in assign)
            if not ok:
                continue
            assign.append((u, v))
            used[v] = True
            rec(pos + 1, w + x.weights[u])
            used[v] = False
            assign.pop()
            if best_w >= x.weights.sum() - 1e-15:
                return
        # leaving u unmatched
        rec(pos + 1, w)

    rec(0, 0.0)
    return best


def _seed_glueings(x, y, cfg: GlueSearchConfig, rng) -> list[np.ndarray]:
    dx, dy = x.dist, y.dist
    n, m = x.n, y.n
    seeds = []
    far = max(diameter(x), diameter(y)) / 2
    seeds.append(np.full((n, m), far))
    # isometric partial embeddings in both directions
    emb = _partial_isometry(x, y, cfg.embed_nodes)
    if emb:
        seeds.append(anchor_glueing(dx, dy, emb, np.zeros(len(emb))))
    emb = _partial_isometry(y, x, cfg.embed_nodes)
    if emb:
        seeds.append(anchor_glueing(dx, dy, [(a, b) for b, a in emb], np.zeros(len(emb))))
    # single anchors between heavy atoms
    top_x = np.argsort(-x.weights, kind="stable")[: cfg.anchor_atoms]
    top_y = np.argsort(-y.weights, kind="stable")[: cfg.anchor_atoms]
    for a in top_x:
        for b in top_y:
            seeds.append(anchor_glueing(dx, dy, [(a, b)], [0.0]))
    # rank correspondence of heavy atoms
    r = min(n, m)
    seeds.append(anchor_glueing(dx, dy, list(zip(np.argsort(-x.weights, kind="stable")[:r],
                                                 np.argsort(-y.weights, kind="stable")[:r]))))
    # random anchor relations
    for _ in range(cfg.n_seeds):
        size = int(rng.integers(1, r + 1))
        a = rng.choice(n, size=size, replace=False)
        b = rng.choice(m, size=size, replace=False)
        seeds.append(anchor_glueing(dx, dy, list(zip(a, b))))
    return seeds


def _descend(C, x, y, markd, p, q, cfg: GlueSearchConfig, rng, floor: float):
    dx, dy = x.dist, y.dist
    best = prohorov_cross(C + markd, p, q)
    scale = max(diameter(x), diameter(y), float(markd.max(initial=0.0)), 1e-12)
    h = 0.5 * scale
    coords = [(i, j) for i in range(C.shape[0]) for j in range(C.shape[1])]
    steps = 0
    while steps < cfg.n_steps and h > cfg.tol * scale and best > floor + 1e-12:
        improved = False
        for k in rng.permutation(len(coords)):
            if steps >= cfg.n_steps or best <= floor + 1e-12:
                break
            i, j = coords[k]
            lo, hi = _feasible_interval(C, dx, dy, i, j)
            if hi < lo:  # numerical slack; keep the current value
                continue
            cur = C[i, j]
            trial_best, trial_val = best, cur
            for v in (lo, hi, cur - h, cur + h):
                v = min(max(v, lo), hi)
                if v == cur:
                    continue
                C[i, j] = v
                val = prohorov_cross(C + markd, p, q)
                if val < trial_best - 1e-15:
                    trial_best, trial_val = val, v
            C[i, j] = trial_val
            if trial_best < best:
                best = trial_best
                improved = True
            steps += 1
        if not improved:
            h /= 2
    return best, C


def gp_search(x: FiniteMmmSpace, y: FiniteMmmSpace, cfg: GlueSearchConfig = DEFAULT_SEARCH):
    """Best glueing found by the search, with its Prohorov value.

    Returns ``(value, Glueing)``; the value is the Prohorov distance of the
    embedded measures on Z x E with the metric d_Z + d_E.  Rows and columns
    of the glueing follow the atom order of ``canonicalize(x)`` and
    ``canonicalize(y)``.
    """
    x = canonicalize(x)
    y = canonicalize(y)
    if x.is_zero() or y.is_zero():
        return max(total_mass(x), total_mass(y)), Glueing(np.zeros((x.n, y.n)))
    markd = _mark_cross(x, y)
    p, q = x.weights, y.weights
    if x.n == 1 and y.n == 1:
        # two points glued together; exact
        C = np.zeros((1, 1))
        return prohorov_cross(markd, p, q), Glueing(C)
    floor = abs(total_mass(x) - total_mass(y))
    rng = np.random.default_rng(cfg.seed)
    scored = []
    for C in _seed_glueings(x, y, cfg, rng):
        scored.append((prohorov_cross(C + markd, p, q), C))
        if scored[-1][0] <= floor + 1e-12:
            break
    scored.sort(key=lambda t: t[0])
    best_val, best_C = scored[0]
    if best_val > floor + 1e-12 and x.n * y.n <= cfg.refine_max_cross:
        for val, C in scored[: cfg.n_refine]:
            v, Cr = _descend(C.copy(), x, y, markd, p, q, cfg, rng, floor)
            if v < best_val:
                best_val, best_C = v, Cr
            if best_val <= floor + 1e-12:
                break
    return float(best_val), Glueing(best_C)


def _point_distance(x: FiniteMmmSpace, y: FiniteMmmSpace) -> float:
    # two single atoms: glue them together; the only cross distance is the mark gap
    a, b = float(x.weights[0]), float(y.weights[0])
    c = float(_mark_cross(x, y)[0, 0])
    if c == 0.0:
        return abs(a - b)
    return min(max(a, b), max(c, abs(a - b)))


def gp_upper(x: FiniteMmmSpace, y: FiniteMmmSpace, cfg: GlueSearchConfig = DEFAULT_SEARCH) -> float:
    """Upper bound on the Gromov-Prohorov distance from the best glueing found.

    Every admissible glueing yields a common metric space, so the returned
    value always dominates d_GP.  Deterministic for a fixed ``cfg``.
    """
    if x.n == 1 and y.n == 1 and x.weights[0] > 0 and y.weights[0] > 0:
        return _point_distance(x, y)
    kx, ky = x.key(), y.key()
    if kx == ky:
        return 0.0
    if ky < kx:  # argument order must not matter
        x, y = y, x
    return gp_search(x, y, cfg)[0]


# -- lower bound ---------------------------------------------------------------------


@dataclass(frozen=True)
class _Certified:
    mono: Monomial
    lip: float  # |phi(x) - phi(y)| <= lip * eps for tuples coupled within eps


def _certified_family(dim: int) -> list[_Certified]:
    out = []
    for lam in (0.5, 1.0, 2.0):
        out.append(_Certified(Monomial(2, TestFunction(ExpNeg(lam, Dist(0, 1)), 2)), 2 * lam))
        s3 = Add((Dist(0, 1), Dist(0, 2), Dist(1, 2)))
        out.append(_Certified(Monomial(3, TestFunction(ExpNeg(lam, s3), 3)), 6 * lam))
        if dim:
            sq = Add(tuple(Mul((Mark(0, c), Mark(0, c))) for c in range(dim)))
            # gradient of exp(-lam |e|^2) has norm at most sqrt(2 lam / e)
            out.append(_Certified(Monomial(1, TestFunction(ExpNeg(lam, sq), 1)),
                                  math.sqrt(2 * lam / math.e)))
    return out


def _monomial_bound(delta: float, P: float, Q: float, k: int, B: float, L: float) -> float:
    """Smallest eps compatible with a monomial gap ``delta``.

    If the Prohorov distance in some glueing is eps, a sub-coupling of mass
    F in [max(P, Q) - eps, min(P, Q)] moves atoms by at most eps, whence
    |Phi - Phi'| <= B (P^k + Q^k - 2 F^k) + F^k L eps.
    """
    M, m = max(P, Q), min(P, Q)

    def worst(eps):
        lo_F = max(M - eps, 0.0)
        c = L * eps - 2 * B
        return B * (P**k + Q**k) + max(m**k * c, lo_F**k * c)

    lo, hi = M - m, max(M, 1.0)
    while worst(hi) < delta:
        hi *= 2
        if hi > 1e12:
            return lo
    if worst(lo) >= delta:
        return lo
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if worst(mid) >= delta:
            hi = mid
        else:
            lo = mid
    return lo


def gp_lower(x: FiniteMmmSpace, y: FiniteMmmSpace, budget: int = 10**6) -> float:
    """Certified lower bound on the Gromov-Prohorov distance.

    The maximum of the mass gap ||X| - |X'|| and, for a fixed family of
    monomials with known sup-norm and Lipschitz constants, the smallest eps
    consistent with the observed monomial discrepancy.
    """
    P, Q = total_mass(x), total_mass(y)
    best = abs(P - Q)
    if P == 0 or Q == 0:
        return max(P, Q)
    dim = x.dim if x.dim == y.dim else 0
    for cert in _certified_family(dim):
        try:
            delta = abs(evaluate_exact(x, cert.mono, budget) - evaluate_exact(y, cert.mono, budget))
        except BudgetExceeded:
            continue
        # shave rounding so the bound stays certified
        delta = max(delta - 1e-12 * max(1.0, P, Q) ** cert.mono.order, 0.0)
        if delta > 0:
            best = max(best, _monomial_bound(delta, P, Q, cert.mono.order, cert.mono.bound, cert.lip))
    return best


def star_distance(x: FiniteMmmSpace, y: FiniteMmmSpace, cfg: GlueSearchConfig = DEFAULT_SEARCH) -> float:
    """Upper bound on |1/|X| - 1/|X'|| + (d_GP ^ 1), the metric on nonzero spaces."""
    P, Q = total_mass(x), total_mass(y)
    if P <= 0 or Q <= 0:
        raise ZeroMass("the distance on nonzero spaces needs both masses positive")
    return abs(1 / P - 1 / Q) + min(gp_upper(x, y, cfg), 1.0)
