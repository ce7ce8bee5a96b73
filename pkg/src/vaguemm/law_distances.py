"""Finite measures on nonzero mmm-spaces and the distances between them.

An :class:`EmpiricalLaw` is the atomic measure ``scale * sum_i w_i delta_{X_i}``.
Replicate-based laws (weights ``1/R`` over ``R`` independent draws, null
spaces dropped) remember ``R`` so that integrals carry a standard error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import PreconditionViolated
from .metric_distances import DEFAULT_SEARCH, GlueSearchConfig, gp_upper, prohorov_cross
from .mmm_core import FiniteMmmSpace, total_mass


@dataclass(frozen=True, eq=False)
class EmpiricalLaw:
    """The measure ``scale * sum_i weights[i] * delta_{spaces[i]}``.

    Parameters
    ----------
    scale : float
        Positive prefactor (c_n for c_n times the law of X_n).
    spaces : sequence of FiniteMmmSpace
        Atoms; null spaces are dropped on construction.
    weights : array-like, optional
        Per-atom weights, ``1/len(spaces)`` each by default.
    n_replicates : int, optional
        Number of i.i.d. replicates the weights ``1/R`` came from, counting
        dropped null replicates.  Enables standard errors.
    """

    scale: float
    spaces: tuple
    weights: np.ndarray = None
    n_replicates: int | None = None
    _masses: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        spaces = list(self.spaces)
        if self.weights is None:
            weights = np.full(len(spaces), 1.0 / max(len(spaces), 1))
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != len(spaces):
            raise ValueError("one weight per space expected")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        masses = np.array([total_mass(s) for s in spaces], dtype=float)
        keep = (masses > 0) & (weights > 0)
        object.__setattr__(self, "spaces", tuple(s for s, k in zip(spaces, keep) if k))
        object.__setattr__(self, "weights", weights[keep])
        object.__setattr__(self, "_masses", masses[keep])
        self.weights.setflags(write=False)
        self._masses.setflags(write=False)

    @classmethod
    def from_replicates(cls, spaces: Sequence[FiniteMmmSpace], scale: float) -> "EmpiricalLaw":
        R = len(spaces)
        return cls(scale, tuple(spaces), np.full(R, 1.0 / R), n_replicates=R)

    @classmethod
    def empty(cls, scale: float = 1.0) -> "EmpiricalLaw":
        return cls(scale, (), np.zeros(0))

    def __len__(self):
        return len(self.spaces)

    @property
    def masses(self) -> np.ndarray:
        """Total masses |X_i| of the atoms."""
        return self._masses

    @property
    def atom_weights(self) -> np.ndarray:
        """Masses ``scale * weights`` the measure puts on each atom."""
        return self.scale * self.weights

    @property
    def total(self) -> float:
        return float(self.scale * self.weights.sum())

    def mass_above(self, threshold: float) -> float:
        """Measure of {|X| >= threshold}."""
        return float(self.scale * self.weights[self._masses >= threshold].sum())

    def subset(self, keep: np.ndarray) -> "EmpiricalLaw":
        keep = np.asarray(keep, dtype=bool)
        return EmpiricalLaw(
            self.scale,
            tuple(s for s, k in zip(self.spaces, keep) if k),
            self.weights[keep],
            self.n_replicates,
        )

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "n_replicates": self.n_replicates,
            "atoms": [
                {"weight": float(w), "space": s.to_dict()} for w, s in zip(self.weights, self.spaces)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmpiricalLaw":
        atoms = data.get("atoms", [])
        return cls(
            float(data["scale"]),
            tuple(FiniteMmmSpace.from_dict(a["space"], check=False) for a in atoms),
            np.array([a["weight"] for a in atoms], dtype=float),
            data.get("n_replicates"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def restrict_eps(law: EmpiricalLaw, eps: float) -> EmpiricalLaw:
    """Restriction of the law to spaces of total mass at least ``eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return law.subset(law.masses >= eps)


def integrate(law: EmpiricalLaw, F: Callable[[FiniteMmmSpace], float]) -> float:
    """``scale * sum_i w_i F(X_i)``."""
    if len(law) == 0:
        return 0.0
    vals = np.array([F(s) for s in law.spaces], dtype=float)
    return float(law.scale * np.dot(law.weights, vals))


def integrate_with_error(law: EmpiricalLaw, F: Callable[[FiniteMmmSpace], float]) -> tuple[float, float]:
    """Integral and replicate-level standard error.

    The error treats the law as the empirical mean over ``n_replicates``
    i.i.d. draws, dropped null replicates contributing F(0) = 0.  Laws
    without a replicate count are exact measures and get error 0.
    """
    vals = np.array([F(s) for s in law.spaces], dtype=float)
    value = float(law.scale * np.dot(law.weights, vals)) if vals.size else 0.0
    return value, replicate_std_error(law, vals)


def replicate_std_error(law: EmpiricalLaw, vals: np.ndarray) -> float:
    R = law.n_replicates
    if not R or R < 2:
        return 0.0
    w = law.weights * R  # replicate multiplicities
    s1 = float(np.dot(w, vals))
    s2 = float(np.dot(w, vals * vals))
    mean = s1 / R
    var = max(s2 / R - mean * mean, 0.0) * R / (R - 1)
    return float(law.scale * math.sqrt(var / R))


# -- Prohorov distance between laws ------------------------------------------------


class PairCache:
    """Memo of pairwise glueing bounds keyed by canonical space digests."""

    def __init__(self, cfg: GlueSearchConfig = DEFAULT_SEARCH):
        self.cfg = cfg
        self._store: dict[tuple[bytes, bytes], float] = {}
        self.evaluations = 0

    def __call__(self, ka: bytes, a: FiniteMmmSpace, kb: bytes, b: FiniteMmmSpace) -> float:
        if ka == kb:
            return 0.0
        key = (ka, kb) if ka < kb else (kb, ka)
        if key not in self._store:
            self._store[key] = gp_upper(a, b, self.cfg)
            self.evaluations += 1
        return self._store[key]


class _NodeSet:
    """Deduplicated union of the atoms of two laws with a lazily filled distance matrix."""

    def __init__(self, law1: EmpiricalLaw, law2: EmpiricalLaw, cache: PairCache):
        index: dict[bytes, int] = {}
        spaces, keys, p, q = [], [], [], []
        for law, which in ((law1, 0), (law2, 1)):
            for s, w in zip(law.spaces, law.atom_weights):
                k = s.key()
                if k not in index:
                    index[k] = len(spaces)
                    spaces.append(s)
                    keys.append(k)
                    p.append(0.0)
                    q.append(0.0)
                (p if which == 0 else q)[index[k]] += w
        self.spaces, self.keys, self.cache = spaces, keys, cache
        self.p, self.q = np.array(p), np.array(q)
        self.masses = np.array([total_mass(s) for s in spaces])
        self.dist = np.full((len(spaces), len(spaces)), np.nan)
        np.fill_diagonal(self.dist, 0.0)

    def prohorov(self, threshold: float = 0.0, cap: float | None = None) -> float:
        """Prohorov distance between both laws restricted to masses >= threshold."""
        left = np.flatnonzero((self.p > 0) & (self.masses >= threshold))
        right = np.flatnonzero((self.q > 0) & (self.masses >= threshold))
        p, q = self.p[left], self.q[right]
        if np.array_equal(left, right) and np.array_equal(p, q):
            return 0.0
        M = max(p.sum(), q.sum())
        if M == 0:
            return 0.0
        far = M + 1.0
        # preliminary bound using only identical atoms
        cross = np.where(left[:, None] == right[None, :], 0.0, far)
        bound = prohorov_cross(cross, p, q)
        if cap is not None:
            bound = min(bound, cap)
        if bound > 0 and left.size and right.size:
            # the mass gap bounds d_GP from below: farther pairs cannot matter
            gaps = np.abs(self.masses[left][:, None] - self.masses[right][None, :])
            need = gaps < bound
            block = self.dist[np.ix_(left, right)]
            for a, b in np.argwhere(need & np.isnan(block)):
                i, j = left[a], right[b]
                d = self.cache(self.keys[i], self.spaces[i], self.keys[j], self.spaces[j])
                self.dist[i, j] = self.dist[j, i] = block[a, b] = d
            cross = np.where(need, np.minimum(block, far), far)
            bound = prohorov_cross(cross, p, q)
        return min(bound, cap) if cap is not None else bound


def law_prohorov(
    law1: EmpiricalLaw,
    law2: EmpiricalLaw,
    gp_cfg: GlueSearchConfig = DEFAULT_SEARCH,
    cap: float | None = None,
    cache: PairCache | None = None,
) -> float:
    """Prohorov distance between two empirical laws on (X, d_GP).

    The common space is the set of realized atoms with pairwise distances
    :func:`gp_upper`, so the result is an upper-bound estimator of the
    distance between the laws.  Pairs whose mass gap (a lower bound on
    d_GP) already exceeds a preliminary bound cannot change the answer and
    are not evaluated.  With ``cap`` the result is ``min(cap, D)``.
    """
    cache = cache if cache is not None else PairCache(gp_cfg)
    return _NodeSet(law1, law2, cache).prohorov(0.0, cap)


def vague_distance(
    law1: EmpiricalLaw,
    law2: EmpiricalLaw,
    gp_cfg: GlueSearchConfig = DEFAULT_SEARCH,
    cache: PairCache | None = None,
) -> float:
    """Integral of exp(-u) * min(1, D(M^(u), M'^(u))) over u > 0, evaluated exactly.

    Restrictions only change at atom masses, so the integrand is constant
    on each interval (b_{i-1}, b_i] between consecutive masses and the
    integral is a finite sum.
    """
    cache = cache if cache is not None else PairCache(gp_cfg)
    nodes = _NodeSet(law1, law2, cache)
    breaks = np.unique(np.concatenate((law1.masses, law2.masses)))
    total = 0.0
    prev = 0.0
    for b in breaks:
        d = nodes.prohorov(b, cap=1.0)
        if d > 0:
            # exp(-prev) - exp(-b) without cancellation
            total += d * math.exp(-prev) * -math.expm1(-(b - prev))
        prev = b
    return total


@dataclass(frozen=True)
class LemmaCheck:
    lhs: float
    rhs: float
    holds: bool


def lemma_bound_check(
    law_x: EmpiricalLaw,
    law_y: EmpiricalLaw,
    x: float,
    eps: float,
    gp_cfg: GlueSearchConfig = DEFAULT_SEARCH,
    cache: PairCache | None = None,
) -> LemmaCheck:
    """Compare the vague distance with x + eps (1 + M(|X| >= x - eps) + M'(|X| >= x - eps)).

    Raises
    ------
    PreconditionViolated
        Unless both laws share their scale and x > eps > D(law_x, law_y).
    """
    if not math.isclose(law_x.scale, law_y.scale, rel_tol=1e-12):
        raise PreconditionViolated("both laws must share the same scale")
    cache = cache if cache is not None else PairCache(gp_cfg)
    d = law_prohorov(law_x, law_y, gp_cfg, cache=cache)
    if not (x > eps > d):
        raise PreconditionViolated(f"need x > eps > D_Pr, got x={x}, eps={eps}, D_Pr={d}")
    lhs = vague_distance(law_x, law_y, gp_cfg, cache=cache)
    rhs = x + eps * (1 + law_x.mass_above(x - eps) + law_y.mass_above(x - eps))
    return LemmaCheck(lhs, rhs, lhs <= rhs + 1e-9)


@dataclass(frozen=True, eq=False)
class Replicates:
    """Replicate-aligned spaces (null spaces kept) with a common scale.

    Two ``Replicates`` built from the same draws are coupled: entry i of
    both refers to the same replicate.
    """

    scale: float
    spaces: tuple

    def law(self) -> EmpiricalLaw:
        return EmpiricalLaw.from_replicates(self.spaces, self.scale)

    def masses(self) -> np.ndarray:
        return np.array([total_mass(s) for s in self.spaces])

    def __len__(self):
        return len(self.spaces)
