"""Finite marked metric measure spaces.

A finite mmm-space is a list of atoms carrying a nonnegative weight and a
mark in R^m, together with the matrix of pairwise distances between atoms.
Atoms of zero weight lie outside the support of the measure and carry no
information; :func:`canonicalize` removes them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidMetric, ZeroMass

METRIC_TOL = 1e-9


@dataclass(frozen=True)
class MarkSpaceSpec:
    """Euclidean mark space R^dim (dim = 0 means unmarked)."""

    dim: int = 0

    def __post_init__(self):
        if self.dim < 0:
            raise ValueError(f"mark dimension must be >= 0, got {self.dim}")

    def distance(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return np.linalg.norm(a - b, axis=-1)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def check_metric(dist: np.ndarray, tol: float = METRIC_TOL) -> None:
    """Raise :class:`InvalidMetric` unless ``dist`` is a finite (pseudo)metric."""
    dist = np.asarray(dist, dtype=float)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise InvalidMetric(f"distance matrix must be square, got shape {dist.shape}")
    n = dist.shape[0]
    if n == 0:
        return
    if not np.all(np.isfinite(dist)):
        raise InvalidMetric("distance matrix has non-finite entries")
    if np.any(dist < -tol):
        raise InvalidMetric("negative distance")
    if np.any(np.abs(np.diag(dist)) > tol):
        raise InvalidMetric("nonzero diagonal")
    if np.any(np.abs(dist - dist.T) > tol):
        raise InvalidMetric("distance matrix is not symmetric")
    for k in range(n):
        via = dist[:, k, None] + dist[None, k, :]
        if np.any(dist > via + tol):
            raise InvalidMetric("triangle inequality violated")


@dataclass(frozen=True, eq=False)
class FiniteMmmSpace:
    """Finite representative of an mmm-space (X, d, mu).

    Parameters
    ----------
    dist : array of shape (n, n)
        Pairwise distances between atoms.
    weights : array of shape (n,)
        Nonnegative atom masses.
    marks : array of shape (n, m), optional
        Atom marks in R^m.  Defaults to an unmarked space (m = 0).
    check : bool
        Validate the metric axioms on construction (O(n^3)).
    """

    dist: np.ndarray
    weights: np.ndarray
    marks: np.ndarray = field(default=None)
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        dist = np.array(self.dist, dtype=float, copy=True)
        weights = np.array(self.weights, dtype=float, copy=True).reshape(-1)
        n = weights.shape[0]
        if dist.size == 0:
            dist = np.zeros((n, n))
        if self.marks is None:
            marks = np.zeros((n, 0))
        else:
            marks = np.array(self.marks, dtype=float, copy=True)
            if marks.ndim == 1:
                marks = marks.reshape(n, -1) if n else marks.reshape(0, 0)
        if dist.shape != (n, n):
            raise InvalidMetric(f"distance matrix shape {dist.shape} does not match {n} atoms")
        if marks.shape[0] != n:
            raise ValueError(f"marks have {marks.shape[0]} rows, expected {n}")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        if self.check:
            check_metric(dist)
        object.__setattr__(self, "dist", _readonly(dist))
        object.__setattr__(self, "weights", _readonly(weights))
        object.__setattr__(self, "marks", _readonly(marks))

    @classmethod
    def zero(cls, dim: int = 0) -> "FiniteMmmSpace":
        """The null space 0."""
        return cls(np.zeros((0, 0)), np.zeros(0), np.zeros((0, dim)), check=False)

    @classmethod
    def point(cls, weight: float, mark: Sequence[float] = ()) -> "FiniteMmmSpace":
        mark = np.asarray(mark, dtype=float).reshape(1, -1)
        return cls(np.zeros((1, 1)), [weight], mark, check=False)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.marks.shape[1]

    @property
    def mass(self) -> float:
        return total_mass(self)

    def is_zero(self) -> bool:
        return not np.any(self.weights > 0)

    def key(self) -> bytes:
        """Digest of the canonical form; equal keys mean identical canonical spaces."""
        cached = self.__dict__.get("_key")
        if cached is not None:
            return cached
        c = canonicalize(self)
        h = hashlib.sha1()
        h.update(np.int64(c.dim).tobytes())
        for arr in (c.weights, c.marks, c.dist):
            h.update(np.ascontiguousarray(arr).tobytes())
        object.__setattr__(self, "_key", h.digest())
        return self.__dict__["_key"]

    def to_dict(self, canonical: bool = True) -> dict:
        s = canonicalize(self) if canonical else self
        return {
            "dim": s.dim,
            "atoms": [
                {"weight": float(w), "mark": [float(v) for v in m]}
                for w, m in zip(s.weights, s.marks)
            ],
            "dist": [[float(v) for v in row] for row in s.dist],
        }

    @classmethod
    def from_dict(cls, data: dict, check: bool = True) -> "FiniteMmmSpace":
        dim = int(data.get("dim", 0))
        atoms = data.get("atoms", [])
        if not atoms:
            return cls.zero(dim)
        weights = [a["weight"] for a in atoms]
        marks = np.array([a.get("mark", []) for a in atoms], dtype=float).reshape(len(atoms), dim)
        return cls(np.array(data["dist"], dtype=float), weights, marks, check=check)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def loads(cls, text: str) -> "FiniteMmmSpace":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"FiniteMmmSpace(n={self.n}, dim={self.dim}, mass={self.mass:.6g})"


def total_mass(space: FiniteMmmSpace) -> float:
    """Total mass |X| of the sampling measure."""
    return float(np.sum(space.weights))


def canonicalize(space: FiniteMmmSpace) -> FiniteMmmSpace:
    """Drop zero-weight atoms and sort atoms into a reproducible order.

    Atoms are ordered by weight, then marks (lexicographically), then the
    sorted row of distances to the other kept atoms.
    """
    keep = np.flatnonzero(space.weights > 0)
    if keep.size == 0:
        return FiniteMmmSpace.zero(space.dim)
    dist = space.dist[np.ix_(keep, keep)]
    weights = space.weights[keep]
    marks = space.marks[keep]
    columns = [weights, *marks.T, *np.sort(dist, axis=1).T]
    order = np.lexsort(columns[::-1])
    return FiniteMmmSpace(
        dist[np.ix_(order, order)], weights[order], marks[order], check=False
    )


def normalize(space: FiniteMmmSpace) -> tuple[float, FiniteMmmSpace]:
    """Split a space into its mass and the renormalized probability space."""
    c = canonicalize(space)
    mass = total_mass(c)
    if mass <= 0:
        raise ZeroMass("cannot normalize the null space")
    return mass, FiniteMmmSpace(c.dist, c.weights / mass, c.marks, check=False)


def restrict(space: FiniteMmmSpace, keep: Iterable[int] | np.ndarray) -> FiniteMmmSpace:
    """Sub-space on the atoms ``keep`` (indices or a boolean mask)."""
    keep = np.asarray(keep if not isinstance(keep, (set, frozenset)) else sorted(keep))
    if keep.dtype == bool:
        if keep.shape != (space.n,):
            raise IndexError("boolean mask length does not match the number of atoms")
        keep = np.flatnonzero(keep)
    keep = np.unique(keep.astype(int))
    if keep.size and (keep[0] < 0 or keep[-1] >= space.n):
        raise IndexError("atom index out of range")
    if keep.size == 0:
        return FiniteMmmSpace.zero(space.dim)
    return FiniteMmmSpace(
        space.dist[np.ix_(keep, keep)], space.weights[keep], space.marks[keep], check=False
    )


def is_ultrametric(space: FiniteMmmSpace, tol: float = METRIC_TOL) -> bool:
    """True iff d(x, z) <= max(d(x, y), d(y, z)) for every triple of atoms."""
    d = space.dist
    for k in range(space.n):
        if np.any(d > np.maximum(d[:, k, None], d[None, k, :]) + tol):
            return False
    return True


def diameter(space: FiniteMmmSpace) -> float:
    """Diameter of the support."""
    keep = space.weights > 0
    if not np.any(keep):
        return 0.0
    return float(np.max(space.dist[np.ix_(keep, keep)]))


def random_space(
    rng: np.random.Generator,
    n_atoms: int,
    dim: int = 0,
    kind: str = "euclidean",
    mass: float | None = None,
) -> FiniteMmmSpace:
    """Random finite space for property sweeps.

    ``kind`` is ``"euclidean"`` (points in the plane), ``"ultrametric"``
    (random hierarchical merge heights) or ``"discrete"`` (rounded
    Euclidean distances repaired to a metric by shortest paths, so ties
    occur).  Weights are uniform on (0, 1], rescaled to ``mass`` if given.
    """
    n = int(n_atoms)
    if n < 1:
        raise ValueError("n_atoms must be >= 1")
    if kind == "ultrametric":
        dist = np.zeros((n, n))
        clusters = [[i] for i in range(n)]
        h = 0.0
        while len(clusters) > 1:
            h += rng.exponential(0.5)
            a, b = sorted(rng.choice(len(clusters), size=2, replace=False))
            for i in clusters[a]:
                for j in clusters[b]:
                    dist[i, j] = dist[j, i] = h
            clusters[a] = clusters[a] + clusters.pop(b)
    else:
        pts = rng.random((n, 2)) * 2
        dist = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        if kind == "discrete":
            dist = np.round(dist * 4) / 4
            for k in range(n):
                dist = np.minimum(dist, dist[:, k, None] + dist[None, k, :])
        elif kind != "euclidean":
            raise ValueError(f"unknown kind {kind!r}")
    weights = 1.0 - rng.random(n)
    if mass is not None:
        weights *= mass / weights.sum()
    marks = rng.normal(size=(n, dim))
    return FiniteMmmSpace(dist, weights, marks, check=False)
