"""Moment measures of measures on mmm-spaces and the method of moments.

For a law M on nonzero spaces, the moment measure of order k integrates
a test function phi as ``M_k[phi] = M[Phi]`` where Phi is the monomial of
phi.  Order 0 is the total mass of M.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import BudgetExceeded, NonPositiveMoment
from .law_distances import EmpiricalLaw, replicate_std_error
from .mmm_core import normalize
from .monomials import (
    DEFAULT_BUDGET,
    ONE,
    Monomial,
    TestFunction,
    evaluate_exact,
    evaluate_mc,
    exp_distance_family,
    one,
)


def _as_monomial(k: int, phi) -> Monomial:
    if isinstance(phi, Monomial):
        if phi.order != k:
            raise ValueError(f"monomial has order {phi.order}, expected {k}")
        return phi
    if phi is None or (isinstance(phi, str) and phi == ONE):
        return Monomial(k, one(k))
    if isinstance(phi, TestFunction):
        return Monomial(k, phi)
    raise TypeError(f"cannot build a monomial of order {k} from {phi!r}")


def _atom_seed(seed: int, i: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(i,))


def _value(space, mono, budget, mc_samples, seed_seq) -> tuple[float, float]:
    try:
        return evaluate_exact(space, mono, budget), 0.0
    except BudgetExceeded:
        return evaluate_mc(space, mono, mc_samples, int(seed_seq.generate_state(1)[0]))


def _atom_values(spaces, mono, budget, mc_samples, rng_seed):
    """Monomial value on each atom and the Monte Carlo error of each (0 when exact)."""
    vals = np.zeros(len(spaces))
    errs = np.zeros(len(spaces))
    for i, s in enumerate(spaces):
        vals[i], errs[i] = _value(s, mono, budget, mc_samples, _atom_seed(rng_seed, i))
    return vals, errs


def estimate_moment(
    law: EmpiricalLaw,
    k: int,
    phi=ONE,
    budget: int = DEFAULT_BUDGET,
    mc_samples: int = 4096,
    rng_seed: int = 0,
) -> tuple[float, float]:
    """Estimate ``M_k[phi]`` and its standard error.

    Parameters
    ----------
    law : EmpiricalLaw
    k : int
        Order; ``k = 0`` returns the total mass of the law.
    phi : TestFunction, Monomial or ONE
        Test function of arity ``k``.  A :class:`Monomial` is used as is,
        which allows lifted monomials.
    budget : int
        Term budget of exact evaluation per atom.  Atoms over budget fall
        back to Monte Carlo with ``mc_samples`` tuples.
    rng_seed : int
        Seed of the Monte Carlo fallback; atom i uses its own stream.

    Returns
    -------
    value, std_error : float
        The error combines the replicate-level error of the law (when it
        records a replicate count) with the Monte Carlo error of the atoms.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        if isinstance(phi, Monomial):
            raise ValueError("order 0 takes no test function")
        ones = np.ones(len(law))
        return law.total, replicate_std_error(law, ones)
    if len(law) == 0:
        return 0.0, 0.0
    mono = _as_monomial(k, phi)
    vals, errs = _atom_values(law.spaces, mono, budget, mc_samples, rng_seed)
    value = float(law.scale * np.dot(law.weights, vals))
    rep = replicate_std_error(law, vals)
    mc = float(law.scale * math.sqrt(np.dot(law.weights**2, errs**2)))
    return value, math.hypot(rep, mc)


@dataclass(frozen=True, eq=False)
class EmpiricalMomentMeasure:
    """Weighted samples of (distance matrix, marks) estimating a moment measure.

    ``dists`` has shape ``(N, k, k)``, ``marks`` shape ``(N, k, m)`` and
    ``weights`` shape ``(N,)``.  For order 0 there is a single empty sample
    whose weight is the total mass of the law.
    """

    order: int
    dists: np.ndarray
    marks: np.ndarray
    weights: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if self.dists.shape[1:] != (self.order, self.order):
            raise ValueError("distance samples must be k x k")

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))

    def integrate(self, phi=ONE) -> float:
        """Integral of phi (a TestFunction of arity k, or ONE)."""
        if isinstance(phi, str) and phi == ONE:
            return self.total
        if self.weights.size == 0:
            return 0.0
        return float(np.dot(self.weights, phi(self.dists, self.marks)))

    def mark_projection(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """Integral of a function of the k marks alone; ``f`` maps (N, k, m) to (N,)."""
        if self.weights.size == 0:
            return 0.0
        return float(np.dot(self.weights, f(self.marks)))

    def merged(self) -> "EmpiricalMomentMeasure":
        """Combine samples with identical distances and marks."""
        N = self.weights.size
        if N == 0:
            return self
        flat = np.concatenate((self.dists.reshape(N, -1), self.marks.reshape(N, -1)), axis=1)
        uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
        w = np.bincount(inverse.reshape(-1), weights=self.weights, minlength=uniq.shape[0])
        kk = self.order * self.order
        return EmpiricalMomentMeasure(
            self.order,
            uniq[:, :kk].reshape(-1, self.order, self.order),
            uniq[:, kk:].reshape(uniq.shape[0], self.order, self.marks.shape[2]),
            w,
            self.scale,
        )


def sample_moment_measure(
    law: EmpiricalLaw, k: int, tuples_per_atom: int, rng_seed: int = 0
) -> EmpiricalMomentMeasure:
    """Sample the moment measure of order k.

    Each atom X of the law contributes ``tuples_per_atom`` tuples drawn from
    its normalized measure, each weighted ``scale * w * |X|^k /
    tuples_per_atom``, so that integrating phi is unbiased for ``M_k[phi]``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if tuples_per_atom < 1:
        raise ValueError("tuples_per_atom must be >= 1")
    dim = law.spaces[0].dim if len(law) else 0
    T = tuples_per_atom
    dists, marks, weights = [], [], []
    for i, (s, w, mass) in enumerate(zip(law.spaces, law.weights, law.masses)):
        rng = np.random.default_rng(_atom_seed(rng_seed, i))
        idx = rng.choice(s.n, size=(T, k), p=s.weights / mass)
        dists.append(s.dist[idx[:, :, None], idx[:, None, :]])
        marks.append(s.marks[idx])
        weights.append(np.full(T, law.scale * w * mass**k / T))
    if not weights:
        return EmpiricalMomentMeasure(k, np.zeros((0, k, k)), np.zeros((0, k, dim)), np.zeros(0), law.scale)
    return EmpiricalMomentMeasure(
        k, np.concatenate(dists), np.concatenate(marks), np.concatenate(weights), law.scale
    )


# -- Carleman's condition ----------------------------------------------------------


@dataclass(frozen=True)
class CarlemanReport:
    """Finite-data view of the series sum_k m_k^(-1/(2k)).

    ``growth_fit`` holds least-squares coefficients of log m_k on
    (k log k, k^2, k, 1).  ``tail_power`` is the slope of log t_k against
    log k over the upper half of the indices; the series is flagged
    divergent-like when the terms decay no faster than 1/k.
    """

    terms: list
    partial_sums: list
    growth_fit: dict
    tail_power: float
    tail_rate: float
    divergent_like: bool

    @property
    def growth_exponent_fit(self) -> float:
        return self.growth_fit["k_log_k"]

    def to_dict(self) -> dict:
        return {
            "terms": self.terms,
            "partial_sums": self.partial_sums,
            "growth_fit": self.growth_fit,
            "tail_power": self.tail_power,
            "tail_rate": self.tail_rate,
            "divergent_like": self.divergent_like,
        }


POWER_SLACK = 0.05


def carleman_report(m: Sequence, K: int | None = None) -> CarlemanReport:
    """Partial sums of the Carleman series for total masses m_1, m_2, ...

    ``m[k - 1]`` is the order-k total mass.  Python integers of any size are
    accepted, so exact values such as ``2 ** (2 * k * k)`` do not overflow.

    Raises
    ------
    NonPositiveMoment
        If some m_k is not positive.
    """
    m = list(m)[: K if K is not None else None]
    if not m:
        raise ValueError("need at least one moment")
    logs = []
    for k, v in enumerate(m, start=1):
        if not v > 0:
            raise NonPositiveMoment(f"m_{k} = {v} is not positive")
        logs.append(math.log(v))
    k = np.arange(1, len(m) + 1, dtype=float)
    logm = np.array(logs)
    log_t = -logm / (2 * k)
    terms = np.exp(log_t)
    partial = np.cumsum(terms)

    design = np.column_stack((k * np.log(k), k * k, k, np.ones_like(k)))
    coef = np.linalg.lstsq(design, logm, rcond=None)[0]
    fit = dict(zip(("k_log_k", "k_sq", "k", "const"), (float(c) for c in coef)))

    tail = slice(len(m) // 2, None) if len(m) >= 4 else slice(0, None)
    if k[tail].size >= 2:
        power = float(np.polyfit(np.log(k[tail]), log_t[tail], 1)[0])
        rate = float(np.exp(np.polyfit(k[tail], log_t[tail], 1)[0]))
    else:
        power, rate = 0.0, 1.0
    return CarlemanReport(
        [float(t) for t in terms],
        [float(s) for s in partial],
        fit,
        power,
        rate,
        power >= -1.0 - POWER_SLACK,
    )


# -- method of moments ---------------------------------------------------------


def default_family(k: int, mark_dim: int = 0) -> dict:
    """phi == 1 together with the exponential separating family when it is not constant."""
    fam = {"one": one(k)}
    if k >= 2 or mark_dim > 0:
        for lam, phi in zip((0.5, 1.0, 2.0), exp_distance_family(k, mark_dim=mark_dim)):
            fam[f"exp_{lam:g}"] = phi
    return fam


def ramp(lo: float = 0.25, hi: float = 0.5) -> Callable[[float], float]:
    """Continuous g vanishing below ``lo`` and equal to 1 above ``hi``."""

    def g(x):
        return float(min(1.0, max(0.0, (x - lo) / (hi - lo))))

    g.description = f"ramp({lo:g},{hi:g})"
    return g


@dataclass
class MomentReport:
    """Trajectories of moment estimates across a sequence of laws."""

    labels: list
    rows: list  # dicts: label, k, phi, value, std_error, cauchy_gap, limit
    k0: list  # dicts: label, value, std_error
    renormalized: list  # dicts: label, k, phi, value
    carleman: CarlemanReport | None
    family: dict = field(default_factory=dict)

    def trajectory(self, k: int, phi: str = "one") -> tuple[np.ndarray, np.ndarray]:
        sel = [r for r in self.rows if r["k"] == k and r["phi"] == phi]
        return np.array([r["value"] for r in sel]), np.array([r["std_error"] for r in sel])

    def cauchy_gaps(self, k: int, phi: str = "one") -> np.ndarray:
        v, _ = self.trajectory(k, phi)
        return np.abs(np.diff(v))

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["label", "k", "phi", "value", "std_error", "cauchy_gap", "limit"]
        w = csv.DictWriter(buf, cols, lineterminator="\n")
        w.writeheader()
        for r in self.k0:
            w.writerow({"label": r["label"], "k": 0, "phi": "one", "value": repr(r["value"]),
                        "std_error": repr(r["std_error"]), "cauchy_gap": "", "limit": ""})
        for r in self.rows:
            w.writerow({c: (repr(r[c]) if isinstance(r[c], float) else ("" if r[c] is None else r[c]))
                        for c in cols})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "family": self.family,
            "k0": self.k0,
            "rows": self.rows,
            "renormalized": self.renormalized,
            "carleman": self.carleman.to_dict() if self.carleman else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def method_of_moments_diag(
    laws: Sequence[EmpiricalLaw],
    k_max: int,
    phi_family: Callable[[int], Mapping[str, TestFunction]] | None = None,
    labels: Sequence | None = None,
    limits: Mapping[tuple[int, str], float] | None = None,
    g: Callable[[float], float] | None = None,
    budget: int = DEFAULT_BUDGET,
    mc_samples: int = 4096,
    rng_seed: int = 0,
) -> MomentReport:
    """Tabulate moment estimates of a sequence of laws.

    Parameters
    ----------
    laws : sequence of EmpiricalLaw
    k_max : int
        Largest order; orders 1..k_max are tabulated, order 0 separately.
    phi_family : callable, optional
        ``k -> {name: TestFunction}``; defaults to :func:`default_family`.
    limits : mapping, optional
        Known limit values keyed by ``(k, name)``, copied into the rows.
    g : callable, optional
        Weight on total mass for the renormalized trajectory
        ``M[Phi(X / |X|) g(|X|)]``; defaults to :func:`ramp`.

    The Carleman report uses the order-k total masses of the last law.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    labels = list(labels) if labels is not None else list(range(len(laws)))
    dim = next((s.dim for law in laws for s in law.spaces), 0)
    phi_family = phi_family or (lambda k: default_family(k, dim))
    limits = dict(limits or {})
    g = g or ramp()

    rows, renorm, k0 = [], [], []
    for lab, law in zip(labels, laws):
        v, se = estimate_moment(law, 0)
        k0.append({"label": lab, "value": v, "std_error": se})
    normalized = [[(mass, normalize(s)[1]) for s, mass in zip(law.spaces, law.masses)] for law in laws]
    fam_desc = {}
    for k in range(1, k_max + 1):
        fam = phi_family(k)
        for name, phi in fam.items():
            fam_desc.setdefault(str(k), {})[name] = phi.to_dict()
            prev = None
            mono = Monomial(k, phi)
            for lab, law, normed in zip(labels, laws, normalized):
                v, se = estimate_moment(law, k, phi, budget, mc_samples, rng_seed)
                rows.append({
                    "label": lab, "k": k, "phi": name, "value": v, "std_error": se,
                    "cauchy_gap": None if prev is None else abs(v - prev),
                    "limit": limits.get((k, name)),
                })
                prev = v
                gw = np.array([g(mass) for mass, _ in normed])
                inner = np.array([
                    _value(x, mono, budget, mc_samples, _atom_seed(rng_seed, i))[0] if gm else 0.0
                    for i, ((_, x), gm) in enumerate(zip(normed, gw))
                ])
                renorm.append({"label": lab, "k": k, "phi": name,
                               "value": float(law.scale * np.dot(law.weights, gw * inner))})
    last = laws[-1]
    masses = [estimate_moment(last, k)[0] for k in range(1, k_max + 1)]
    try:
        carl = carleman_report(masses)
    except NonPositiveMoment:
        carl = None
    fam_desc["g"] = getattr(g, "description", repr(g))
    return MomentReport(labels, rows, k0, renorm, carl, fam_desc)
