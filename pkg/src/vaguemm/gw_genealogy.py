"""Galton-Watson genealogies with branching random walk marks.

A sample is a single-root GW forest run for ``n`` generations.  Its
generation-n survivors become the atoms of an ultrametric mmm-space: the
distance between two survivors is the time back to their most recent
common ancestor, and marks are random walk positions accumulated along the
lineage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .law_distances import EmpiricalLaw, Replicates
from .mmm_core import FiniteMmmSpace, restrict


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for replicate ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass(frozen=True)
class OffspringLaw:
    """Offspring distribution of the branching mechanism.

    Use the constructors :meth:`geometric_half`, :meth:`poisson_1`,
    :meth:`binary_half`, :meth:`geometric`, :meth:`poisson` or
    :meth:`custom`.
    """

    name: str
    pmf: np.ndarray | None = None  # finite support laws only
    param: float = 0.0

    @classmethod
    def geometric(cls, success: float) -> "OffspringLaw":
        """P(k) = s (1 - s)^k on {0, 1, ...}."""
        if not 0 < success <= 1:
            raise ValueError("success probability must lie in (0, 1]")
        return cls("geometric_half" if success == 0.5 else f"geometric({success})", None, success)

    @classmethod
    def geometric_half(cls) -> "OffspringLaw":
        return cls.geometric(0.5)

    @classmethod
    def poisson(cls, rate: float) -> "OffspringLaw":
        if rate < 0:
            raise ValueError("rate must be >= 0")
        return cls("poisson_1" if rate == 1 else f"poisson({rate})", None, rate)

    @classmethod
    def poisson_1(cls) -> "OffspringLaw":
        return cls.poisson(1.0)

    @classmethod
    def binary_half(cls) -> "OffspringLaw":
        return cls("binary_half", np.array([0.5, 0.0, 0.5]))

    @classmethod
    def custom(cls, pmf: Sequence[float], name: str = "custom") -> "OffspringLaw":
        pmf = np.asarray(pmf, dtype=float)
        if pmf.ndim != 1 or np.any(pmf < 0) or not math.isclose(pmf.sum(), 1.0, abs_tol=1e-12):
            raise ValueError("pmf must be a nonnegative vector summing to 1")
        return cls(name, pmf / pmf.sum())

    @classmethod
    def from_name(cls, name: str) -> "OffspringLaw":
        table = {
            "geometric_half": cls.geometric_half,
            "poisson_1": cls.poisson_1,
            "binary_half": cls.binary_half,
        }
        if name not in table:
            raise ValueError(f"unknown offspring family {name!r}")
        return table[name]()

    @property
    def kind(self) -> str:
        if self.pmf is not None:
            return "pmf"
        return "geometric" if self.name.startswith("geometric") else "poisson"

    def factorial_moments(self) -> tuple[float, float, float]:
        """E[xi], E[xi (xi - 1)], E[xi (xi - 1)(xi - 2)]."""
        if self.kind == "geometric":
            r = (1 - self.param) / self.param
            return r, 2 * r**2, 6 * r**3
        if self.kind == "poisson":
            lam = self.param
            return lam, lam**2, lam**3
        k = np.arange(self.pmf.size, dtype=float)
        return (
            float(np.dot(self.pmf, k)),
            float(np.dot(self.pmf, k * (k - 1))),
            float(np.dot(self.pmf, k * (k - 1) * (k - 2))),
        )

    @property
    def mean(self) -> float:
        return self.factorial_moments()[0]

    @property
    def variance(self) -> float:
        f1, f2, _ = self.factorial_moments()
        return f2 + f1 - f1 * f1

    def pgf(self, s):
        """Offspring generating function."""
        s = np.asarray(s, dtype=float)
        if self.kind == "geometric":
            return self.param / (1 - (1 - self.param) * s)
        if self.kind == "poisson":
            return np.exp(self.param * (s - 1))
        return np.polynomial.polynomial.polyval(s, self.pmf)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Offspring numbers of ``size`` individuals."""
        if self.kind == "geometric":
            return rng.geometric(self.param, size) - 1
        if self.kind == "poisson":
            return rng.poisson(self.param, size)
        return rng.choice(self.pmf.size, size=size, p=self.pmf)

    def sample_total(self, rng: np.random.Generator, parents: np.ndarray) -> np.ndarray:
        """Total offspring of ``parents[r]`` individuals, for each entry r."""
        parents = np.asarray(parents, dtype=np.int64)
        out = np.zeros_like(parents)
        alive = parents > 0
        if not alive.any():
            return out
        c = parents[alive]
        if self.kind == "geometric":
            out[alive] = rng.negative_binomial(c, self.param)
        elif self.kind == "poisson":
            out[alive] = rng.poisson(self.param * c)
        else:
            counts = rng.multinomial(c, self.pmf)
            out[alive] = counts @ np.arange(self.pmf.size)
        return out


@dataclass(frozen=True, eq=False)
class GenealogySample:
    """One GW forest grown from a single root for ``n`` generations.

    ``parents[t]`` gives, for every individual of generation t + 1, the
    index of its parent in generation t.  ``positions[t]`` holds the marks
    of generation t (shape ``(Z_t, mark_dim)``).
    """

    n: int
    parents: tuple
    positions: tuple
    mark_dim: int = 0

    @property
    def alive_count(self) -> np.ndarray:
        return np.array([p.shape[0] for p in self.positions])

    @property
    def size(self) -> int:
        """Z_n, the number of generation-n individuals."""
        return int(self.positions[self.n].shape[0])

    def ancestors(self, generation: int) -> np.ndarray:
        """Index in ``generation`` of the ancestor of each generation-n individual."""
        anc = np.arange(self.size)
        for t in range(self.n - 1, generation - 1, -1):
            anc = self.parents[t][anc]
        return anc

    def mrca_generation(self) -> np.ndarray:
        """Generation of the most recent common ancestor for every pair of survivors."""
        z = self.size
        out = np.zeros((z, z), dtype=np.int64)
        anc = np.arange(z)
        out[np.diag_indices(z)] = self.n
        for t in range(self.n - 1, -1, -1):
            anc = self.parents[t][anc]
            same = (anc[:, None] == anc[None, :]) & (out == 0)
            out[same] = t
            if z and np.all(anc == anc[0]):
                break
        return out

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mark_dim": self.mark_dim,
            "parents": [p.tolist() for p in self.parents],
            "positions": [p.tolist() for p in self.positions],
        }


def simulate(off: OffspringLaw, n: int, mark_dim: int = 0, rng_seed=0) -> GenealogySample:
    """Grow one GW forest from a single root for ``n`` generations.

    Children sit at their parent's position plus an independent standard
    Gaussian increment in each of the ``mark_dim`` coordinates.
    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    positions = [np.zeros((1, mark_dim))]
    parents = []
    for _ in range(n):
        z = positions[-1].shape[0]
        if z == 0:
            parents.append(np.zeros(0, dtype=np.int64))
            positions.append(np.zeros((0, mark_dim)))
            continue
        counts = off.sample(rng, z)
        par = np.repeat(np.arange(z), counts)
        pos = positions[-1][par]
        if mark_dim:
            pos = pos + rng.standard_normal((par.size, mark_dim))
        parents.append(par)
        positions.append(pos)
    for arr in (*parents, *positions):
        arr.setflags(write=False)
    return GenealogySample(n, tuple(parents), tuple(positions), mark_dim)


def simulate_batch(
    off: OffspringLaw, n: int, replicates: int, mark_dim: int = 0, seed: int = 0, threads: int = 1
) -> list[GenealogySample]:
    """Independent samples; replicate i uses the stream ``replicate_rng(seed, i)``.

    The result does not depend on ``threads``.
    """

    def one(i):
        return simulate(off, n, mark_dim, replicate_rng(seed, i))

    if threads <= 1:
        return [one(i) for i in range(replicates)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(one, range(replicates)))


def simulate_sizes(
    off: OffspringLaw,
    horizons: int | Sequence[int],
    replicates: int,
    seed: int = 0,
    block: int = 1 << 16,
    threads: int = 1,
) -> dict[int, np.ndarray]:
    """Population sizes Z_n only, for many replicates at once.

    All horizons are read off the same processes.  Replicates are processed
    in blocks with independent streams ``replicate_rng(seed, block_index)``,
    so results do not depend on ``threads``.  These streams differ from
    those of :func:`simulate_batch`.
    """
    hs = sorted({int(horizons)} if np.isscalar(horizons) else {int(h) for h in horizons})
    out = {h: np.zeros(replicates, dtype=np.int64) for h in hs}

    def run(b):
        start = b * block
        rng = replicate_rng(seed, b)
        m = min(block, replicates - start)
        z = np.ones(m, dtype=np.int64)
        idx = np.arange(m)  # replicates still alive
        for t in range(1, hs[-1] + 1):
            z = off.sample_total(rng, z)
            keep = z > 0
            z, idx = z[keep], idx[keep]
            if t in out:
                out[t][start + idx] = z
            if z.size == 0:
                break

    blocks = range(-(-replicates // block))
    if threads <= 1:
        for b in blocks:
            run(b)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run, blocks))
    return out


@dataclass(frozen=True)
class Scaling:
    """Normalization of a genealogy; ``None`` entries take the defaults 1/n, n and sqrt(n)."""

    mass_per_individual: float | None = None
    distance_divisor: float | None = None
    mark_divisor: float | None = None

    def resolve(self, n: int) -> tuple[float, float, float]:
        return (
            1.0 / n if self.mass_per_individual is None else self.mass_per_individual,
            float(n) if self.distance_divisor is None else self.distance_divisor,
            math.sqrt(n) if self.mark_divisor is None else self.mark_divisor,
        )


def to_mmm(sample: GenealogySample, scaling: Scaling = Scaling()) -> FiniteMmmSpace:
    """Ultrametric mmm-space of the generation-n survivors.

    Atoms are listed in the order of the generation-n individuals, so masks
    from :func:`cutoff` apply directly.
    """
    mass, ddiv, mdiv = scaling.resolve(sample.n)
    z = sample.size
    if z == 0:
        return FiniteMmmSpace.zero(sample.mark_dim)
    dist = (sample.n - sample.mrca_generation()) / ddiv
    marks = sample.positions[sample.n] / mdiv
    return FiniteMmmSpace(dist, np.full(z, mass), marks, check=False)


# -- cutoffs ---------------------------------------------------------------------


@dataclass(frozen=True)
class MassFloor:
    """Keep the whole sample if Z_n >= theta * n, nothing otherwise."""

    theta: float

    def keep(self, sample: GenealogySample) -> np.ndarray:
        z = sample.size
        return np.full(z, z >= self.theta * sample.n and z > 0)


@dataclass(frozen=True)
class ReducedTree:
    """Keep survivors whose ancestor at generation floor(n * delta) has another surviving descendant.

    Survivors alone in their subtree below that generation are dropped.
    Smaller ``delta`` looks closer to the root and keeps more individuals;
    ``delta = 0`` keeps everything.
    """

    delta: float

    def keep(self, sample: GenealogySample) -> np.ndarray:
        z = sample.size
        if self.delta <= 0 or z == 0:
            return np.ones(z, dtype=bool)
        g = min(int(math.floor(sample.n * self.delta)), sample.n)
        anc = sample.ancestors(g)
        _, inverse, counts = np.unique(anc, return_inverse=True, return_counts=True)
        return counts[inverse] >= 2


@dataclass(frozen=True)
class Restriction:
    """Generation-n individuals kept by a cutoff."""

    keep: np.ndarray

    def apply(self, space: FiniteMmmSpace) -> FiniteMmmSpace:
        return restrict(space, self.keep)


def cutoff(sample: GenealogySample, kind: MassFloor | ReducedTree) -> Restriction:
    """Restriction descriptor of ``sample`` under a cutoff."""
    return Restriction(kind.keep(sample))


# -- generating function oracles ------------------------------------------------------


@dataclass(frozen=True)
class GFOracle:
    survival: float
    mean: float
    second_moment: float
    third_moment: float


def gf_oracle(off: OffspringLaw, n: int) -> GFOracle:
    """Survival probability and first three moments of Z_n.

    Survival iterates the offspring generating function, 1 - f_n(0).
    Factorial moments follow by differentiating f_n = f o f_{n-1} at 1.
    """
    s = 0.0
    for _ in range(n):
        s = float(off.pgf(s))
    f1, f2, f3 = off.factorial_moments()
    F1, F2, F3 = 1.0, 0.0, 0.0
    for _ in range(n):
        F1, F2, F3 = (
            f1 * F1,
            f2 * F1**2 + f1 * F2,
            f3 * F1**3 + 3 * f2 * F1 * F2 + f1 * F3,
        )
    return GFOracle(1.0 - s, F1, F2 + F1, F3 + 3 * F2 + F1)


def linear_fractional_tail(n: int, j: int) -> float:
    """P(Z_n >= j) for geometric(1/2) offspring, j >= 1.

    Conditioned on survival Z_n is geometric on {1, 2, ...} with success
    probability 1/(n + 1), and P(Z_n > 0) = 1/(n + 1).
    """
    if j <= 0:
        return 1.0
    return (1.0 / (n + 1)) * (n / (n + 1)) ** (j - 1)


# -- laws ----------------------------------------------------------------------------


def genealogy_replicates(
    off: OffspringLaw,
    n: int,
    replicates: int,
    mark_dim: int = 0,
    seed: int = 0,
    scaling: Scaling = Scaling(),
    scale: float | None = None,
    threads: int = 1,
) -> tuple[Replicates, list[GenealogySample]]:
    """Replicate-aligned genealogy spaces with scale ``n`` by default."""
    samples = simulate_batch(off, n, replicates, mark_dim, seed, threads)
    spaces = tuple(to_mmm(s, scaling) for s in samples)
    return Replicates(float(n) if scale is None else scale, spaces), samples


def mass_law(
    off: OffspringLaw,
    n: int,
    replicates: int,
    seed: int = 0,
    mass_per_individual: float | None = None,
    scale: float | None = None,
) -> EmpiricalLaw:
    """Law of the genealogy collapsed to one point, grouped by population size.

    Each replicate contributes the one-atom space of mass Z_n / n (distances
    are all zero), so every monomial with phi == 1 takes the same value as
    on the full genealogy.  Identical atoms are merged, keeping the
    replicate count for standard errors.
    """
    z = simulate_sizes(off, n, replicates, seed)[n]
    return sizes_to_law(z, n, mass_per_individual, scale)


def _size_mass(values: np.ndarray, n: int, mass_per_individual: float | None) -> np.ndarray:
    # division keeps Z / n exact at thresholds such as 0.5 or 0.29
    return values / n if mass_per_individual is None else values * mass_per_individual


def sizes_to_law(z: np.ndarray, n: int, mass_per_individual: float | None = None, scale: float | None = None):
    """Collapsed law of population sizes ``z`` (one entry per replicate)."""
    values, counts = np.unique(z[z > 0], return_counts=True)
    spaces = tuple(FiniteMmmSpace.point(m) for m in _size_mass(values, n, mass_per_individual))
    return EmpiricalLaw(
        float(n) if scale is None else scale, spaces, counts / z.size, n_replicates=int(z.size)
    )


def size_replicates(
    z: np.ndarray, n: int, mass_per_individual: float | None = None, scale: float | None = None
) -> Replicates:
    """Replicate-aligned collapsed spaces: a point of mass Z / n, or the null space."""
    zero = FiniteMmmSpace.zero()
    values = np.unique(z[z > 0])
    points = dict(zip(values.tolist(), (FiniteMmmSpace.point(m) for m in _size_mass(values, n, mass_per_individual))))
    spaces = tuple(points[v] if v > 0 else zero for v in z.tolist())
    return Replicates(float(n) if scale is None else scale, spaces)


def write_jsonl(path, spaces: Iterable[FiniteMmmSpace], meta: dict) -> None:
    """Stream replicate spaces as JSON lines, one replicate per line."""
    with open(path, "w") as fh:
        for i, s in enumerate(spaces):
            fh.write(json.dumps({**meta, "replicate": i, "space": s.to_dict()}, separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path) -> tuple[list[FiniteMmmSpace], list[dict]]:
    spaces, metas = [], []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            spaces.append(FiniteMmmSpace.from_dict(rec.pop("space"), check=False))
            metas.append(rec)
    return spaces, metas
