"""Monomials: integrals of a bounded test function against mu^k.

A test function phi takes the k x k matrix of pairwise distances and the k
marks of a tuple of atoms.  It is represented as an expression tree so that
boundedness can be certified by interval evaluation, and so that it can be
serialized to JSON::

    {"op": "exp_neg", "lambda": 1.0, "arg": {"op": "dist", "i": 0, "j": 1}}
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import BudgetExceeded, UnboundedTestFunction, ZeroMass
from .mmm_core import FiniteMmmSpace, total_mass

DEFAULT_BUDGET = 10**8
_CHUNK = 1 << 16

INF = math.inf


def _imul(a: float, b: float) -> float:
    # interval endpoint product with 0 * inf = 0
    if a == 0 or b == 0:
        return 0.0
    return a * b


def _interval_mul(x, y):
    prods = [_imul(a, b) for a in x for b in y]
    return min(prods), max(prods)


def _interval_pow(x, p: int):
    lo, hi = x
    if p % 2 == 1:
        return lo**p, hi**p
    top = max(abs(lo), abs(hi)) ** p
    if lo <= 0 <= hi:
        return 0.0, top
    return min(abs(lo), abs(hi)) ** p, top


class Expr:
    """Node of a test-function expression tree."""

    def evaluate(self, D: np.ndarray, E: np.ndarray) -> np.ndarray:
        """Evaluate on a batch: ``D`` has shape (N, k, k), ``E`` shape (N, k, m)."""
        raise NotImplementedError

    def interval(self) -> tuple[float, float]:
        raise NotImplementedError

    def indices(self) -> frozenset[int]:
        """Atom positions the expression reads."""
        raise NotImplementedError

    def max_coord(self) -> int:
        return -1

    def to_dict(self) -> dict:
        raise NotImplementedError

    # composition sugar
    def __add__(self, other):
        return Add((self, _lift(other)))

    __radd__ = __add__

    def __mul__(self, other):
        return Mul((self, _lift(other)))

    __rmul__ = __mul__


def _lift(x) -> Expr:
    return x if isinstance(x, Expr) else Const(float(x))


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def evaluate(self, D, E):
        return np.full(D.shape[0], self.value)

    def interval(self):
        return self.value, self.value

    def indices(self):
        return frozenset()

    def to_dict(self):
        return {"op": "const", "value": self.value}


@dataclass(frozen=True)
class Dist(Expr):
    i: int
    j: int

    def __post_init__(self):
        if self.i < 0 or self.j < 0:
            raise ValueError("atom positions must be >= 0")

    def evaluate(self, D, E):
        return D[:, self.i, self.j]

    def interval(self):
        return (0.0, 0.0) if self.i == self.j else (0.0, INF)

    def indices(self):
        return frozenset((self.i, self.j))

    def to_dict(self):
        return {"op": "dist", "i": self.i, "j": self.j}


@dataclass(frozen=True)
class Mark(Expr):
    i: int
    coord: int = 0

    def evaluate(self, D, E):
        return E[:, self.i, self.coord]

    def interval(self):
        return -INF, INF

    def indices(self):
        return frozenset((self.i,))

    def max_coord(self):
        return self.coord

    def to_dict(self):
        return {"op": "mark", "i": self.i, "coord": self.coord}


@dataclass(frozen=True)
class Add(Expr):
    args: tuple

    def evaluate(self, D, E):
        out = self.args[0].evaluate(D, E)
        for a in self.args[1:]:
            out = out + a.evaluate(D, E)
        return out

    def interval(self):
        lo = hi = 0.0
        for a in self.args:
            alo, ahi = a.interval()
            lo += alo
            hi += ahi
        return lo, hi

    def indices(self):
        return frozenset().union(*(a.indices() for a in self.args))

    def max_coord(self):
        return max(a.max_coord() for a in self.args)

    def to_dict(self):
        return {"op": "add", "args": [a.to_dict() for a in self.args]}


@dataclass(frozen=True)
class Mul(Expr):
    args: tuple

    def evaluate(self, D, E):
        out = self.args[0].evaluate(D, E)
        for a in self.args[1:]:
            out = out * a.evaluate(D, E)
        return out

    def interval(self):
        # repeated factors are powers, which keeps mark**2 bounded below by 0
        result = (1.0, 1.0)
        for factor, power in Counter(self.args).items():
            result = _interval_mul(result, _interval_pow(factor.interval(), power))
        return result

    def indices(self):
        return frozenset().union(*(a.indices() for a in self.args))

    def max_coord(self):
        return max(a.max_coord() for a in self.args)

    def to_dict(self):
        return {"op": "mul", "args": [a.to_dict() for a in self.args]}


@dataclass(frozen=True)
class ExpNeg(Expr):
    """t -> exp(-lam * t)."""

    lam: float
    arg: Expr

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("exp_neg needs lambda >= 0")

    def evaluate(self, D, E):
        return np.exp(-self.lam * self.arg.evaluate(D, E))

    def interval(self):
        if self.lam == 0:
            return 1.0, 1.0
        lo, hi = self.arg.interval()
        return math.exp(-self.lam * hi), (INF if lo == -INF else math.exp(-self.lam * lo))

    def indices(self):
        return self.arg.indices()

    def max_coord(self):
        return self.arg.max_coord()

    def to_dict(self):
        return {"op": "exp_neg", "lambda": self.lam, "arg": self.arg.to_dict()}


@dataclass(frozen=True)
class MinC(Expr):
    """t -> min(t, c)."""

    c: float
    arg: Expr

    def evaluate(self, D, E):
        return np.minimum(self.arg.evaluate(D, E), self.c)

    def interval(self):
        lo, hi = self.arg.interval()
        return min(lo, self.c), min(hi, self.c)

    def indices(self):
        return self.arg.indices()

    def max_coord(self):
        return self.arg.max_coord()

    def to_dict(self):
        return {"op": "min", "c": self.c, "arg": self.arg.to_dict()}


@dataclass(frozen=True)
class Inv1p(Expr):
    """t -> 1 / (1 + t), only for arguments bounded below by something > -1."""

    arg: Expr

    def evaluate(self, D, E):
        return 1.0 / (1.0 + self.arg.evaluate(D, E))

    def interval(self):
        lo, hi = self.arg.interval()
        if lo <= -1:
            raise UnboundedTestFunction("inv1p argument may reach -1")
        return (0.0 if hi == INF else 1.0 / (1.0 + hi)), 1.0 / (1.0 + lo)

    def indices(self):
        return self.arg.indices()

    def max_coord(self):
        return self.arg.max_coord()

    def to_dict(self):
        return {"op": "inv1p", "arg": self.arg.to_dict()}


def expr_from_dict(data: dict[str, Any]) -> Expr:
    op = data["op"]
    if op == "const":
        return Const(float(data["value"]))
    if op == "dist":
        return Dist(int(data["i"]), int(data["j"]))
    if op == "mark":
        return Mark(int(data["i"]), int(data.get("coord", 0)))
    if op == "add":
        return Add(tuple(expr_from_dict(a) for a in data["args"]))
    if op == "mul":
        return Mul(tuple(expr_from_dict(a) for a in data["args"]))
    if op == "exp_neg":
        return ExpNeg(float(data["lambda"]), expr_from_dict(data["arg"]))
    if op == "min":
        return MinC(float(data["c"]), expr_from_dict(data["arg"]))
    if op == "inv1p":
        return Inv1p(expr_from_dict(data["arg"]))
    raise ValueError(f"unknown op {op!r}")


@dataclass(frozen=True)
class TestFunction:
    """Bounded continuous phi on k x k distance matrices and k marks.

    The bound is certified on construction: interval evaluation of the tree
    must be finite and contained in [-bound, bound].  When ``bound`` is not
    given, the interval bound is used.
    """

    __test__ = False  # not a pytest class

    expr: Expr
    arity: int
    bound: float | None = None

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError("test function arity must be >= 1")
        idx = self.expr.indices()
        if idx and max(idx) >= self.arity:
            raise ValueError(f"expression reads atom {max(idx)} but arity is {self.arity}")
        lo, hi = self.expr.interval()
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise UnboundedTestFunction(f"interval bound [{lo}, {hi}] is not finite")
        certified = max(abs(lo), abs(hi))
        if self.bound is None:
            object.__setattr__(self, "bound", certified)
        elif certified > self.bound * (1 + 1e-12) + 1e-300:
            raise UnboundedTestFunction(
                f"declared bound {self.bound} is below the certified bound {certified}"
            )

    @classmethod
    def constant(cls, value: float, arity: int) -> "TestFunction":
        return cls(Const(float(value)), arity)

    def __call__(self, D, E=None) -> np.ndarray:
        D = np.asarray(D, dtype=float)
        single = D.ndim == 2
        if single:
            D = D[None]
        if E is None:
            E = np.zeros(D.shape[:2] + (0,))
        E = np.asarray(E, dtype=float)
        if E.ndim == 2:
            E = E[None]
        out = self.expr.evaluate(D, E)
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {"arity": self.arity, "bound": self.bound, "expr": self.expr.to_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "TestFunction":
        if "op" in data:  # bare expression tree
            expr = expr_from_dict(data)
            arity = max(expr.indices(), default=0) + 1
            return cls(expr, arity)
        return cls(expr_from_dict(data["expr"]), int(data["arity"]), data.get("bound"))


@dataclass(frozen=True)
class Monomial:
    """|X|^mass_power times the integral of phi against mu^order."""

    order: int
    phi: TestFunction
    mass_power: int = 0

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("monomial order must be >= 1")
        if self.mass_power < 0:
            raise ValueError("mass_power must be >= 0")
        if self.phi.arity != self.order:
            raise ValueError(f"phi has arity {self.phi.arity}, monomial order is {self.order}")

    @property
    def bound(self) -> float:
        return self.phi.bound

    def __call__(self, space: FiniteMmmSpace) -> float:
        return evaluate_exact(space, self)


def monomial(phi: TestFunction | Expr | float, order: int | None = None, mass_power: int = 0) -> Monomial:
    """Convenience constructor accepting a bare expression or constant."""
    if isinstance(phi, TestFunction):
        return Monomial(order or phi.arity, phi, mass_power)
    expr = phi if isinstance(phi, Expr) else Const(float(phi))
    if order is None:
        order = max(expr.indices(), default=0) + 1
    return Monomial(order, TestFunction(expr, order), mass_power)


def lift_mass(mono: Monomial, extra: int) -> Monomial:
    """Monomial X -> |X|^extra * mono(X)."""
    if extra < 0:
        raise ValueError("extra must be >= 0")
    return Monomial(mono.order, mono.phi, mono.mass_power + extra)


def _tuple_arrays(space, positions, idx, k):
    """Distance and mark batches for tuples; ``idx`` has one column per used position."""
    N = idx.shape[0]
    D = np.zeros((N, k, k))
    E = np.zeros((N, k, space.dim))
    for a, pa in enumerate(positions):
        E[:, pa, :] = space.marks[idx[:, a]]
        for b, pb in enumerate(positions):
            if a != b:
                D[:, pa, pb] = space.dist[idx[:, a], idx[:, b]]
    return D, E


def evaluate_exact(space: FiniteMmmSpace, mono: Monomial, budget: int = DEFAULT_BUDGET) -> float:
    """Exact value of the monomial on a finite space.

    Sums over all ordered tuples with repetition.  Positions that phi does
    not read integrate out to powers of |X|, so only ``n ** r`` terms are
    visited, where r is the number of positions phi reads.

    Raises
    ------
    BudgetExceeded
        If ``n ** r`` exceeds ``budget``.
    """
    mass = total_mass(space)
    positions = sorted(mono.phi.expr.indices())
    r = len(positions)
    prefactor = mass ** (mono.order - r + mono.mass_power)
    if r == 0:
        return prefactor * float(mono.phi.expr.evaluate(np.zeros((1, 1, 1)), np.zeros((1, 1, space.dim)))[0])
    if mass == 0:
        return 0.0
    support = np.flatnonzero(space.weights > 0)
    n = support.size
    total_terms = n**r
    if total_terms > budget:
        raise BudgetExceeded(f"{n}^{r} = {total_terms} terms exceeds budget {budget}")
    w = space.weights[support]
    sub = FiniteMmmSpace(
        space.dist[np.ix_(support, support)], w, space.marks[support], check=False
    )
    total = 0.0
    for start in range(0, total_terms, _CHUNK):
        flat = np.arange(start, min(start + _CHUNK, total_terms))
        idx = np.empty((flat.size, r), dtype=np.int64)
        rem = flat
        for a in range(r - 1, -1, -1):
            idx[:, a] = rem % n
            rem = rem // n
        D, E = _tuple_arrays(sub, positions, idx, mono.order)
        vals = mono.phi.expr.evaluate(D, E)
        prod_w = np.prod(w[idx], axis=1)
        total += float(np.dot(prod_w, vals))
    return prefactor * total


def evaluate_mc(
    space: FiniteMmmSpace, mono: Monomial, n_samples: int, rng_seed: int
) -> tuple[float, float]:
    """Unbiased Monte Carlo estimate of a monomial and its standard error.

    Tuples are drawn i.i.d. from the normalized measure; the sample mean of
    phi is multiplied by ``|X| ** (order + mass_power)``.
    """
    mass = total_mass(space)
    if mass <= 0:
        raise ZeroMass("Monte Carlo evaluation needs a space of positive mass")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    scale = mass ** (mono.order + mono.mass_power)
    positions = sorted(mono.phi.expr.indices())
    r = len(positions)
    if r == 0:
        return scale * mono.phi.expr.evaluate(np.zeros((1, 1, 1)), np.zeros((1, 1, space.dim)))[0], 0.0
    rng = np.random.default_rng(rng_seed)
    p = space.weights / mass
    s1 = s2 = 0.0
    first = None
    constant = True
    for start in range(0, n_samples, _CHUNK):
        m = min(_CHUNK, n_samples - start)
        idx = rng.choice(space.n, size=(m, r), p=p)
        D, E = _tuple_arrays(space, positions, idx, mono.order)
        vals = mono.phi.expr.evaluate(D, E)
        if first is None:
            first = vals[0]
        if constant and np.any(vals != first):
            constant = False
        s1 += float(np.sum(vals))
        s2 += float(np.sum(vals * vals))
    if constant:
        return scale * float(first), 0.0
    mean = s1 / n_samples
    var = max(s2 / n_samples - mean * mean, 0.0) * n_samples / max(n_samples - 1, 1)
    return scale * mean, scale * math.sqrt(var / n_samples)


# -- built-in families -------------------------------------------------------

ONE = "ONE"


def one(order: int) -> TestFunction:
    """phi == 1 of the given arity."""
    return TestFunction.constant(1.0, order)


def exp_distance_family(order: int, lambdas=(0.5, 1.0, 2.0), mark_dim: int = 0) -> list[TestFunction]:
    """Products of exp(-lam * d_ij) over pairs and exp(-lam * e_ic^2) over marks.

    This is the finite separating surrogate used for weak convergence of
    moment measures.
    """
    out = []
    for lam in lambdas:
        factors = [ExpNeg(lam, Dist(i, j)) for i in range(order) for j in range(i + 1, order)]
        factors += [
            ExpNeg(lam, Mul((Mark(i, c), Mark(i, c)))) for i in range(order) for c in range(mark_dim)
        ]
        if not factors:
            factors = [Const(1.0)]
        expr = factors[0] if len(factors) == 1 else Mul(tuple(factors))
        out.append(TestFunction(expr, order))
    return out
