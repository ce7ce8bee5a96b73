import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from vaguemm import FiniteMmmSpace
from vaguemm.mmm_core import random_space

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@st.composite
def spaces(draw, max_atoms=6, dim=None, kinds=("euclidean", "ultrametric", "discrete")):
    """Random finite spaces driven by a hypothesis-chosen seed."""
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(1, max_atoms))
    m = draw(st.integers(0, 2)) if dim is None else dim
    kind = draw(st.sampled_from(kinds))
    return random_space(np.random.default_rng(seed), n, m, kind)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_point():
    return FiniteMmmSpace([[0, 2], [2, 0]], [0.5, 0.5])


def random_expr(rng, k, dim, depth=3):
    """Random bounded expression tree reading atoms 0..k-1."""
    from vaguemm.monomials import Add, Const, Dist, ExpNeg, Inv1p, Mark, MinC, Mul

    def leaf():
        if dim and rng.random() < 0.3:
            return Mark(int(rng.integers(k)), int(rng.integers(dim)))
        i, j = rng.choice(k, size=2, replace=k < 2) if k > 1 else (0, 0)
        return Dist(int(i), int(j))

    def bounded(e):
        # squash a possibly unbounded subtree
        r = rng.random()
        if r < 0.4:
            return ExpNeg(float(rng.uniform(0.2, 2.0)), Mul((e, e)))
        if r < 0.7:
            return Inv1p(Mul((e, e)))
        return MinC(float(rng.uniform(0.5, 2.0)), ExpNeg(0.5, Mul((e, e))))

    def grow(d):
        if d == 0:
            return bounded(leaf())
        r = rng.random()
        if r < 0.35:
            return Add((grow(d - 1), grow(d - 1)))
        if r < 0.7:
            return Mul((grow(d - 1), grow(d - 1)))
        if r < 0.85:
            return Add((Const(float(rng.uniform(-1, 1))), grow(d - 1)))
        return bounded(leaf())

    return grow(depth)


def random_law(rng, n_atoms=None, scale=None, max_space_atoms=2, dim=1):
    """Random empirical law whose atoms are small random spaces."""
    from vaguemm.law_distances import EmpiricalLaw

    n_atoms = int(rng.integers(1, 6)) if n_atoms is None else n_atoms
    scale = float(rng.uniform(0.5, 2.0)) if scale is None else scale
    atoms = []
    for _ in range(n_atoms):
        k = int(rng.integers(1, max_space_atoms + 1))
        atoms.append(random_space(rng, k, dim, mass=float(rng.uniform(0.1, 2.5))))
    return EmpiricalLaw(scale, tuple(atoms), rng.random(n_atoms) + 0.05)


@st.composite
def laws(draw, **kw):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_law(np.random.default_rng(seed), **kw)
