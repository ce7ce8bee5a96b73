import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vaguemm import FiniteMmmSpace, total_mass
from vaguemm.errors import NonPositiveMoment
from vaguemm.gw_genealogy import OffspringLaw, genealogy_replicates, simulate_sizes, sizes_to_law
from vaguemm.law_distances import EmpiricalLaw, integrate
from vaguemm.mmm_core import random_space
from vaguemm.moments import (
    EmpiricalMomentMeasure,
    carleman_report,
    default_family,
    estimate_moment,
    method_of_moments_diag,
    ramp,
    sample_moment_measure,
)
from vaguemm.monomials import ONE, Add, ExpNeg, Mark, Monomial, Mul, TestFunction, lift_mass, one

from conftest import laws, random_law
from oracles import carleman_partial_sum_factorial_sq, gw_raw_moments

GEOM = OffspringLaw.geometric_half()


@pytest.fixture(scope="module")
def gw_sizes():
    return simulate_sizes(GEOM, [25, 50, 100, 200], 400_000, seed=2024)


class TestEstimateMoment:
    def test_first_moment_critical(self, gw_sizes):
        v, se = estimate_moment(sizes_to_law(gw_sizes[200], 200), 1)
        assert abs(v - 1.0) <= 3 * se

    def test_second_moment(self, gw_sizes):
        n = 200
        v, se = estimate_moment(sizes_to_law(gw_sizes[n], n), 2)
        exact = gw_raw_moments(n)[1] / n
        assert exact == pytest.approx(2.005)
        assert abs(v - exact) <= 3 * se

    def test_order_zero(self, gw_sizes):
        n = 100
        v, se = estimate_moment(sizes_to_law(gw_sizes[n], n), 0)
        assert abs(v - n / (n + 1)) <= 3 * se

    def test_empty_law(self):
        assert estimate_moment(EmpiricalLaw.empty(), 2) == (0.0, 0.0)

    def test_negative_order(self):
        with pytest.raises(ValueError):
            estimate_moment(EmpiricalLaw.empty(), -1)

    @settings(max_examples=30)
    @given(laws(max_space_atoms=4), st.integers(1, 3))
    def test_equals_integral(self, law, k):
        phi = default_family(k, 1)["exp_1"]
        v, _ = estimate_moment(law, k, phi)
        assert v == pytest.approx(integrate(law, Monomial(k, phi)), rel=1e-12)

    @settings(max_examples=30)
    @given(laws(max_space_atoms=4), st.integers(1, 3), st.integers(0, 3))
    def test_lifting_reweights(self, law, k, j):
        phi = default_family(k, 1)["exp_0.5"]
        lifted, _ = estimate_moment(law, k, lift_mass(Monomial(k, phi), j))
        reweighted = EmpiricalLaw(law.scale, law.spaces, law.weights * law.masses**j)
        plain, _ = estimate_moment(reweighted, k, phi)
        assert lifted == pytest.approx(plain, rel=1e-12)

    @given(laws())
    def test_first_order_total(self, law):
        v, _ = estimate_moment(law, 1)
        assert v == pytest.approx(law.scale * np.dot(law.weights, law.masses), rel=1e-12)

    def test_mc_fallback(self):
        law = random_law(np.random.default_rng(8), 3, 1.0, max_space_atoms=1)
        big = random_space(np.random.default_rng(9), 60, 1, mass=1.2)
        law = EmpiricalLaw(1.0, law.spaces + (big,), np.ones(4))
        phi = default_family(3, 1)["exp_1"]
        exact, se0 = estimate_moment(law, 3, phi)
        approx, se = estimate_moment(law, 3, phi, budget=1000, mc_samples=2000, rng_seed=1)
        assert se0 == 0.0 and se > 0
        assert abs(approx - exact) <= 4 * se


class TestMomentMeasure:
    def test_single_point(self):
        law = EmpiricalLaw(2.0, (FiniteMmmSpace.point(3.0),), [1.0])
        mm = sample_moment_measure(law, 2, 50).merged()
        assert mm.weights.size == 1
        assert np.all(mm.dists == 0)
        assert mm.weights[0] == pytest.approx(2.0 * 9.0)

    @given(laws(max_space_atoms=4), st.integers(1, 3))
    def test_total_weight(self, law, k):
        mm = sample_moment_measure(law, k, 7, rng_seed=1)
        assert mm.total == pytest.approx(law.scale * np.dot(law.weights, law.masses**k), rel=1e-12)
        assert mm.integrate(ONE) == pytest.approx(estimate_moment(law, k)[0], rel=1e-12)

    @given(laws(max_space_atoms=4), st.integers(1, 3))
    def test_matrices(self, law, k):
        mm = sample_moment_measure(law, k, 5)
        assert np.allclose(mm.dists, mm.dists.transpose(0, 2, 1))
        assert np.all(np.diagonal(mm.dists, axis1=1, axis2=2) == 0)

    def test_unbiased_for_test_function(self):
        law = random_law(np.random.default_rng(3), 4, 1.3, max_space_atoms=5)
        phi = default_family(2, 1)["exp_2"]
        T = 20_000
        mm = sample_moment_measure(law, 2, T, rng_seed=5)
        vals = phi(mm.dists, mm.marks)
        # per-atom blocks of T tuples give the sampling error
        blocks = (mm.weights * vals).reshape(len(law), T) * T
        se = math.sqrt(np.sum(blocks.var(axis=1, ddof=1) / T))
        assert abs(mm.integrate(phi) - estimate_moment(law, 2, phi)[0]) <= 4 * se

    def test_mark_projection(self):
        # mark-only phi: the moment measure of the projected random measure
        law = random_law(np.random.default_rng(4), 3, 1.0, max_space_atoms=4, dim=1)
        psi = Mul(tuple(ExpNeg(1.0, Mul((Mark(i, 0), Mark(i, 0)))) for i in range(2)))
        phi = TestFunction(psi, 2)
        exact = estimate_moment(law, 2, phi)[0]
        nu = sum(law.scale * w * np.dot(s.weights, np.exp(-s.marks[:, 0] ** 2)) ** 2
                 for w, s in zip(law.weights, law.spaces))
        assert exact == pytest.approx(nu, rel=1e-12)
        mm = sample_moment_measure(law, 2, 40_000, rng_seed=2)
        est = mm.mark_projection(lambda e: np.exp(-e[:, 0, 0] ** 2 - e[:, 1, 0] ** 2))
        assert est == pytest.approx(exact, rel=0.02)

    def test_order_checked(self):
        with pytest.raises(ValueError):
            sample_moment_measure(EmpiricalLaw.empty(), 0, 1)
        with pytest.raises(ValueError):
            EmpiricalMomentMeasure(2, np.zeros((1, 2, 2)), np.zeros((1, 2, 0)), np.array([-1.0]))


class TestCarleman:
    def test_constant(self):
        r = carleman_report([1.0] * 30)
        assert r.partial_sums[-1] == pytest.approx(30.0)
        assert r.divergent_like

    def test_factorial_squared(self):
        K = 50
        m = [math.factorial(k) ** 2 for k in range(1, K + 1)]
        r = carleman_report(m)
        assert r.partial_sums[-1] == pytest.approx(carleman_partial_sum_factorial_sq(K), rel=1e-12)
        assert r.divergent_like
        # terms behave like e/k up to the slowly vanishing (2 pi k)^(-1/(2k)) factor
        assert r.terms[-1] * K / math.e == pytest.approx((2 * math.pi * K) ** (-1 / (2 * K)), rel=0.02)

    def test_superexponential(self):
        r = carleman_report([2 ** (2 * k * k) for k in range(1, 41)])
        assert r.terms[:5] == pytest.approx([2.0**-k for k in range(1, 6)])
        assert r.partial_sums[-1] == pytest.approx(1.0, abs=1e-9)
        assert not r.divergent_like
        assert r.growth_fit["k_sq"] == pytest.approx(2 * math.log(2), rel=1e-6)

    def test_exponential_law_moments(self):
        # k! moments sit on the divergent side
        r = carleman_report([math.factorial(k) for k in range(1, 31)])
        assert r.divergent_like
        assert r.growth_exponent_fit == pytest.approx(1.0, abs=0.2)

    def test_nonpositive(self):
        with pytest.raises(NonPositiveMoment):
            carleman_report([1.0, 0.0, 2.0])

    def test_truncation(self):
        assert len(carleman_report([1.0] * 10, K=4).partial_sums) == 4


class TestDiagnostic:
    def test_constant_sequence(self):
        law = random_law(np.random.default_rng(6), 3, 1.0, max_space_atoms=3)
        rep = method_of_moments_diag([law, law, law], 2)
        gaps = [r["cauchy_gap"] for r in rep.rows if r["cauchy_gap"] is not None]
        assert gaps and all(g == 0.0 for g in gaps)

    def test_gw_trajectories(self, gw_sizes):
        ns = [25, 50, 100, 200]
        laws_ = [sizes_to_law(gw_sizes[n], n) for n in ns]
        limits = {(k, "one"): float(math.factorial(k)) for k in (1, 2, 3)}
        rep = method_of_moments_diag(laws_, 3, phi_family=lambda k: {"one": one(k)}, labels=ns, limits=limits)
        for k in (1, 2, 3):
            vals, ses = rep.trajectory(k)
            exact = np.array([gw_raw_moments(n)[k - 1] / n ** (k - 1) for n in ns])
            assert np.all(np.abs(vals - exact) <= 3 * ses + 1e-12)
            assert abs(exact[-1] / math.factorial(k) - 1) <= 0.06
        k0 = np.array([r["value"] for r in rep.k0])
        k0_se = np.array([r["std_error"] for r in rep.k0])
        assert np.all(np.abs(k0 - np.array(ns) / (np.array(ns) + 1.0)) <= 3 * k0_se)
        assert rep.carleman is not None and rep.carleman.divergent_like
        header = rep.to_csv().splitlines()[0]
        assert header == "label,k,phi,value,std_error,cauchy_gap,limit"

    def test_genealogy_family(self):
        reps, _ = genealogy_replicates(GEOM, 8, 200, 1, seed=4)
        rep = method_of_moments_diag([reps.law()], 2, rng_seed=3)
        names = {r["phi"] for r in rep.rows if r["k"] == 2}
        assert names == {"one", "exp_0.5", "exp_1", "exp_2"}
        assert len(rep.renormalized) == len(rep.rows)
        assert '"g": "ramp(0.25,0.5)"' in rep.to_json()

    def test_renormalized_matches_direct(self):
        law = random_law(np.random.default_rng(7), 4, 1.0, max_space_atoms=3)
        g = ramp(0.2, 1.0)
        rep = method_of_moments_diag([law], 2, g=g)
        from vaguemm import normalize

        phi = default_family(2, 1)["exp_1"]
        direct = sum(law.scale * w * g(total_mass(s)) * Monomial(2, phi)(normalize(s)[1])
                     for w, s in zip(law.weights, law.spaces))
        row = next(r for r in rep.renormalized if r["k"] == 2 and r["phi"] == "exp_1")
        assert row["value"] == pytest.approx(direct, rel=1e-12)

    def test_k_max(self):
        with pytest.raises(ValueError):
            method_of_moments_diag([EmpiricalLaw.empty()], 0)
