"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
All seeds below are fixed in advance.
"""

import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import random_expr, random_law  # noqa: E402
from oracles import glueing_grid_optimum, gw_raw_moments  # noqa: E402

from vaguemm import FiniteMmmSpace, restrict, total_mass  # noqa: E402
from vaguemm.cli import main as cli_main  # noqa: E402
from vaguemm.gw_genealogy import (  # noqa: E402
    OffspringLaw,
    genealogy_replicates,
    gf_oracle,
    simulate_sizes,
    size_replicates,
    sizes_to_law,
)
from vaguemm.law_distances import EmpiricalLaw, PairCache, lemma_bound_check, law_prohorov, vague_distance  # noqa: E402
from vaguemm.metric_distances import GlueSearchConfig, gp_lower, gp_upper, prohorov_bruteforce, prohorov_exact  # noqa: E402
from vaguemm.mmm_core import random_space  # noqa: E402
from vaguemm.moments import estimate_moment  # noqa: E402
from vaguemm.monomials import Monomial, TestFunction, evaluate_exact, evaluate_mc, lift_mass  # noqa: E402
from vaguemm.vague_diag import approximation_harness  # noqa: E402

GEOM = OffspringLaw.geometric_half()
SEED = 2026


def report(capsys, number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}  {title:<34} {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


@pytest.fixture(scope="module")
def sizes_100():
    t0 = time.perf_counter()
    z = simulate_sizes(GEOM, 100, 1_000_000, seed=SEED)[100]
    return z, time.perf_counter() - t0


def check_1(capsys, sizes_100):
    z, elapsed = sizes_100
    n, R = 100, z.size
    p = gf_oracle(GEOM, n).survival
    est = n * np.mean(z > 0)
    se = n * math.sqrt(p * (1 - p) / R)
    ok = abs(est - n * p) <= 3 * se and elapsed < 120
    return report(capsys, 1, "survival scaling", ok,
                  f"n*P(Z>0)={est:.5f} exact={n * p:.5f} 3se={3 * se:.5f} time={elapsed:.1f}s")


def check_2(capsys, sizes_100):
    z, _ = sizes_100
    n = 100
    law = sizes_to_law(z, n)
    parts, ok = [], True
    for eps in (0.5, 1.0):
        j = math.ceil(eps * n)
        exact = n * gf_oracle(GEOM, n).survival * (n / (n + 1)) ** (j - 1)
        v = law.mass_above(eps)
        frac = v / n
        se = n * math.sqrt(frac * (1 - frac) / z.size)
        ok &= abs(v - exact) <= max(0.02, 3 * se)
        parts.append(f"eps={eps}: {v:.4f} vs {exact:.4f}")
    return report(capsys, 2, "vague mass limit", ok, "; ".join(parts))


def check_3(capsys):
    ns = [25, 50, 100, 200]
    z = simulate_sizes(GEOM, ns, 10_000_000, seed=SEED)
    ok, parts = True, []
    for k in (1, 2, 3):
        exact = np.array([gw_raw_moments(n)[k - 1] / n ** (k - 1) for n in ns])
        est = []
        for n in ns:
            v, se = estimate_moment(sizes_to_law(z[n], n), k)
            ok &= abs(v - exact[ns.index(n)]) <= 3 * se
            est.append((v, se))
        limit = math.factorial(k)
        # exact trajectory moves monotonically toward k!
        dist = np.abs(exact - limit)
        ok &= bool(np.all(np.diff(dist) <= 1e-12))
        gap = abs(est[-1][0] - limit) / limit
        ok &= gap <= 0.06
        parts.append(f"k={k}: {est[-1][0]:.4f}+-{est[-1][1]:.4f} exact={exact[-1]:.4f} gap={gap:.3%}")
    return report(capsys, 3, "method of moments", ok, "; ".join(parts))


def check_4(capsys):
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(500):
        N = int(rng.integers(1, 9))
        kind = ("euclidean", "discrete", "ultrametric")[i % 3]
        d = random_space(rng, N, 0, kind).dist
        p = np.where(rng.random(N) < 0.6, rng.random(N), 0.0)
        q = np.where(rng.random(N) < 0.6, rng.random(N), 0.0)
        if i % 4 == 0:  # ties in masses
            p, q = np.round(p * 4) / 4, np.round(q * 4) / 4
        worst = max(worst, abs(prohorov_exact(d, p, q) - prohorov_bruteforce(d, p, q)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10
    return report(capsys, 4, "Prohorov exactness", ok, f"max |diff|={worst:.1e} time={elapsed:.2f}s")


def check_5(capsys):
    rng = np.random.default_rng(SEED + 5)
    tiny = [(1, 1), (1, 2), (2, 1)]
    sandwich_bad, grid_bad, worst_excess, grid_cases = 0, 0, -np.inf, 0
    for i in range(200):
        if i < 100:
            n, m = tiny[i % 3]
        else:
            n, m = (int(v) for v in rng.integers(1, 7, size=2))
        dim = int(rng.integers(0, 2))
        x = random_space(rng, n, dim, ("euclidean", "ultrametric", "discrete")[i % 3])
        y = random_space(rng, m, dim, ("euclidean", "ultrametric", "discrete")[(i + 1) % 3])
        up, lo = gp_upper(x, y), gp_lower(x, y)
        sandwich_bad += lo > up + 1e-12
        if n * m <= 2:
            grid = glueing_grid_optimum(x, y)
            grid_cases += 1
            worst_excess = max(worst_excess, up - grid)
            grid_bad += up > grid + 0.02
            sandwich_bad += lo > grid + 1e-12
    cut_bad, worst_cut = 0, -np.inf
    for i in range(1000):
        x = random_space(rng, int(rng.integers(1, 7)), int(rng.integers(0, 2)),
                         ("euclidean", "ultrametric", "discrete")[i % 3])
        keep = np.flatnonzero(rng.random(x.n) < 0.6)
        sub = restrict(x, keep)
        excess = gp_upper(sub, x) - (total_mass(x) - total_mass(sub))
        worst_cut = max(worst_cut, excess)
        cut_bad += excess > 1e-9
    ok = sandwich_bad == 0 and grid_bad == 0 and cut_bad == 0
    return report(capsys, 5, "Gromov-Prohorov sandwich", ok,
                  f"sandwich violations={sandwich_bad} grid cases={grid_cases} "
                  f"max(upper-grid)={worst_excess:.2e} cutoff violations={cut_bad} "
                  f"max excess={worst_cut:.1e}")


def check_6(capsys):
    unit = EmpiricalLaw(1.0, (FiniteMmmSpace.point(1.0),), [1.0])
    closed = abs(vague_distance(unit, EmpiricalLaw.empty(1.0)) - (1 - math.exp(-1)))
    rng = np.random.default_rng(SEED + 6)
    cache = PairCache(GlueSearchConfig())
    slack = 1e-6 + 0.02
    sym_bad = zero_bad = tri_bad = 0
    worst_tri = -np.inf
    for _ in range(200):
        a, b, c = (random_law(rng, scale=1.0) for _ in range(3))
        ab, ba = vague_distance(a, b, cache=cache), vague_distance(b, a, cache=cache)
        bc, ac = vague_distance(b, c, cache=cache), vague_distance(a, c, cache=cache)
        sym_bad += abs(ab - ba) > 1e-12
        zero_bad += vague_distance(a, a, cache=cache) != 0.0
        sym_bad += min(ab, bc, ac) < 0
        worst_tri = max(worst_tri, ac - ab - bc)
        tri_bad += ac > ab + bc + slack
    ok = closed <= 1e-12 and sym_bad == 0 and zero_bad == 0 and tri_bad == 0
    return report(capsys, 6, "vague distance closed form", ok,
                  f"|D*-(1-1/e)|={closed:.1e} symmetry/sign={sym_bad} zero={zero_bad} "
                  f"triangle={tri_bad} max excess={worst_tri:.2e}")


def _lemma_laws(rng, i):
    if i % 2 == 0:
        # two independent GW size laws at the same horizon
        n = int(rng.integers(5, 60))
        R = int(rng.integers(50, 400))
        za = simulate_sizes(GEOM, n, R, seed=int(rng.integers(2**31)))[n]
        zb = simulate_sizes(GEOM, n, R, seed=int(rng.integers(2**31)))[n]
        return sizes_to_law(za, n), sizes_to_law(zb, n)
    if i % 4 == 1:
        n = int(rng.integers(3, 7))
        s = int(rng.integers(2**31))
        a = genealogy_replicates(GEOM, n, 12, 1, seed=s)[0].law()
        b = genealogy_replicates(GEOM, n, 12, 1, seed=s + 1)[0].law()
        return a, b
    scale = float(rng.uniform(0.5, 3.0))
    return random_law(rng, scale=scale), random_law(rng, scale=scale)


def check_7(capsys):
    rng = np.random.default_rng(SEED + 7)
    cache = PairCache(GlueSearchConfig())
    configs = bad = 0
    worst = -np.inf
    i = 0
    while configs < 1000:
        a, b = _lemma_laws(rng, i)
        i += 1
        d = law_prohorov(a, b, cache=cache)
        for _ in range(5):
            eps = d + float(rng.exponential(0.3)) + 1e-6
            x = eps + float(rng.exponential(0.5)) + 1e-6
            chk = lemma_bound_check(a, b, x, eps, cache=cache)
            configs += 1
            worst = max(worst, chk.lhs - chk.rhs)
            bad += not chk.holds
    ok = bad == 0
    return report(capsys, 7, "vague distance bound", ok,
                  f"configurations={configs} violations={bad} max(lhs-rhs)={worst:.3f}")


def check_8(capsys):
    ns = [25, 50, 100, 200]
    z = simulate_sizes(GEOM, ns, 200_000, seed=SEED)
    reps = [size_replicates(z[n], n) for n in ns]

    def build(k, i):
        n = ns[i]
        return size_replicates(np.where(z[n] >= n / k, z[n], 0), n)

    ks = [1, 2, 5, 10, 20]
    rep = approximation_harness(reps, build, ks, [0.05, 0.1], labels=ns, cauchy=False)
    final_ii = max(rep.sequences["final_condition_ii"])
    final_d = rep.sequences["final_vague_distance"]
    ok = rep.flags["condition_ii_nonincreasing"] and final_ii <= 0.02 and final_d <= 0.05
    return report(capsys, 8, "approximation harness", ok,
                  f"nonincreasing={rep.flags['condition_ii_nonincreasing']} "
                  f"final condition(ii)={final_ii:.4f} final D*={final_d:.5f}")


def check_9(capsys):
    rng = np.random.default_rng(SEED + 9)
    misses, worst_z = 0, 0.0
    for case in range(100):
        n = int(rng.integers(1, 21))
        k = int(rng.integers(1, 4))
        dim = int(rng.integers(0, 3))
        x = random_space(rng, n, dim, ("euclidean", "ultrametric", "discrete")[case % 3])
        mono = Monomial(k, TestFunction(random_expr(rng, k, dim), k), int(rng.integers(0, 2)))
        exact = evaluate_exact(x, mono)
        est, se = evaluate_mc(x, mono, 20_000, int(rng.integers(2**31)))
        tol = 3 * se + 1e-12 * total_mass(x) ** (k + mono.mass_power)
        misses += abs(est - exact) > tol
        if se > 0:
            worst_z = max(worst_z, abs(est - exact) / se)
    lift_err = 0.0
    for _ in range(100):
        x = random_space(rng, int(rng.integers(1, 10)), 1, mass=float(rng.uniform(0.1, 3.0)))
        k = int(rng.integers(1, 4))
        mono = Monomial(k, TestFunction(random_expr(rng, k, 1), k))
        e = int(rng.integers(0, 4))
        base = evaluate_exact(x, mono)
        lifted = evaluate_exact(x, lift_mass(mono, e))
        lift_err = max(lift_err, abs(lifted - total_mass(x) ** e * base) / max(1.0, abs(lifted)))
    ok = misses == 0 and lift_err <= 1e-12
    return report(capsys, 9, "monomial engine", ok,
                  f"MC outside 3se={misses}/100 max|z|={worst_z:.2f} lift rel err={lift_err:.1e}")


CLI_CASES = [
    ("simulate", {"mode": "genealogy", "replicates": 30, "mark_dim": 1}),
    ("simulate", {}),
    ("moments", {}),
    ("distance", {}),
    ("distance", {"mode": "genealogy", "replicates": 15, "mark_dim": 1, "distance": {"spaces": 3}}),
    ("diagnose", {}),
    ("approx", {}),
    ("approx", {"mode": "genealogy", "replicates": 15, "approx": {"cutoff": "reduced_tree", "k_list": [1, 2, 4]}}),
    ("verify-bounds", {}),
]


def check_10(capsys, tmp_path):
    base = {"n": [8, 16], "replicates": 3000, "seed": SEED,
            "verify_bounds": {"pairs": 10, "restrictions": 20, "lemma_trials": 5, "cutoff_samples": 10}}
    diffs = []
    for idx, (sub, extra) in enumerate(CLI_CASES):
        cfg = {**base, **extra}
        path = tmp_path / f"cfg{idx}.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for threads in ("1", "4"):
            out = tmp_path / f"run{idx}_{threads}"
            code = cli_main([sub, "--config", str(path), "--out", str(out), "--threads", threads])
            files = {p.name: p.read_bytes() for p in sorted(out.iterdir())
                     if p.suffix in (".csv", ".json", ".jsonl")}
            outs.append((code, files))
        if outs[0] != outs[1] or outs[0][0] != 0 or not outs[0][1]:
            diffs.append(sub)
    ok = not diffs
    return report(capsys, 10, "CLI determinism", ok,
                  f"runs={len(CLI_CASES)} x 2 thread counts, differing={diffs or 'none'}")


def test_criterion_1_survival(capsys, sizes_100):
    assert check_1(capsys, sizes_100)


def test_criterion_2_vague_mass_limit(capsys, sizes_100):
    assert check_2(capsys, sizes_100)


def test_criterion_3_method_of_moments(capsys):
    assert check_3(capsys)


def test_criterion_4_prohorov_exactness(capsys):
    assert check_4(capsys)


def test_criterion_5_gp_sandwich(capsys):
    assert check_5(capsys)


def test_criterion_6_vague_distance(capsys):
    assert check_6(capsys)


def test_criterion_7_lemma_bound(capsys):
    assert check_7(capsys)


def test_criterion_8_approximation(capsys):
    assert check_8(capsys)


def test_criterion_9_monomials(capsys):
    assert check_9(capsys)


def test_criterion_10_cli_determinism(capsys, tmp_path):
    assert check_10(capsys, tmp_path)


if __name__ == "__main__":
    import tempfile

    t0 = time.perf_counter()
    z = simulate_sizes(GEOM, 100, 1_000_000, seed=SEED)[100]
    s100 = (z, time.perf_counter() - t0)
    results = [check_1(None, s100), check_2(None, s100)]
    results += [f(None) for f in (check_3, check_4, check_5, check_6, check_7, check_8, check_9)]
    with tempfile.TemporaryDirectory() as tmp:
        results.append(check_10(None, Path(tmp)))
    print(f"{sum(results)}/{len(results)} criteria passed")
    sys.exit(0 if all(results) else 1)
