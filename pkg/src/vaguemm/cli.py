"""Command line experiment runner.

Usage::

    vaguemm SUBCOMMAND [--config PATH] [--seed U64] [--threads N]
                       [--out DIR] [--format {csv,json,both}]

Subcommands: simulate, moments, distance, diagnose, approx, verify-bounds.

Settings are resolved in the order defaults < config file < flags.  Every
run writes its tables, a JSON summary, optional SVG charts and
``manifest_<subcommand>.json`` recording the resolved configuration, its
hash and the seed.  Outputs depend only on the configuration and seed, not
on the thread count.

Exit codes: 0 success, 1 verify-bounds found a violated inequality,
2 configuration error, 3 computation budget exceeded.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BudgetExceeded, DegenerateGrid, PreconditionViolated
from .gw_genealogy import (
    MassFloor,
    OffspringLaw,
    ReducedTree,
    Scaling,
    cutoff,
    gf_oracle,
    simulate_batch,
    simulate_sizes,
    size_replicates,
    sizes_to_law,
    to_mmm,
    write_jsonl,
)
from .law_distances import EmpiricalLaw, PairCache, Replicates, law_prohorov, lemma_bound_check, vague_distance
from .metric_distances import GlueSearchConfig, gp_lower, gp_upper
from .mmm_core import random_space, restrict, total_mass
from .moments import default_family, method_of_moments_diag
from .monomials import one
from .vague_diag import approximation_harness, pushforward_diag, restriction_convergence, survival_estimate

SUBCOMMANDS = ("simulate", "moments", "distance", "diagnose", "approx", "verify-bounds")

DEFAULTS = {
    "offspring": "geometric_half",
    "n": [25, 50, 100, 200],
    "replicates": 100000,
    "mode": "sizes",
    "mark_dim": 0,
    "scaling": {"mass_per_individual": None, "distance_divisor": None, "mark_divisor": None},
    "seed": None,
    "format": "both",
    "svg": True,
    "out": "out",
    "max_seconds": None,
    "gp_search": {},
    "moments": {"k_max": 3, "family": "one"},
    "distance": {"spaces": 4},
    "diagnose": {
        "eps_grid": [0.02, 0.5, 1.0],
        "eta_grid": [1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01],
        "thresholds": [0.25, 0.5, 1.0, 2.0],
        "functional": "total_mass",
        "limit": "exponential",
    },
    "approx": {"cutoff": "mass_floor", "k_list": [1, 2, 5, 10, 20], "eps_list": [0.05, 0.1], "cauchy": False},
    "verify_bounds": {"pairs": 100, "max_atoms": 6, "restrictions": 200, "lemma_trials": 50, "cutoff_samples": 50},
}


class ConfigError(Exception):
    pass


class _Budget:
    def __init__(self, max_seconds):
        self.max_seconds = max_seconds
        self.start = time.monotonic()

    def check(self):
        if self.max_seconds is not None and time.monotonic() - self.start > self.max_seconds:
            raise BudgetExceeded(f"runtime budget of {self.max_seconds} s exceeded")


# -- configuration -----------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = _merge(cfg, user)
    for key in ("seed", "out", "format"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    _validate(cfg, args.subcommand)
    return cfg


def _validate(cfg: dict, sub: str) -> None:
    ns = cfg["n"]
    if not isinstance(ns, list) or not ns or not all(isinstance(n, int) and n >= 1 for n in ns):
        raise ConfigError("n must be a nonempty list of positive integers")
    if any(a >= b for a, b in zip(ns, ns[1:])):
        raise ConfigError("n list must be strictly increasing")
    if not isinstance(cfg["replicates"], int) or cfg["replicates"] < 1:
        raise ConfigError("replicates must be an integer >= 1")
    if cfg["mode"] not in ("sizes", "genealogy"):
        raise ConfigError("mode must be 'sizes' or 'genealogy'")
    if cfg["format"] not in ("csv", "json", "both"):
        raise ConfigError("format must be csv, json or both")
    if cfg["seed"] is None:
        raise ConfigError("a seed is required (config field 'seed' or --seed)")
    if not isinstance(cfg["seed"], int) or not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    try:
        _offspring(cfg)
        _gp_cfg(cfg)
        Scaling(**cfg["scaling"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if sub == "approx" and cfg["approx"]["cutoff"] == "reduced_tree" and cfg["mode"] != "genealogy":
        raise ConfigError("reduced_tree cutoffs need mode 'genealogy'")
    if cfg["approx"]["cutoff"] not in ("mass_floor", "reduced_tree"):
        raise ConfigError("approx.cutoff must be mass_floor or reduced_tree")
    if cfg["diagnose"]["functional"] not in ("total_mass", "diameter_capped", "mark_mean_norm"):
        raise ConfigError("unknown diagnose.functional")


def _offspring(cfg) -> OffspringLaw:
    off = cfg["offspring"]
    if isinstance(off, str):
        return OffspringLaw.from_name(off)
    if isinstance(off, dict) and "pmf" in off:
        return OffspringLaw.custom(off["pmf"], off.get("name", "custom"))
    raise ValueError("offspring must be a family name or {'pmf': [...]}")


def _gp_cfg(cfg) -> GlueSearchConfig:
    allowed = {f.name for f in fields(GlueSearchConfig)}
    extra = set(cfg["gp_search"]) - allowed
    if extra:
        raise ValueError(f"unknown gp_search fields: {sorted(extra)}")
    return GlueSearchConfig(**cfg["gp_search"])


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# -- output ------------------------------------------------------------------------


def _fmt(v):
    return repr(v) if isinstance(v, float) else ("" if v is None else v)


def rows_to_csv(rows: list) -> str:
    buf = io.StringIO()
    if rows:
        cols = list(rows[0])
        for r in rows[1:]:
            cols += [c for c in r if c not in cols]
        w = csv.DictWriter(buf, cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n"


def svg_chart(series: dict, title: str, xlabel: str = "", ylabel: str = "", width=480, height=320) -> str:
    """Polyline chart of ``{name: (xs, ys)}``."""
    pad = 48
    pts = [(x, y) for xs, ys in series.values() for x, y in zip(xs, ys) if math.isfinite(y)]
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{pad}" y="{height - pad + 16}" font-size="10">{x0:.4g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16}" font-size="10" text-anchor="end">{x1:.4g}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.4g}</text>',
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="11">{xlabel}</text>',
        f'<text x="12" y="{height / 2:.1f}" font-size="11" transform="rotate(-90 12 {height / 2:.1f})" '
        f'text-anchor="middle">{ylabel}</text>',
    ]
    for c, (name, (xs, ys)) in enumerate(series.items()):
        color = colors[c % len(colors)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{width - pad + 2}" y="{pad + 14 * c}" font-size="10" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


class Writer:
    def __init__(self, cfg: dict, sub: str):
        self.dir = Path(cfg["out"])
        self.dir.mkdir(parents=True, exist_ok=True)
        self.fmt = cfg["format"]
        self.svg = bool(cfg["svg"])
        self.sub = sub.replace("-", "_")
        self.files: list[str] = []

    def _write(self, name: str, text: str):
        (self.dir / name).write_text(text)
        self.files.append(name)

    def table(self, name: str, rows: list):
        if self.fmt in ("csv", "both"):
            self._write(f"{self.sub}_{name}.csv", rows_to_csv(rows))

    def summary(self, obj):
        if self.fmt in ("json", "both"):
            self._write(f"{self.sub}.json", dumps(obj))

    def chart(self, name: str, series: dict, title: str, xlabel="", ylabel=""):
        if self.svg:
            self._write(f"{self.sub}_{name}.svg", svg_chart(series, title, xlabel, ylabel))

    def raw(self, name: str, text: str):
        self._write(name, text)

    def manifest(self, cfg: dict):
        # the output directory is not part of the experiment
        cfg = {k: v for k, v in cfg.items() if k != "out"}
        man = {
            "subcommand": self.sub,
            "version": __version__,
            "seed": cfg["seed"],
            "config_hash": config_hash(cfg),
            "config": cfg,
            "files": sorted(self.files),
        }
        (self.dir / f"manifest_{self.sub}.json").write_text(dumps(man))


# -- shared simulation ---------------------------------------------------------------


def _scaling(cfg) -> Scaling:
    return Scaling(**cfg["scaling"])


def _sizes(cfg, threads):
    return simulate_sizes(_offspring(cfg), cfg["n"], cfg["replicates"], seed=cfg["seed"], threads=threads)


def _genealogies(cfg, threads):
    """Per n: (samples, replicate spaces); replicate i of horizon n uses stream (seed + n, i)."""
    off, sc = _offspring(cfg), _scaling(cfg)
    out = {}
    for n in cfg["n"]:
        samples = simulate_batch(off, n, cfg["replicates"], cfg["mark_dim"], _stream_seed(cfg["seed"], n), threads)
        out[n] = (samples, tuple(to_mmm(s, sc) for s in samples))
    return out


def _stream_seed(seed: int, n: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(1, n)).generate_state(1, np.uint64)[0])


def _laws(cfg, threads):
    """Per n: (EmpiricalLaw, Replicates, samples or None)."""
    if cfg["mode"] == "sizes":
        zs = _sizes(cfg, threads)
        mpi = cfg["scaling"]["mass_per_individual"]
        out = {}
        for n in cfg["n"]:
            reps = size_replicates(zs[n], n, mpi)
            out[n] = (sizes_to_law(zs[n], n, mpi), reps, None)
        return out
    out = {}
    for n, (samples, spaces) in _genealogies(cfg, threads).items():
        reps = Replicates(float(n), spaces)
        out[n] = (reps.law(), reps, samples)
    return out


# -- subcommands ---------------------------------------------------------------------


def cmd_simulate(cfg, w: Writer, threads, budget):
    off = _offspring(cfg)
    rows = []
    laws = _laws(cfg, threads)
    for n, (law, reps, samples) in laws.items():
        budget.check()
        w.raw(f"law_n{n}.json", law.dumps() + "\n")
        if samples is not None:
            path = w.dir / f"replicates_n{n}.jsonl"
            write_jsonl(path, reps.spaces, {"n": n, "seed": cfg["seed"], "offspring": off.name})
            w.files.append(path.name)
        masses = law.masses
        oracle = gf_oracle(off, n)
        rows.append({
            "n": n,
            "replicates": cfg["replicates"],
            "survivors": int(round(law.weights.sum() * cfg["replicates"])),
            "total": law.total,
            "exact_total": n * oracle.survival,
            "min_mass": float(masses.min()) if masses.size else 0.0,
            "max_mass": float(masses.max()) if masses.size else 0.0,
        })
    w.table("summary", rows)
    w.summary({"summary": rows})
    w.chart("total", {"estimate": ([r["n"] for r in rows], [r["total"] for r in rows]),
                      "exact": ([r["n"] for r in rows], [r["exact_total"] for r in rows])},
            "c_n P(survival)", "n", "total mass")
    return 0


def cmd_moments(cfg, w: Writer, threads, budget):
    laws = _laws(cfg, threads)
    mc = cfg["moments"]
    k_max = int(mc["k_max"])
    fam = (lambda k: {"one": one(k)}) if mc.get("family", "one") == "one" else (
        lambda k: default_family(k, cfg["mark_dim"]))
    ns = list(laws)
    limits = {(k, "one"): float(math.factorial(k)) for k in range(1, k_max + 1)}
    budget.check()
    rep = method_of_moments_diag([laws[n][0] for n in ns], k_max, fam, labels=ns, limits=limits,
                                 rng_seed=cfg["seed"])
    off = _offspring(cfg)
    exact = []
    for n in ns:
        o = gf_oracle(off, n)
        exact.append({"label": n, "k0": n * o.survival, "k1": o.mean,
                      "k2": o.second_moment / n, "k3": o.third_moment / n**2})
    if cfg["format"] in ("csv", "both"):
        w.raw("moments.csv", rep.to_csv())
    w.table("exact", exact)
    w.table("renormalized", rep.renormalized)
    w.summary({**rep.to_dict(), "exact": exact})
    series = {}
    for k in range(1, k_max + 1):
        v, _ = rep.trajectory(k)
        series[f"k={k}"] = (ns, list(v))
    series["k=0"] = (ns, [r["value"] for r in rep.k0])
    w.chart("trajectories", series, "scaled moments", "n", "M_k[1]")
    return 0


def cmd_distance(cfg, w: Writer, threads, budget):
    laws = _laws(cfg, threads)
    gp = _gp_cfg(cfg)
    cache = PairCache(gp)
    ns = list(laws)
    rows = []
    for a, b in zip(ns, ns[1:]):
        budget.check()
        la, lb = laws[a][0], laws[b][0]
        rows.append({"from": a, "to": b,
                     "law_prohorov": law_prohorov(la, lb, gp, cache=cache),
                     "vague_distance": vague_distance(la, lb, gp, cache)})
    w.table("laws", rows)
    space_rows = []
    last = laws[ns[-1]][0]
    m = min(int(cfg["distance"]["spaces"]), len(last))
    for i in range(m):
        for j in range(i + 1, m):
            budget.check()
            x, y = last.spaces[i], last.spaces[j]
            space_rows.append({"i": i, "j": j, "mass_i": total_mass(x), "mass_j": total_mass(y),
                               "gp_lower": gp_lower(x, y), "gp_upper": gp_upper(x, y, gp)})
    w.table("spaces", space_rows)
    w.summary({"laws": rows, "spaces": space_rows, "gp_evaluations": cache.evaluations})
    w.chart("cauchy", {"law_prohorov": ([r["to"] for r in rows], [r["law_prohorov"] for r in rows]),
                       "vague": ([r["to"] for r in rows], [r["vague_distance"] for r in rows])},
            "consecutive distances", "n", "distance")
    return 0


def cmd_diagnose(cfg, w: Writer, threads, budget):
    laws = _laws(cfg, threads)
    dc = cfg["diagnose"]
    ns = list(laws)
    seq = [laws[n][0] for n in ns]
    limit = (lambda t: math.exp(-t)) if dc.get("limit") == "exponential" else None
    budget.check()
    rc = restriction_convergence(seq, dc["eps_grid"], _gp_cfg(cfg), labels=ns)
    budget.check()
    try:
        se = survival_estimate(seq, dc["eta_grid"], limit_tail=limit, labels=ns)
        se_dict = se.to_dict()
    except DegenerateGrid as exc:
        se, se_dict = None, {"error": str(exc)}
    budget.check()
    pf = pushforward_diag(seq, dc["functional"], dc["thresholds"], labels=ns,
                          limit_tail=limit if dc["functional"] == "total_mass" else None)
    for name, rows in rc.tables.items():
        w.table(f"restriction_{name}", rows)
    if se is not None:
        for name, rows in se.tables.items():
            w.table(f"survival_{name}", rows)
    for name, rows in pf.tables.items():
        w.table(f"pushforward_{name}", rows)
    w.summary({"restriction": rc.to_dict(), "survival": se_dict, "pushforward": pf.to_dict()})
    series = {}
    for eps in sorted({r["eps"] for r in rc.tables["restricted"]}):
        series[f"eps={eps:g}"] = (ns, rc.column("restricted", "mass", eps=eps))
    w.chart("restricted_mass", series, "restricted masses", "n", "M_n(|X| >= eps)")
    return 0


def cmd_approx(cfg, w: Writer, threads, budget):
    ac = cfg["approx"]
    ns = cfg["n"]
    k_list = [int(k) for k in ac["k_list"]]
    if cfg["mode"] == "sizes":
        zs = _sizes(cfg, threads)
        mpi = cfg["scaling"]["mass_per_individual"]
        x_reps = [size_replicates(zs[n], n, mpi) for n in ns]

        def y_builder(k, i):
            n = ns[i]
            z = zs[n]
            return size_replicates(np.where(z >= n / k, z, 0), n, mpi)
    else:
        gens = _genealogies(cfg, threads)
        x_reps = [Replicates(float(n), gens[n][1]) for n in ns]

        def y_builder(k, i):
            n = ns[i]
            kind = MassFloor(1.0 / k) if ac["cutoff"] == "mass_floor" else ReducedTree(1.0 / k)
            samples, spaces = gens[n]
            return Replicates(float(n), tuple(cutoff(s, kind).apply(x) for s, x in zip(samples, spaces)))

    budget.check()
    rep = approximation_harness(x_reps, y_builder, k_list, ac["eps_list"], _gp_cfg(cfg), labels=ns,
                                cauchy=bool(ac.get("cauchy", False)))
    for name, rows in rep.tables.items():
        w.table(name, rows)
    w.summary(rep.to_dict())
    series = {f"eps={e:g}": (k_list, rep.column("condition_ii", "value", label=ns[-1], eps=float(e)))
              for e in ac["eps_list"]}
    w.chart("condition_ii", series, "condition (ii) table at the last n", "k", "c_n P(|X|-|Y| >= eps)")
    return 0


def cmd_verify_bounds(cfg, w: Writer, threads, budget):
    vc = cfg["verify_bounds"]
    gp = _gp_cfg(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"], spawn_key=(2,)))
    rows = []
    kinds = ("euclidean", "ultrametric", "discrete")
    dim = cfg["mark_dim"]

    def record(check, i, lhs, rhs):
        rows.append({"check": check, "trial": i, "lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs + 1e-9)})

    for i in range(int(vc["pairs"])):
        budget.check()
        x = random_space(rng, rng.integers(1, vc["max_atoms"] + 1), dim, kinds[i % 3])
        y = random_space(rng, rng.integers(1, vc["max_atoms"] + 1), dim, kinds[(i + 1) % 3])
        record("gp_lower<=gp_upper", i, gp_lower(x, y), gp_upper(x, y, gp))
    for i in range(int(vc["restrictions"])):
        budget.check()
        x = random_space(rng, rng.integers(1, vc["max_atoms"] + 1), dim, kinds[i % 3])
        keep = rng.random(x.n) < 0.6
        y = restrict(x, keep)
        record("restriction_bound", i, gp_upper(y, x, gp) if not y.is_zero() else total_mass(x),
               total_mass(x) - total_mass(y))
    cache = PairCache(gp)
    done = 0
    trial = 0
    while done < int(vc["lemma_trials"]) and trial < 20 * int(vc["lemma_trials"]):
        budget.check()
        trial += 1
        scale = float(rng.uniform(0.5, 2.0))
        base = [random_space(rng, rng.integers(1, 4), dim, kinds[trial % 3], mass=rng.uniform(0.1, 2))
                for _ in range(rng.integers(1, 4))]
        other = [random_space(rng, rng.integers(1, 4), dim, kinds[(trial + 1) % 3], mass=rng.uniform(0.1, 2))
                 for _ in range(rng.integers(1, 3))]
        la = EmpiricalLaw(scale, tuple(base), rng.random(len(base)))
        lb = EmpiricalLaw(scale, tuple(base + other), rng.random(len(base) + len(other)))
        d = law_prohorov(la, lb, gp, cache=cache)
        eps = d + float(rng.uniform(0.01, 1.0))
        x = eps + float(rng.uniform(0.01, 2.0))
        try:
            res = lemma_bound_check(la, lb, x, eps, gp, cache)
        except PreconditionViolated:
            continue
        record("lemma_bound", done, res.lhs, res.rhs)
        done += 1
    off = _offspring(cfg)
    n0 = cfg["n"][0]
    for i in range(int(vc["cutoff_samples"])):
        budget.check()
        s = simulate_batch(off, n0, 1, dim, cfg["seed"] + i)[0]
        x = to_mmm(s, _scaling(cfg))
        if x.is_zero() or x.n > 40:
            continue
        for kind in (MassFloor(0.5), ReducedTree(0.5)):
            y = cutoff(s, kind).apply(x)
            lhs = gp_upper(y, x, gp) if not y.is_zero() else total_mass(x)
            record(f"cutoff_{type(kind).__name__}", i, lhs, total_mass(x) - total_mass(y))
    violations = [r for r in rows if not r["holds"]]
    summary = {}
    for r in rows:
        s = summary.setdefault(r["check"], {"trials": 0, "violations": 0})
        s["trials"] += 1
        s["violations"] += int(not r["holds"])
    w.table("checks", rows)
    w.summary({"summary": summary, "violations": violations})
    return 1 if violations else 0


COMMANDS = {
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "distance": cmd_distance,
    "diagnose": cmd_diagnose,
    "approx": cmd_approx,
    "verify-bounds": cmd_verify_bounds,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="vaguemm",
        description="Experiments on vague convergence of measures on marked metric measure spaces.",
        epilog="Precedence: built-in defaults < --config file < command line flags. "
               "Exit codes: 1 failed bound check, 2 configuration error, 3 budget exceeded.",
    )
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit), overrides the config")
    p.add_argument("--threads", type=int, default=1, help="parallelism cap; outputs do not depend on it")
    p.add_argument("--out", help="output directory, overrides the config")
    p.add_argument("--format", choices=("csv", "json", "both"), help="table format, overrides the config")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    w = Writer(cfg, args.subcommand)
    try:
        code = COMMANDS[args.subcommand](cfg, w, max(1, args.threads), _Budget(cfg["max_seconds"]))
    except BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 3
    w.manifest(cfg)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
