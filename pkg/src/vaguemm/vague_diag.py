"""Diagnostics for vague convergence of measures on mmm-spaces.

Each harness takes a sequence of laws (indexed by n) and returns a
:class:`ConvergenceReport`: named tables of rows, extracted sequences and
pass/fail flags computed from the tables and the recorded tolerances.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateGrid, PreconditionViolated
from .law_distances import (
    EmpiricalLaw,
    PairCache,
    Replicates,
    law_prohorov,
    replicate_std_error,
    restrict_eps,
    vague_distance,
)
from .metric_distances import DEFAULT_SEARCH, GlueSearchConfig
from .mmm_core import FiniteMmmSpace, total_mass


@dataclass
class ConvergenceReport:
    """Tables, extracted sequences and flags of one diagnostic run."""

    kind: str
    tables: dict = field(default_factory=dict)
    sequences: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def column(self, table: str, name: str, **where) -> list:
        """Values of ``name`` in the rows of ``table`` matching ``where``."""
        return [r[name] for r in self.tables[table] if all(r.get(k) == v for k, v in where.items())]

    def table_csv(self, name: str) -> str:
        rows = self.tables[name]
        buf = io.StringIO()
        if rows:
            w = csv.DictWriter(buf, list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "tables": self.tables,
            "sequences": self.sequences,
            "flags": self.flags,
            "tolerances": self.tolerances,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _labels(laws, labels):
    return list(labels) if labels is not None else list(range(len(laws)))


def _tail(law: EmpiricalLaw, t: float) -> tuple[float, float]:
    """Measure of {|X| >= t} with its replicate standard error."""
    ind = (law.masses >= t).astype(float)
    return law.mass_above(t), replicate_std_error(law, ind)


# -- restriction convergence ---------------------------------------------------------


def restriction_convergence(
    laws: Sequence[EmpiricalLaw],
    eps_grid: Sequence[float],
    gp_cfg: GlueSearchConfig = DEFAULT_SEARCH,
    labels: Sequence | None = None,
    gap_tol: float = 0.05,
    mass_tol: float = 0.05,
    atom_window: float = 0.01,
    atom_mass_tol: float = 0.05,
    cache: PairCache | None = None,
) -> ConvergenceReport:
    """Cauchy gaps of the restricted laws and their total masses.

    For every eps of the grid the restricted laws ``M_n^(eps)`` are compared
    consecutively with :func:`law_prohorov`.  An eps is flagged as a
    suspected atom of the limit mass law when the last law puts more than
    ``atom_mass_tol`` on ``[eps - atom_window, eps + atom_window)`` or when
    the gaps at eps do not shrink.

    Flags
    -----
    vague_cauchy
        Last gap at every unflagged eps is at most ``gap_tol``.
    totals_converge
        Last Cauchy gap of the total masses is within ``max(mass_tol, 3 se)``.
    mass_escape
        The last law has more than ``max(mass_tol, 3 se)`` mass below the
        smallest eps, so total mass is lost in the vague limit.  The grid
        should therefore reach close to 0.
    weak
        vague_cauchy, totals_converge and no mass_escape.
    vague_not_weak
        vague_cauchy but not weak.
    """
    if len(laws) < 2:
        raise ValueError("need at least two laws")
    eps_grid = sorted(float(e) for e in eps_grid)
    if not eps_grid or eps_grid[0] <= 0:
        raise ValueError("eps grid must be nonempty and positive")
    labels = _labels(laws, labels)
    cache = cache if cache is not None else PairCache(gp_cfg)
    rep = ConvergenceReport("restriction_convergence")
    rep.tolerances = {"gap_tol": gap_tol, "mass_tol": mass_tol,
                      "atom_window": atom_window, "atom_mass_tol": atom_mass_tol}

    restricted, gaps, atoms = [], [], []
    for eps in eps_grid:
        rl = [restrict_eps(law, eps) for law in laws]
        for lab, r in zip(labels, rl):
            ind = np.ones(len(r))
            restricted.append({"label": lab, "eps": eps, "mass": r.total,
                               "std_error": replicate_std_error(r, ind)})
        g = [law_prohorov(a, b, gp_cfg, cache=cache) for a, b in zip(rl, rl[1:])]
        for (la, lb), v in zip(zip(labels, labels[1:]), g):
            gaps.append({"eps": eps, "from": la, "to": lb, "gap": v})
        last = laws[-1]
        window = last.mass_above(eps - atom_window) - last.mass_above(eps + atom_window)
        stuck = len(g) >= 2 and g[-1] > gap_tol and g[-1] >= g[0]
        atoms.append({"eps": eps, "window_mass": window,
                      "suspected_atom": bool(window > atom_mass_tol or stuck)})
    totals = []
    for lab, law in zip(labels, laws):
        v, se = _tail(law, 0.0)
        totals.append({"label": lab, "total": v, "std_error": se})
    rep.tables = {"restricted": restricted, "gaps": gaps, "atoms": atoms, "totals": totals}

    flagged = {a["eps"] for a in atoms if a["suspected_atom"]}
    last_gaps = [r["gap"] for r in gaps if r["to"] == labels[-1] and r["from"] == labels[-2]
                 and r["eps"] not in flagged]
    vague_cauchy = all(v <= gap_tol for v in last_gaps)
    t_prev, t_last = totals[-2], totals[-1]
    se_diff = math.hypot(t_prev["std_error"], t_last["std_error"])
    totals_converge = abs(t_last["total"] - t_prev["total"]) <= max(mass_tol, 3 * se_diff)
    low = next(r for r in restricted if r["label"] == labels[-1] and r["eps"] == eps_grid[0])
    escaped = t_last["total"] - low["mass"]
    mass_escape = escaped > max(mass_tol, 3 * t_last["std_error"])
    weak = vague_cauchy and totals_converge and not mass_escape
    rep.flags = {
        "vague_cauchy": vague_cauchy,
        "totals_converge": totals_converge,
        "mass_escape": mass_escape,
        "weak": weak,
        "vague_not_weak": vague_cauchy and not weak,
    }
    rep.sequences = {"suspected_atoms": sorted(flagged), "mass_below_min_eps": escaped}
    return rep


# -- survival estimate ---------------------------------------------------------------


def survival_estimate(
    laws: Sequence[EmpiricalLaw],
    eta_grid: Sequence[float],
    limit_tail: Callable[[float], float] | None = None,
    labels: Sequence | None = None,
    tol_floor: float = 0.1,
) -> ConvergenceReport:
    """Extract thresholds eps_n with c_n P(|X_n| >= eps_n) / (limit mass) -> 1.

    The limit tail ``L(eta)`` is ``limit_tail(eta)`` when given and the tail
    of the last law otherwise; ``L(0+)`` is ``limit_tail(0)`` or the total
    of the last law.  For law n the tolerance at eta is
    ``max(tol_floor, 3 se)`` and k_n is the largest index (finest eta)
    whose tail is within tolerance of L.  A running maximum over n makes
    eps_n nonincreasing.

    Raises
    ------
    DegenerateGrid
        If ``L(0+)`` vanishes or some law admits no eta.
    """
    etas = sorted((float(e) for e in eta_grid), reverse=True)
    if not etas or etas[-1] <= 0:
        raise ValueError("eta grid must be nonempty and positive")
    labels = _labels(laws, labels)
    last = laws[-1]
    if limit_tail is not None:
        L = [float(limit_tail(e)) for e in etas]
        L0 = float(limit_tail(0.0))
    else:
        L = [last.mass_above(e) for e in etas]
        L0 = last.total
    if not L0 > 0:
        raise DegenerateGrid("the limit measure has no mass")
    rep = ConvergenceReport("survival_estimate")
    rep.tolerances = {"tol_floor": tol_floor}
    table, eps_seq, ratios = [], [], []
    k_run = -1
    for lab, law in zip(labels, laws):
        ok = []
        for k, (eta, lim) in enumerate(zip(etas, L)):
            v, se = _tail(law, eta)
            tol = max(tol_floor, 3 * se)
            good = abs(v - lim) <= tol
            table.append({"label": lab, "eta": eta, "tail": v, "std_error": se,
                          "limit": lim, "tol": tol, "qualifies": bool(good)})
            if good:
                ok.append(k)
        if not ok:
            raise DegenerateGrid(f"no eta qualifies for law {lab!r}")
        k_run = max(k_run, max(ok))
        eps = etas[k_run]
        eps_seq.append(eps)
        ratios.append(law.mass_above(eps) / L0)
    rep.tables = {"tails": table,
                  "ratios": [{"label": lab, "eps": e, "ratio": r}
                             for lab, e, r in zip(labels, eps_seq, ratios)]}
    rep.sequences = {"eps_n": eps_seq, "ratio": ratios, "limit_mass": L0}
    rep.flags = {"eps_nonincreasing": all(a >= b for a, b in zip(eps_seq, eps_seq[1:]))}
    return rep


# -- pushforwards ------------------------------------------------------------------


def diameter_capped(space: FiniteMmmSpace) -> float:
    """Monomial sum_ij w_i w_j min(d_ij, 1); continuous and zero on the null space."""
    w = space.weights
    return float(w @ np.minimum(space.dist, 1.0) @ w)


def mark_mean_norm(space: FiniteMmmSpace) -> float:
    """Norm of the mark integral sum_i w_i e_i."""
    if space.dim == 0:
        return 0.0
    return float(np.linalg.norm(space.weights @ space.marks))


FUNCTIONALS = {
    "total_mass": total_mass,
    "diameter_capped": diameter_capped,
    "mark_mean_norm": mark_mean_norm,
}


def pushforward(law: EmpiricalLaw, G: Callable[[FiniteMmmSpace], float]) -> tuple[np.ndarray, np.ndarray]:
    """Atoms ``G(X_i) > 0`` of the pushed measure and their masses."""
    vals = np.array([G(s) for s in law.spaces], dtype=float)
    keep = vals > 0
    return vals[keep], law.atom_weights[keep]


def pushforward_diag(
    laws: Sequence[EmpiricalLaw],
    G,
    thresholds: Sequence[float],
    labels: Sequence | None = None,
    limit_tail: Callable[[float], float] | None = None,
    tol: float = 0.05,
) -> ConvergenceReport:
    """Tails ``M_n(G >= t)`` of the pushforwards on (0, inf].

    ``G`` is a functional name from :data:`FUNCTIONALS`, a callable, or one
    callable per law (for sequences G_n -> G).  Gaps are sup-differences of
    tails over the thresholds, which must be positive.  Only the concrete
    functionals supplied are checked.
    """
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds or thresholds[0] <= 0:
        raise ValueError("thresholds must be positive")
    labels = _labels(laws, labels)
    if isinstance(G, str):
        name = G
        Gs = [FUNCTIONALS[G]] * len(laws)
    elif callable(G):
        name = getattr(G, "__name__", "G")
        Gs = [G] * len(laws)
    else:
        Gs = list(G)
        name = "sequence"
        if len(Gs) != len(laws):
            raise ValueError("one functional per law expected")
    rep = ConvergenceReport("pushforward_diag")
    rep.tolerances = {"tol": tol}
    rep.notes = [f"functional: {name}",
                 "only the supplied functionals are checked; the general hypothesis on "
                 "convergent sequences is not verifiable numerically"]
    tails, curves = [], []
    for lab, law, g in zip(labels, laws, Gs):
        vals = np.array([g(s) for s in law.spaces], dtype=float)
        curve = []
        for t in thresholds:
            ind = (vals >= t).astype(float)
            v = float(law.scale * np.dot(law.weights, ind)) if vals.size else 0.0
            se = replicate_std_error(law, ind)
            row = {"label": lab, "t": t, "tail": v, "std_error": se}
            if limit_tail is not None:
                row["limit"] = float(limit_tail(t))
            tails.append(row)
            curve.append(v)
        curves.append(np.array(curve))
    gaps = [{"from": a, "to": b, "sup_gap": float(np.max(np.abs(cb - ca)))}
            for a, b, ca, cb in zip(labels, labels[1:], curves, curves[1:])]
    rep.tables = {"tails": tails, "gaps": gaps}
    rep.flags = {"cauchy": bool(gaps) and gaps[-1]["sup_gap"] <= tol}
    if limit_tail is not None:
        lim = np.array([limit_tail(t) for t in thresholds])
        rep.sequences["limit_gap"] = [float(np.max(np.abs(c - lim))) for c in curves]
        rep.flags["near_limit"] = rep.sequences["limit_gap"][-1] <= tol
    return rep


# -- approximation harness ---------------------------------------------------------


def approximation_harness(
    x_reps: Sequence[Replicates],
    y_builder: Callable[[int, int], Replicates],
    k_list: Sequence[int],
    eps_list: Sequence[float],
    gp_cfg: GlueSearchConfig = DEFAULT_SEARCH,
    labels: Sequence | None = None,
    cauchy: bool = True,
    cache: PairCache | None = None,
) -> ConvergenceReport:
    """Compare laws of X_n with coupled approximations Y_{k,n}.

    ``y_builder(k, i)`` returns replicates aligned with ``x_reps[i]`` and
    sharing its scale.  The report holds

    * ``cauchy``: vague distances between consecutive n for each k,
    * ``condition_ii``: ``c_n P(|X_n| - |Y_{k,n}| >= eps)``, which bounds
      ``c_n P(d_GP(Y_{k,n}, X_n) >= eps)`` when Y is a restriction of X,
    * ``diagonal``: vague distance between the Y-law and the X-law at the
      last n, for each k.

    Raises
    ------
    PreconditionViolated
        If a built Y is not aligned with X or has another scale.
    """
    labels = _labels(x_reps, labels)
    k_list = list(k_list)
    cache = cache if cache is not None else PairCache(gp_cfg)
    x_laws = [r.law() for r in x_reps]
    x_mass = [r.masses() for r in x_reps]
    y_laws = {}
    cond, rows_c = [], []
    for k in k_list:
        for i, (lab, xr) in enumerate(zip(labels, x_reps)):
            yr = y_builder(k, i)
            if len(yr) != len(xr) or not math.isclose(yr.scale, xr.scale, rel_tol=1e-12):
                raise PreconditionViolated("Y must be built from the replicates of X with the same scale")
            y_laws[k, i] = yr.law()
            diff = x_mass[i] - yr.masses()
            R = len(xr)
            for eps in eps_list:
                frac = float(np.mean(diff >= eps))
                cond.append({"label": lab, "k": k, "eps": float(eps), "value": xr.scale * frac,
                             "std_error": xr.scale * math.sqrt(frac * (1 - frac) / max(R - 1, 1))})
        if cauchy:
            for i in range(len(x_reps) - 1):
                d = vague_distance(y_laws[k, i], y_laws[k, i + 1], gp_cfg, cache)
                rows_c.append({"k": k, "from": labels[i], "to": labels[i + 1], "vague_distance": d})
    last = len(x_reps) - 1
    diagonal = [{"k": k, "label": labels[last],
                 "vague_distance": vague_distance(y_laws[k, last], x_laws[last], gp_cfg, cache)}
                for k in k_list]
    rep = ConvergenceReport("approximation_harness")
    rep.tables = {"condition_ii": cond, "cauchy": rows_c, "diagonal": diagonal}
    mono = True
    for lab in labels:
        for eps in eps_list:
            v = [r["value"] for r in cond if r["label"] == lab and r["eps"] == float(eps)]
            mono &= all(a >= b for a, b in zip(v, v[1:]))
    rep.flags = {"condition_ii_nonincreasing": mono}
    rep.sequences = {"final_condition_ii": [r["value"] for r in cond
                                            if r["label"] == labels[last] and r["k"] == k_list[-1]],
                     "final_vague_distance": diagonal[-1]["vague_distance"]}
    rep.notes = ["condition (ii) uses the restriction bound d_GP(Y, X) <= |X| - |Y|"]
    return rep
