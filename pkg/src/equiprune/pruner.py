"""Sparsest-weight selection under prediction-equivalence constraints.

Given a set of constraint points, find non-negative tree weights that keep
the original predicted class on every point, minimizing either the number of
kept trees (L0, via big-M indicator binaries) or the weight sum (L1, a pure
LP). The total-weight normalization fixes the scale so the strict margin eps
is meaningful; predictions themselves are invariant to positive rescaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ensemble import Ensemble, predict_class
from .errors import EquipruneError, InfeasibleAtEpsilon, SolverUncertified
from .milp import (
    BINARY,
    CONTINUOUS,
    EQUAL,
    GREATER_EQUAL,
    INFEASIBLE,
    LESS_EQUAL,
    OPTIMAL,
    MilpModel,
    MilpSolution,
    solve,
)

L0 = "l0"
L1 = "l1"


class MarginSlip(EquipruneError):
    """Solved weights failed the exact prediction recheck on a constraint
    point (a near-tie at the LP vertex)."""


def default_margin(e: Ensemble) -> float:
    """eps = 1e-6 * max |leaf score| * total weight, floored at 1e-6."""
    peak = 0.0
    for m in range(e.n_trees):
        for leaf in e.leaves(m):
            peak = max(peak, max(abs(s) for s in leaf.scores))
    w_total = float(e.weights0.sum())
    return max(1e-6 * peak * w_total, 1e-6)


@dataclass
class PrunerProblem:
    """Constraint points plus objective choice for one weight solve.

    Points are deduplicated by their leaf-assignment cell: the equivalence
    constraint depends only on which leaves a point reaches.
    """

    ensemble: Ensemble
    points: list[np.ndarray]
    objective: str = L0
    eps: float | None = None
    _cells: list[tuple[int, ...]] = field(default_factory=list, repr=False)
    _classes: list[int] = field(default_factory=list, repr=False)
    _reps: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.objective not in (L0, L1):
            raise ValueError(f"objective must be {L0!r} or {L1!r}")
        e = self.ensemble
        seen: set[tuple[int, ...]] = set()
        for x in self.points:
            x = np.asarray(x, dtype=float)
            cell = e.leaf_assignment(x)
            if cell in seen:
                continue
            seen.add(cell)
            self._cells.append(cell)
            self._classes.append(predict_class(e, e.weights0, x))
            self._reps.append(x)

    @property
    def n_constraints(self) -> int:
        return len(self._cells)

    def margin_terms(self):
        """Per deduped point: (leaf-score matrix V[m][c], original class)."""
        e = self.ensemble
        for cell, c in zip(self._cells, self._classes):
            V = np.array([e.leaves(m)[cell[m]].scores for m in range(e.n_trees)])
            yield V, c


def _w0_min_strict_margin(prob: PrunerProblem) -> float:
    """Smallest original-weights margin over the strict class pairs."""
    e = prob.ensemble
    lowest = math.inf
    for V, c in prob.margin_terms():
        F = e.weights0 @ V
        for c2 in range(e.n_classes):
            if c2 < c:
                lowest = min(lowest, F[c] - F[c2])
    return lowest


def tie_margin(eps: float, w0_margin: float) -> float:
    """Protective margin for the tie-rule rows (c2 > c).

    Plain rhs-0 rows let the LP park solutions exactly on the argmax
    boundary, where float re-evaluation can flip the class. A margin of
    eps/100 (capped at half the original weights' own margin so they stay
    feasible) keeps solutions strictly inside, well within the documented
    strict-margin approximation.
    """
    return max(0.0, min(eps * 1e-2, w0_margin / 2.0))


def build_pruner_milp(prob: PrunerProblem, eps: float) -> tuple[MilpModel, list[int]]:
    """The weight-selection MILP; returns (model, weight variable indices)."""
    e = prob.ensemble
    M = e.n_trees
    w_total = float(e.weights0.sum())

    model = MilpModel()
    if prob.objective == L0:
        ub = w_total
    else:
        # L1 drops the normalization; bound generously so a scaled copy of
        # the original weights stays feasible.
        lowest = _w0_min_strict_margin(prob)
        scale = 1.0 if not math.isfinite(lowest) or lowest <= 0 else max(1.0, eps / lowest)
        ub = w_total * scale * 2.0
    w_vars = [model.add_var(name=f"w{m}", kind=CONTINUOUS, lb=0.0, ub=ub)
              for m in range(M)]

    z_vars: list[int] = []
    if prob.objective == L0:
        z_vars = [model.add_var(name=f"z{m}", kind=BINARY) for m in range(M)]
        for m in range(M):
            model.add_constraint({w_vars[m]: 1.0, z_vars[m]: -w_total},
                                 LESS_EQUAL, 0.0, name=f"link{m}")
        model.add_constraint({v: 1.0 for v in w_vars}, EQUAL, w_total,
                             name="scale")
        model.set_objective({v: 1.0 for v in z_vars}, sense="min")
    else:
        model.set_objective({v: 1.0 for v in w_vars}, sense="min")

    w0 = e.weights0
    for i, (V, c) in enumerate(prob.margin_terms()):
        F0 = w0 @ V
        for c2 in range(e.n_classes):
            if c2 == c:
                continue
            gains = V[:, c] - V[:, c2]
            coeffs = {w_vars[m]: float(gains[m]) for m in range(M)}
            if c2 < c:
                rhs = eps
            else:
                rhs = tie_margin(eps, float(F0[c] - F0[c2]))
            model.add_constraint(coeffs, GREATER_EQUAL, rhs, name=f"pt{i}_c{c2}")
            if prob.objective == L0 and rhs > 0:
                # Cover cut: some positively contributing tree must be kept,
                # else the strict margin is unreachable. Valid for every
                # integral solution; lifts the weak big-M relaxation.
                positives = {z_vars[m]: 1.0 for m in range(M) if gains[m] > 0}
                if positives and len(positives) < M:
                    model.add_constraint(positives, GREATER_EQUAL, 1.0,
                                         name=f"cover{i}_c{c2}")
    return model, w_vars


def _greedy_incumbent(prob: PrunerProblem, eps: float,
                      model: MilpModel, w_vars) -> np.ndarray | None:
    """A feasible support found greedily, used to seed the exact search.

    Solves the continuous relaxation once, ranks trees by their relaxed
    weight, and takes the smallest feasible prefix (LP feasibility per
    prefix). Returns a full assignment for the MILP's variables, or None.
    """
    from scipy.optimize import linprog

    e = prob.ensemble
    M = e.n_trees
    w_total = float(e.weights0.sum())
    rows = []
    rhs = []
    for V, c in prob.margin_terms():
        F0 = e.weights0 @ V
        for c2 in range(e.n_classes):
            if c2 == c:
                continue
            rows.append(-(V[:, c] - V[:, c2]))
            margin = eps if c2 < c else tie_margin(eps, float(F0[c] - F0[c2]))
            rhs.append(-margin)
    A_ub = np.array(rows) if rows else None
    b_ub = np.array(rhs) if rhs else None

    def feasible(support):
        bounds = [(0.0, w_total) if m in support else (0.0, 0.0)
                  for m in range(M)]
        res = linprog(np.zeros(M), A_ub=A_ub, b_ub=b_ub,
                      A_eq=np.ones((1, M)), b_eq=[w_total], bounds=bounds,
                      method="highs")
        return res.x if res.status == 0 else None

    relax = linprog(np.zeros(M), A_ub=A_ub, b_ub=b_ub,
                    A_eq=np.ones((1, M)), b_eq=[w_total],
                    bounds=[(0.0, w_total)] * M, method="highs")
    if relax.status != 0:
        return None
    name_to_idx = {v.name: i for i, v in enumerate(model.variables)}
    order = np.argsort(-relax.x, kind="stable")
    for k in range(1, M + 1):
        support = set(int(m) for m in order[:k])
        w = feasible(support)
        if w is not None:
            values = np.zeros(len(model.variables))
            for m, var in enumerate(w_vars):
                values[var] = w[m]
            for m in range(M):
                values[name_to_idx[f"z{m}"]] = 1.0 if m in support else 0.0
            return values
    return None


def solve_pruner(prob: PrunerProblem, time_limit_s: float = 120.0,
                 node_limit: int | None = None,
                 support_tol: float = 1e-9) -> tuple[np.ndarray, MilpSolution]:
    """Solve for the sparsest (or minimal-L1) equivalent weights.

    The margin eps defaults to :func:`default_margin` and is halved up to 20
    times until the original weights are themselves feasible; if they never
    are, raises InfeasibleAtEpsilon. After the solve, every constraint point
    is rechecked with exact ensemble arithmetic (MarginSlip on failure, after
    one tie-repair re-solve).
    """
    e = prob.ensemble
    eps = prob.eps if prob.eps is not None else default_margin(e)
    if prob.n_constraints:
        lowest = _w0_min_strict_margin(prob)
        halvings = 0
        while eps > lowest and halvings < 20:
            eps /= 2.0
            halvings += 1
        if eps > lowest:
            raise InfeasibleAtEpsilon(
                f"original weights have strict margin {lowest:.3e} < eps {eps:.3e}"
            )

    model, w_vars = build_pruner_milp(prob, eps)
    hint = None
    if prob.objective == L0 and prob.n_constraints:
        hint = _greedy_incumbent(prob, eps, model, w_vars)
    sol = solve(model, time_limit_s=time_limit_s, node_limit=node_limit,
                integral_objective=(prob.objective == L0),
                incumbent_hint=hint)
    if sol.status == INFEASIBLE:
        raise InfeasibleAtEpsilon(f"weight solve infeasible at eps={eps:.3e}")
    if sol.status != OPTIMAL:
        raise SolverUncertified(f"weight solve hit a limit: {sol.status}")

    w = _extract_weights(e, sol, w_vars, support_tol)
    bad = _recheck(prob, w)
    if not bad:
        return w, sol

    # Tie repair: force a small strict margin on exactly the slipped pairs.
    # It must exceed the LP feasibility tolerance or the repair is vacuous.
    tie_eps = min(eps, 1e-6)
    model2, w_vars2 = build_pruner_milp(prob, eps)
    for i, c2 in bad:
        name = f"pt{i}_c{c2}"
        for con in model2.constraints:
            if con.name == name:
                con.rhs = max(con.rhs, tie_eps)
    sol2 = solve(model2, time_limit_s=time_limit_s, node_limit=node_limit,
                 integral_objective=(prob.objective == L0))
    if sol2.status != OPTIMAL:
        raise MarginSlip("tie repair failed to produce optimal weights")
    w2 = _extract_weights(e, sol2, w_vars2, support_tol)
    if _recheck(prob, w2):
        raise MarginSlip("weights still flip a constraint point after repair")
    return w2, sol2


def _extract_weights(e: Ensemble, sol: MilpSolution, w_vars, support_tol):
    w = np.array([sol.value(v) for v in w_vars])
    w[np.abs(w) < support_tol * max(1.0, float(e.weights0.sum()))] = 0.0
    w[w < 0] = 0.0
    return w


def _recheck(prob: PrunerProblem, w) -> list[tuple[int, int]]:
    """Exact re-evaluation; returns (point index, offending class) slips."""
    e = prob.ensemble
    bad = []
    for i, (V, c) in enumerate(prob.margin_terms()):
        F = w @ V
        pred = int(np.argmax(F))
        if pred != c:
            bad.append((i, pred))
    return bad
