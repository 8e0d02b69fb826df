"""Exact counterexample search over the cells of a tree ensemble.

For every ordered class pair (c, c2), a MILP asks for a cell where the
original weights predict c while the candidate weights predict c2, optionally
restricted to the in-distribution region s(x) <= tau. Feature positions are
encoded by monotone interval indicators over the per-feature threshold sets;
each tree contributes one-hot leaf indicators linked to those intervals.

Infeasibility of every pair MILP is a certificate that no counterexample
exists (up to the strict-margin approximation of argmax ties). Any solver
limit makes the whole search uncertified: the absence of a found
counterexample is then not a certificate.
"""

from __future__ import annotations

import math
import os
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

from .ensemble import Ensemble, ThresholdIndex, TreeNode, leaf_paths, threshold_index, tree_leaves
from .ensemble import predict_class
from .milp import (
    BINARY,
    EQUAL,
    INFEASIBLE,
    LESS_EQUAL,
    GREATER_EQUAL,
    OPTIMAL,
    MilpModel,
    MilpSolution,
    export_lp,
    solve,
)
from .plausibility import (
    CHOW_LIU,
    ISOLATION_FOREST,
    LEAF_SUPPORT,
    ScoreModel,
    encode_chow_liu,
    encode_isolation,
    encode_leaf_support,
)

EPS_STRICT = 1e-6


@dataclass
class FeatureEncoding:
    """Monotone interval indicators mu[j][k] meaning x_j <= theta_{j,k}."""

    thresholds: ThresholdIndex
    model: MilpModel
    mu: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        for j in range(self.thresholds.n_features):
            row = [self.model.add_var(name=f"mu_{j}_{k}", kind=BINARY)
                   for k in range(len(self.thresholds.thresholds(j)))]
            for k in range(len(row) - 1):
                # monotone chain: x <= theta_k implies x <= theta_{k+1}
                self.model.add_constraint({row[k]: 1.0, row[k + 1]: -1.0},
                                          LESS_EQUAL, 0.0)
            self.mu.append(row)

    def mu_at(self, j: int, threshold: float) -> int:
        ts = self.thresholds.thresholds(j)
        k = bisect_left(ts, threshold)
        if k >= len(ts) or ts[k] != threshold:
            raise ValueError(f"threshold {threshold} not indexed for feature {j}")
        return self.mu[j][k]

    def add_tree_leaf_vars(self, tree: TreeNode, tag: str) -> list[int]:
        """One-hot leaf binaries for any tree whose split thresholds are all
        members of the augmented index."""
        paths = leaf_paths(tree)
        leaf_vars = [self.model.add_var(name=f"z_{tag}_{i}", kind=BINARY)
                     for i in range(len(paths))]
        self.model.add_constraint({v: 1.0 for v in leaf_vars}, EQUAL, 1.0)
        for v, path in zip(leaf_vars, paths):
            for feature, threshold, goes_left in path:
                mu = self.mu_at(feature, threshold)
                if goes_left:
                    self.model.add_constraint({v: 1.0, mu: -1.0}, LESS_EQUAL, 0.0)
                else:
                    self.model.add_constraint({v: 1.0, mu: 1.0}, LESS_EQUAL, 1.0)
        return leaf_vars

    def add_bin_indicator_vars(self, j: int, boundaries) -> list[int]:
        """Bin indicators q_{j,b} = mu(upper boundary) - mu(lower boundary),
        materialized as binaries with linking equalities and a sum-to-one."""
        m = self.model
        qs = [m.add_var(name=f"q_{j}_{b}", kind=BINARY)
              for b in range(len(boundaries) + 1)]
        if not boundaries:  # degenerate single-state feature
            m.add_constraint({qs[0]: 1.0}, EQUAL, 1.0)
            return qs
        mus = [self.mu_at(j, t) for t in boundaries]
        m.add_constraint({qs[0]: 1.0, mus[0]: -1.0}, EQUAL, 0.0)
        for b in range(1, len(boundaries)):
            m.add_constraint({qs[b]: 1.0, mus[b]: -1.0, mus[b - 1]: 1.0},
                             EQUAL, 0.0)
        m.add_constraint({qs[-1]: 1.0, mus[-1]: 1.0}, EQUAL, 1.0)
        m.add_constraint({q: 1.0 for q in qs}, EQUAL, 1.0)
        return qs

    def interval_of(self, values, j: int) -> tuple[float, float]:
        """Decode the (lo, hi] interval of feature j from solved mu values."""
        ts = self.thresholds.thresholds(j)
        hi_index = None
        for k, var in enumerate(self.mu[j]):
            if values[var] > 0.5:
                hi_index = k
                break
        if hi_index is None:
            lo = ts[-1] if ts else -math.inf
            return (lo, math.inf)
        lo = ts[hi_index - 1] if hi_index > 0 else -math.inf
        return (lo, ts[hi_index])


@dataclass(frozen=True)
class CellAssignment:
    """Per-feature interval (lo, hi] plus the implied leaf per tree."""

    intervals: tuple[tuple[float, float], ...]
    leaves: tuple[int, ...]

    @property
    def key(self) -> tuple[int, ...]:
        return self.leaves


@dataclass(frozen=True)
class Counterexample:
    x: tuple[float, ...]
    original_class: int
    pruned_class: int
    cell: CellAssignment
    certificate: MilpSolution


@dataclass
class OracleResult:
    certified: bool
    found: list[Counterexample]
    pair_statuses: dict[tuple[int, int], str]


def reconstruct_point(cell: CellAssignment) -> np.ndarray:
    """A concrete point inside the cell: the inclusive right endpoint when
    bounded above, lo + 1 when right-unbounded, 0 when fully unbounded."""
    out = []
    for lo, hi in cell.intervals:
        if math.isfinite(hi):
            out.append(hi)
        elif math.isfinite(lo):
            out.append(lo + 1.0)
        else:
            out.append(0.0)
    return np.array(out)


def build_pair_milp(e: Ensemble, w0, w, c: int, c2: int,
                    theta: ThresholdIndex,
                    score: ScoreModel | None = None,
                    tau: float = math.inf,
                    eps_strict: float = EPS_STRICT):
    """MILP whose feasible points are cells where the original weights
    predict c and the candidate weights predict c2 (within the strict-margin
    approximation), with the score constraint active when tau is finite."""
    model = MilpModel()
    enc = FeatureEncoding(thresholds=theta, model=model)
    leaf_vars = [enc.add_tree_leaf_vars(tree, tag=str(m))
                 for m, tree in enumerate(e.trees)]

    def class_constraints(weights, target):
        # Strict pairs get the full margin; tie-rule pairs a 100x smaller
        # one, keeping solutions off the exact argmax boundary. Both sit
        # inside the documented strict-margin approximation of the search.
        for other in range(e.n_classes):
            if other == target:
                continue
            coeffs: dict[int, float] = {}
            for m in range(e.n_trees):
                if weights[m] == 0.0:
                    continue
                for li, leaf in enumerate(e.leaves(m)):
                    coef = weights[m] * (leaf.scores[target] - leaf.scores[other])
                    if coef != 0.0:
                        var = leaf_vars[m][li]
                        coeffs[var] = coeffs.get(var, 0.0) + coef
            rhs = eps_strict if other < target else eps_strict * 1e-2
            model.add_constraint(coeffs, GREATER_EQUAL, rhs,
                                 name=f"cls_{target}_vs_{other}")

    class_constraints(np.asarray(w0, dtype=float), c)
    class_constraints(np.asarray(w, dtype=float), c2)

    if score is not None and math.isfinite(tau):
        if score.kind == CHOW_LIU:
            cl = score.chow_liu
            bin_vars = {j: enc.add_bin_indicator_vars(j, cl.grid.boundaries[j])
                        for j in cl.order}
            encode_chow_liu(cl, tau, model, bin_vars)
        elif score.kind == LEAF_SUPPORT:
            encode_leaf_support(score.leaf_support, tau, model, leaf_vars)
        elif score.kind == ISOLATION_FOREST:
            iso_leaf_vars = [enc.add_tree_leaf_vars(tree, tag=f"iso{k}")
                             for k, tree in enumerate(score.iforest.trees)]
            encode_isolation(score.iforest, tau, model, iso_leaf_vars)
        else:
            raise ValueError(f"unknown score kind {score.kind!r}")

    # Strongest violation first: maximize the candidate-model margin of c2
    # over c. Any feasible point is a valid counterexample; the objective
    # only picks informative cuts.
    objective: dict[int, float] = {}
    w = np.asarray(w, dtype=float)
    for m in range(e.n_trees):
        if w[m] == 0.0:
            continue
        for li, leaf in enumerate(e.leaves(m)):
            coef = w[m] * (leaf.scores[c2] - leaf.scores[c])
            if coef != 0.0:
                var = leaf_vars[m][li]
                objective[var] = objective.get(var, 0.0) + coef
    model.set_objective(objective, sense="max")
    return model, enc, leaf_vars


def _extract_cell(e: Ensemble, enc: FeatureEncoding, leaf_vars,
                  values) -> CellAssignment:
    intervals = tuple(enc.interval_of(values, j)
                      for j in range(enc.thresholds.n_features))
    leaves = []
    for m in range(e.n_trees):
        picked = [li for li, v in enumerate(leaf_vars[m]) if values[v] > 0.5]
        leaves.append(picked[0])
    return CellAssignment(intervals=intervals, leaves=tuple(leaves))


def find_counterexamples(e: Ensemble, w0, w, score: ScoreModel | None = None,
                         tau: float = math.inf,
                         eps_strict: float = EPS_STRICT,
                         time_limit_s: float = 120.0,
                         node_limit: int | None = None,
                         first_feasible: bool = False,
                         theta: ThresholdIndex | None = None,
                         dump_dir: str | None = None) -> OracleResult:
    """Search every ordered class pair for a prediction disagreement.

    Returns certified=True only when every pair MILP proved infeasible.
    Found counterexamples are rechecked with exact ensemble arithmetic; a
    candidate that fails the recheck is dropped and the result is marked
    uncertified.
    """
    if theta is None:
        extra = score.extra_thresholds() if score is not None else None
        theta = threshold_index(e, extra=extra)
    certified = True
    found: list[Counterexample] = []
    seen_cells: set[tuple[int, ...]] = set()
    statuses: dict[tuple[int, int], str] = {}
    for c in range(e.n_classes):
        for c2 in range(e.n_classes):
            if c2 == c:
                continue
            model, enc, leaf_vars = build_pair_milp(
                e, w0, w, c, c2, theta, score=score, tau=tau,
                eps_strict=eps_strict)
            sol = solve(model, time_limit_s=time_limit_s,
                        node_limit=node_limit, first_feasible=first_feasible)
            statuses[(c, c2)] = sol.status
            if dump_dir is not None:
                _dump_pair(dump_dir, c, c2, model, sol)
            if sol.status == INFEASIBLE:
                continue
            if sol.status != OPTIMAL:
                certified = False
                if sol.values is None:
                    continue
            cell = _extract_cell(e, enc, leaf_vars, sol.values)
            x = reconstruct_point(cell)
            ok = (predict_class(e, w0, x) == c
                  and predict_class(e, w, x) == c2)
            if ok and score is not None and math.isfinite(tau):
                ok = score.score(e, x) <= tau + 1e-9
            if not ok:
                certified = False  # margin slip: cannot certify this pass
                continue
            if cell.key in seen_cells:
                continue
            seen_cells.add(cell.key)
            found.append(Counterexample(
                x=tuple(float(v) for v in x), original_class=c,
                pruned_class=c2, cell=cell, certificate=sol))
    return OracleResult(certified=certified, found=found,
                        pair_statuses=statuses)


def _dump_pair(dump_dir: str, c: int, c2: int, model: MilpModel,
               sol: MilpSolution) -> None:
    import json

    os.makedirs(dump_dir, exist_ok=True)
    base = os.path.join(dump_dir, f"pair_{c}_{c2}")
    with open(base + ".lp", "w", encoding="utf-8") as fh:
        fh.write(export_lp(model))
    with open(base + ".sol.json", "w", encoding="utf-8") as fh:
        json.dump(sol.to_json(), fh)


def count_binaries(e: Ensemble, score: ScoreModel | None,
                   theta: ThresholdIndex) -> int:
    """Binary-variable budget of one pair MILP, for size assertions."""
    total = sum(len(theta.thresholds(j)) for j in range(theta.n_features))
    total += sum(len(e.leaves(m)) for m in range(e.n_trees))
    if score is not None and score.kind == CHOW_LIU:
        cl = score.chow_liu
        total += sum(cl.grid.n_bins(j) for j in cl.order)
        for i, j in cl.edges:
            total += cl.grid.n_bins(i) * cl.grid.n_bins(j)
    if score is not None and score.kind == ISOLATION_FOREST:
        total += sum(len(tree_leaves(t)) for t in score.iforest.trees)
    return total
