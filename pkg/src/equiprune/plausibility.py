"""Plausible-score models: fit on data, evaluate s(x), encode s(x) <= tau.

Three score families are provided, all with "smaller is more in-distribution"
semantics and all linearly encodable into the counterexample-search MILP:

* Chow-Liu: negative log-likelihood of a tree-factorized discrete
  distribution over bin-discretized features. Bin boundaries are rounded to
  ensemble split thresholds so that the MILP-feasible region matches the
  score region exactly.
* Leaf support: per-tree negative log leaf-visitation frequency, summed over
  the ensemble's trees.
* Isolation forest: negated average corrected path length over random
  isolation trees.

Encoders are no-ops when tau is +infinity, which realizes full-space search
through the same code path.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .ensemble import (
    Ensemble,
    Internal,
    Leaf,
    ThresholdIndex,
    TreeNode,
    leaf_of,
    tree_leaves,
)
from .errors import DegenerateGrid, NoThresholds, SchemaError, TooFewSamples
from .milp import BINARY, LESS_EQUAL, GREATER_EQUAL, MilpModel

CHOW_LIU = "chowliu"
LEAF_SUPPORT = "leafsupport"
ISOLATION_FOREST = "iforest"
SCORE_KINDS = (CHOW_LIU, LEAF_SUPPORT, ISOLATION_FOREST)


# --- bin grid ---------------------------------------------------------------


@dataclass(frozen=True)
class BinGrid:
    """Per-feature interior bin boundaries, each grounded in the ensemble's
    split thresholds. Features never split by the ensemble are excluded."""

    boundaries: tuple[tuple[float, ...], ...]
    included: tuple[bool, ...]

    @property
    def n_features(self) -> int:
        return len(self.boundaries)

    def n_bins(self, j: int) -> int:
        return len(self.boundaries[j]) + 1

    def bin_of(self, j: int, value: float) -> int:
        """Bin index of a value; value <= boundary lands in the lower bin,
        matching the tree routing convention."""
        return bisect_left(self.boundaries[j], value)

    def included_features(self) -> list[int]:
        return [j for j in range(self.n_features) if self.included[j]]


def _lower_quantile(sorted_vals: np.ndarray, b: int, B: int) -> float:
    """Order statistic at 1-based index ceil(q * n) with q = b/B."""
    n = len(sorted_vals)
    idx = -((-b * n) // B)  # exact integer ceiling
    return float(sorted_vals[idx - 1])


def _round_to_thresholds(value: float, thresholds: tuple[float, ...]) -> float:
    """Nearest threshold; exact ties pick the larger value."""
    pos = bisect_left(thresholds, value)
    if pos == 0:
        return thresholds[0]
    if pos == len(thresholds):
        return thresholds[-1]
    lo, hi = thresholds[pos - 1], thresholds[pos]
    if value - lo < hi - value:
        return lo
    return hi  # ties go to the larger split value


def build_bin_grid(fit: Dataset, B: int, theta: ThresholdIndex) -> BinGrid:
    """Quantile bin boundaries per feature, rounded onto ensemble thresholds.

    Empirical quantiles at b/B (b = 1..B-1, lower interpolation) are mapped
    to the nearest element of the per-feature threshold set, deduplicated,
    and sorted. Features with no thresholds at all are flagged excluded.
    """
    if B < 2:
        raise ValueError("B must be >= 2")
    boundaries: list[tuple[float, ...]] = []
    included: list[bool] = []
    any_included = False
    for j in range(theta.n_features):
        ts = theta.thresholds(j)
        if not ts:
            boundaries.append(())
            included.append(False)
            continue
        vals = np.sort(fit.rows[:, j])
        rounded = {
            _round_to_thresholds(_lower_quantile(vals, b, B), ts)
            for b in range(1, B)
        }
        boundaries.append(tuple(sorted(rounded)))
        included.append(True)
        any_included = True
    if not any_included:
        raise NoThresholds("no feature carries a split threshold")
    return BinGrid(boundaries=tuple(boundaries), included=tuple(included))


# --- Chow-Liu tree model ----------------------------------------------------


@dataclass(frozen=True)
class ChowLiuModel:
    """Tree-factorized distribution over discretized features.

    ``order`` lists the included features root-first in topological order;
    ``parent`` maps each non-root to its parent. ``root_table`` holds the
    root marginal; ``edge_tables[j][b_parent][b_child]`` the conditionals.
    All probabilities are pseudo-count smoothed, so every state has a finite
    negative log-likelihood.
    """

    grid: BinGrid
    root: int
    order: tuple[int, ...]
    parent: dict[int, int]
    root_table: np.ndarray
    edge_tables: dict[int, np.ndarray]
    beta: float

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(self.parent[j], j) for j in self.order if j != self.root]

    def state_of(self, x) -> dict[int, int]:
        return {j: self.grid.bin_of(j, x[j]) for j in self.order}

    def state_score(self, state: dict[int, int]) -> float:
        total = -math.log(self.root_table[state[self.root]])
        for j in self.order:
            if j == self.root:
                continue
            total += -math.log(self.edge_tables[j][state[self.parent[j]], state[j]])
        return total


def mutual_information(a: np.ndarray, b: np.ndarray, na: int, nb: int) -> float:
    """Plug-in empirical mutual information (nats) of two discrete columns."""
    n = len(a)
    joint = np.zeros((na, nb))
    np.add.at(joint, (a, b), 1.0)
    joint /= n
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    mi = 0.0
    for i in range(na):
        for k in range(nb):
            if joint[i, k] > 0:
                mi += joint[i, k] * math.log(joint[i, k] / (pa[i] * pb[k]))
    return mi


def fit_chow_liu(fit: Dataset, grid: BinGrid, beta: float = 1.0,
                 root_rule="max_degree") -> ChowLiuModel:
    """Maximum spanning tree over pairwise mutual information, with
    pseudo-count-smoothed probability tables.

    Kruskal ties are broken by lexicographic edge index; the default root is
    the maximum-degree node (ties to the lowest feature index), and
    ``root_rule`` may instead name an included feature explicitly.
    """
    nodes = grid.included_features()
    if not nodes:
        raise DegenerateGrid("no included features to model")
    if beta <= 0:
        raise ValueError("beta must be > 0")

    disc = {j: np.array([grid.bin_of(j, v) for v in fit.rows[:, j]], dtype=np.int64)
            for j in nodes}

    # Maximum spanning tree (Kruskal over -MI, ties lexicographic).
    chosen: list[tuple[int, int]] = []
    if len(nodes) > 1:
        scored = []
        for ai in range(len(nodes)):
            for bi in range(ai + 1, len(nodes)):
                i, j = nodes[ai], nodes[bi]
                mi = mutual_information(disc[i], disc[j], grid.n_bins(i), grid.n_bins(j))
                scored.append((-mi, i, j))
        scored.sort()
        parent_uf = {j: j for j in nodes}

        def find(a):
            while parent_uf[a] != a:
                parent_uf[a] = parent_uf[parent_uf[a]]
                a = parent_uf[a]
            return a

        for _, i, j in scored:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent_uf[ri] = rj
                chosen.append((i, j))

    adjacency: dict[int, list[int]] = {j: [] for j in nodes}
    for i, j in chosen:
        adjacency[i].append(j)
        adjacency[j].append(i)

    if root_rule == "max_degree":
        root = max(nodes, key=lambda j: (len(adjacency[j]), -j))
    else:
        root = int(root_rule)
        if root not in nodes:
            raise DegenerateGrid(f"root {root} is not an included feature")

    # Orient edges away from the root.
    order = [root]
    parent: dict[int, int] = {}
    frontier = [root]
    seen = {root}
    while frontier:
        u = frontier.pop(0)
        for v in sorted(adjacency[u]):
            if v not in seen:
                seen.add(v)
                parent[v] = u
                order.append(v)
                frontier.append(v)

    n = fit.n_rows
    Br = grid.n_bins(root)
    counts = np.bincount(disc[root], minlength=Br).astype(float)
    root_table = (counts + beta) / (n + beta * Br)

    edge_tables: dict[int, np.ndarray] = {}
    for j in order:
        if j == root:
            continue
        i = parent[j]
        Bi, Bj = grid.n_bins(i), grid.n_bins(j)
        joint = np.zeros((Bi, Bj))
        np.add.at(joint, (disc[i], disc[j]), 1.0)
        table = (joint + beta) / (joint.sum(axis=1, keepdims=True) + beta * Bj)
        edge_tables[j] = table

    return ChowLiuModel(grid=grid, root=root, order=tuple(order), parent=parent,
                        root_table=root_table, edge_tables=edge_tables,
                        beta=float(beta))


def score_chow_liu(model: ChowLiuModel, x) -> float:
    """Negative log-likelihood of the discretized input under the model."""
    return model.state_score(model.state_of(x))


def encode_chow_liu(model: ChowLiuModel, tau: float, milp: MilpModel,
                    bin_vars: dict[int, list[int]]) -> None:
    """Add the linear constraint score(x) <= tau over bin indicators.

    ``bin_vars[j]`` are binary indicators (one per bin of feature j, summing
    to one) already linked to the feature encoding by the caller. Each tree
    edge gets pairwise AND binaries u with the standard three-inequality
    linearization; the score is then a linear sum of the root indicators and
    the edge pair indicators. No-op when tau is +infinity.
    """
    if math.isinf(tau) and tau > 0:
        return
    terms: list[tuple[int, float]] = []
    for b, q in enumerate(bin_vars[model.root]):
        terms.append((q, -math.log(model.root_table[b])))
    for i, j in model.edges:
        table = model.edge_tables[j]
        for b, qi in enumerate(bin_vars[i]):
            for b2, qj in enumerate(bin_vars[j]):
                u = milp.add_var(name=f"u_{i}_{j}_{b}_{b2}", kind=BINARY)
                milp.add_constraint([(u, 1.0), (qi, -1.0)], LESS_EQUAL, 0.0)
                milp.add_constraint([(u, 1.0), (qj, -1.0)], LESS_EQUAL, 0.0)
                milp.add_constraint([(u, 1.0), (qi, -1.0), (qj, -1.0)],
                                    GREATER_EQUAL, -1.0)
                terms.append((u, -math.log(table[b, b2])))
    milp.add_constraint(terms, LESS_EQUAL, float(tau), name="score_cl")


# --- leaf support -----------------------------------------------------------


@dataclass(frozen=True)
class LeafSupportModel:
    """Per-tree, per-leaf costs a = -log(smoothed visitation frequency)."""

    costs: tuple[tuple[float, ...], ...]
    beta: float

    def tree_cost(self, m: int, leaf: int) -> float:
        return self.costs[m][leaf]


def fit_leaf_support(e: Ensemble, fit: Dataset, beta: float = 1.0) -> LeafSupportModel:
    """Count leaf visits on the fit set and convert to smoothed -log costs."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    costs: list[tuple[float, ...]] = []
    for m, tree in enumerate(e.trees):
        n_leaves = len(e.leaves(m))
        counts = np.zeros(n_leaves)
        for x in fit.rows:
            counts[leaf_of(tree, x)] += 1
        probs = (counts + beta) / (counts.sum() + beta * n_leaves)
        costs.append(tuple(-np.log(probs)))
    return LeafSupportModel(costs=tuple(costs), beta=float(beta))


def score_leaf_support(model: LeafSupportModel, e: Ensemble, x) -> float:
    """Sum of per-tree costs at the leaves reached by x."""
    return sum(model.tree_cost(m, leaf_of(tree, x)) for m, tree in enumerate(e.trees))


def encode_leaf_support(model: LeafSupportModel, tau: float, milp: MilpModel,
                        leaf_vars: list[list[int]]) -> None:
    """Single inequality sum(a * z) <= tau over existing leaf indicators."""
    if math.isinf(tau) and tau > 0:
        return
    terms = []
    for m, row in enumerate(model.costs):
        for leaf, a in enumerate(row):
            terms.append((leaf_vars[m][leaf], float(a)))
    milp.add_constraint(terms, LESS_EQUAL, float(tau), name="score_ls")


# --- isolation forest ------------------------------------------------------


def average_path_length(n: int) -> float:
    """Expected search length correction c(n); c(1) = 0 by convention."""
    if n <= 1:
        return 0.0
    harmonic = sum(1.0 / i for i in range(1, n))
    return 2.0 * harmonic - 2.0 * (n - 1) / n


@dataclass(frozen=True)
class IsolationForestModel:
    """K isolation trees; leaves carry the corrected path length h as their
    single score entry, so the shared tree machinery applies."""

    trees: tuple[TreeNode, ...]
    n_features: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def thresholds(self) -> dict[int, list[float]]:
        out: dict[int, list[float]] = {}

        def walk(node):
            if isinstance(node, Internal):
                out.setdefault(node.feature, []).append(node.threshold)
                walk(node.left)
                walk(node.right)

        for t in self.trees:
            walk(t)
        return out


def _grow_isolation_tree(X: np.ndarray, rows: np.ndarray, depth: int,
                         cap: int, rng: np.random.Generator) -> TreeNode:
    n = len(rows)
    if n <= 1 or depth >= cap:
        return Leaf(scores=(depth + average_path_length(n),))
    spread = [j for j in range(X.shape[1])
              if X[rows, j].min() < X[rows, j].max()]
    if not spread:
        return Leaf(scores=(depth + average_path_length(n),))
    j = spread[rng.integers(len(spread))]
    lo, hi = X[rows, j].min(), X[rows, j].max()
    thr = float(rng.uniform(lo, hi))
    mask = X[rows, j] <= thr
    return Internal(
        feature=j,
        threshold=thr,
        left=_grow_isolation_tree(X, rows[mask], depth + 1, cap, rng),
        right=_grow_isolation_tree(X, rows[~mask], depth + 1, cap, rng),
    )


def fit_isolation_forest(fit: Dataset, K: int = 30, max_samples: int = 256,
                         seed: int = 0) -> IsolationForestModel:
    """Grow K isolation trees (random feature, uniform split in the current
    range, depth cap ceil(log2(sample size)))."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if max_samples < 2:
        raise ValueError("max_samples must be >= 2")
    n = fit.n_rows
    if n < 2:
        raise TooFewSamples("isolation forest needs at least 2 rows")
    rng = np.random.Generator(np.random.Philox(seed))
    sample_size = min(max_samples, n)
    cap = math.ceil(math.log2(sample_size))
    trees = []
    for _ in range(K):
        rows = rng.choice(n, size=sample_size, replace=False)
        trees.append(_grow_isolation_tree(fit.rows, rows, 0, cap, rng))
    return IsolationForestModel(trees=tuple(trees), n_features=fit.n_features)


def score_isolation(model: IsolationForestModel, x) -> float:
    """Negated average corrected path length: smaller = more in-distribution."""
    total = 0.0
    for tree in model.trees:
        total += tree_leaves(tree)[leaf_of(tree, x)].scores[0]
    return -total / model.n_trees


def encode_isolation(model: IsolationForestModel, tau: float, milp: MilpModel,
                     leaf_vars: list[list[int]]) -> None:
    """Constraint -(1/K) * sum(h * g) <= tau over isolation-leaf indicators."""
    if math.isinf(tau) and tau > 0:
        return
    K = model.n_trees
    terms = []
    for k, tree in enumerate(model.trees):
        for leaf_idx, leaf in enumerate(tree_leaves(tree)):
            terms.append((leaf_vars[k][leaf_idx], -leaf.scores[0] / K))
    milp.add_constraint(terms, LESS_EQUAL, float(tau), name="score_if")


# --- score model facade ------------------------------------------------------


@dataclass(frozen=True)
class ScoreModel:
    """A fitted plausibility model tagged with its kind."""

    kind: str
    chow_liu: ChowLiuModel | None = None
    leaf_support: LeafSupportModel | None = None
    iforest: IsolationForestModel | None = None

    def score(self, e: Ensemble, x) -> float:
        if self.kind == CHOW_LIU:
            return score_chow_liu(self.chow_liu, x)
        if self.kind == LEAF_SUPPORT:
            return score_leaf_support(self.leaf_support, e, x)
        return score_isolation(self.iforest, x)

    def extra_thresholds(self) -> dict[int, list[float]]:
        """Thresholds the oracle must add so the score is exactly encodable.

        Chow-Liu boundaries are already members of the ensemble threshold
        sets by construction; isolation-tree splits are new."""
        if self.kind == ISOLATION_FOREST:
            return self.iforest.thresholds()
        return {}


def fit_score_model(kind: str, e: Ensemble, fit: Dataset, *, bins: int = 4,
                    beta: float = 1.0, if_trees: int = 30,
                    if_max_samples: int = 256, seed: int = 0,
                    theta: ThresholdIndex | None = None) -> ScoreModel:
    """Fit the named score family on the fit set."""
    if kind == CHOW_LIU:
        from .ensemble import threshold_index
        base = theta if theta is not None else threshold_index(e)
        grid = build_bin_grid(fit, bins, base)
        return ScoreModel(kind=kind, chow_liu=fit_chow_liu(fit, grid, beta))
    if kind == LEAF_SUPPORT:
        return ScoreModel(kind=kind, leaf_support=fit_leaf_support(e, fit, beta))
    if kind == ISOLATION_FOREST:
        return ScoreModel(kind=kind, iforest=fit_isolation_forest(
            fit, K=if_trees, max_samples=if_max_samples, seed=seed))
    raise ValueError(f"unknown score kind {kind!r}")


# --- JSON persistence ---------------------------------------------------------


def _iso_node_to_json(node: TreeNode):
    if isinstance(node, Leaf):
        return {"leaf": node.scores[0]}
    return {"feature": node.feature, "threshold": node.threshold,
            "left": _iso_node_to_json(node.left),
            "right": _iso_node_to_json(node.right)}


def _iso_node_from_json(obj, path):
    if "leaf" in obj:
        return Leaf(scores=(float(obj["leaf"]),))
    for key in ("feature", "threshold", "left", "right"):
        if key not in obj:
            raise SchemaError(f"missing key {key!r}", path)
    return Internal(feature=int(obj["feature"]), threshold=float(obj["threshold"]),
                    left=_iso_node_from_json(obj["left"], path + ".left"),
                    right=_iso_node_from_json(obj["right"], path + ".right"))


def save_score_model(model: ScoreModel, path) -> None:
    if model.kind == CHOW_LIU:
        cl = model.chow_liu
        payload = {
            "kind": CHOW_LIU,
            "boundaries": [list(b) for b in cl.grid.boundaries],
            "included": list(cl.grid.included),
            "root": cl.root,
            "order": list(cl.order),
            "parents": {str(j): i for j, i in cl.parent.items()},
            "root_table": [float(v) for v in cl.root_table],
            "edge_tables": {str(j): [[float(v) for v in row] for row in t]
                            for j, t in cl.edge_tables.items()},
            "beta": cl.beta,
        }
    elif model.kind == LEAF_SUPPORT:
        ls = model.leaf_support
        payload = {
            "kind": LEAF_SUPPORT,
            "costs": [list(row) for row in ls.costs],
            "beta": ls.beta,
        }
    else:
        payload = {
            "kind": ISOLATION_FOREST,
            "n_features": model.iforest.n_features,
            "trees": [_iso_node_to_json(t) for t in model.iforest.trees],
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_score_model(path) -> ScoreModel:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    kind = obj.get("kind")
    if kind == CHOW_LIU:
        grid = BinGrid(boundaries=tuple(tuple(b) for b in obj["boundaries"]),
                       included=tuple(bool(v) for v in obj["included"]))
        model = ChowLiuModel(
            grid=grid,
            root=int(obj["root"]),
            order=tuple(int(v) for v in obj["order"]),
            parent={int(j): int(i) for j, i in obj["parents"].items()},
            root_table=np.asarray(obj["root_table"], dtype=float),
            edge_tables={int(j): np.asarray(t, dtype=float)
                         for j, t in obj["edge_tables"].items()},
            beta=float(obj["beta"]),
        )
        return ScoreModel(kind=kind, chow_liu=model)
    if kind == LEAF_SUPPORT:
        return ScoreModel(kind=kind, leaf_support=LeafSupportModel(
            costs=tuple(tuple(float(v) for v in row) for row in obj["costs"]),
            beta=float(obj["beta"])))
    if kind == ISOLATION_FOREST:
        trees = tuple(_iso_node_from_json(t, f"$.trees[{i}]")
                      for i, t in enumerate(obj["trees"]))
        return ScoreModel(kind=kind, iforest=IsolationForestModel(
            trees=trees, n_features=int(obj["n_features"])))
    raise SchemaError(f"unknown score model kind {kind!r}", "$.kind")
