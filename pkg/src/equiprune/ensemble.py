"""Weighted tree ensembles: representation, prediction, training, and I/O.

The routing convention is fixed everywhere in this package: an internal node
sends ``x[feature] <= threshold`` to the left child. Leaf score vectors all
have length ``n_classes``; the ensemble score is the weight-scaled sum of the
reached leaf vectors, and the predicted class is the argmax with ties broken
toward the smallest class index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DegenerateLabels, DimensionMismatch, SchemaError


@dataclass(frozen=True)
class Leaf:
    scores: tuple[float, ...]


@dataclass(frozen=True)
class Internal:
    feature: int
    threshold: float
    left: "Leaf | Internal"
    right: "Leaf | Internal"


TreeNode = Leaf | Internal


def tree_leaves(root: TreeNode) -> list[Leaf]:
    """All leaves of a tree in left-to-right order."""
    out: list[Leaf] = []

    def walk(node):
        if isinstance(node, Leaf):
            out.append(node)
        else:
            walk(node.left)
            walk(node.right)

    walk(root)
    return out


def leaf_paths(root: TreeNode) -> list[list[tuple[int, float, bool]]]:
    """Per leaf (left-to-right order), the list of (feature, threshold,
    goes_left) decisions on the root-to-leaf path."""
    out: list[list[tuple[int, float, bool]]] = []

    def walk(node, path):
        if isinstance(node, Leaf):
            out.append(path)
        else:
            walk(node.left, path + [(node.feature, node.threshold, True)])
            walk(node.right, path + [(node.feature, node.threshold, False)])

    walk(root, [])
    return out


def _count_leaves(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 1
    return _count_leaves(node.left) + _count_leaves(node.right)


def leaf_of(root: TreeNode, x) -> int:
    """Index (left-to-right order) of the leaf reached by x. Total function."""
    node = root
    index = 0
    while isinstance(node, Internal):
        if x[node.feature] <= node.threshold:
            node = node.left
        else:
            index += _count_leaves(node.left)
            node = node.right
    return index


@dataclass
class Ensemble:
    """A list of trees with non-negative per-tree weights.

    Treated as immutable after construction; prediction is pure.
    """

    trees: list[TreeNode]
    weights0: np.ndarray
    n_classes: int
    n_features: int
    _leaves: list[list[Leaf]] = field(default_factory=list, repr=False)
    _paths: list[list[list[tuple[int, float, bool]]]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights0 = np.asarray(self.weights0, dtype=float)
        if len(self.trees) == 0:
            raise ValueError("an ensemble needs at least one tree")
        if self.weights0.shape != (len(self.trees),):
            raise DimensionMismatch("weights0 must have one entry per tree")
        if np.any(self.weights0 < 0):
            raise ValueError("weights0 must be non-negative")
        self._leaves = [tree_leaves(t) for t in self.trees]
        self._paths = [leaf_paths(t) for t in self.trees]
        for m, leaves in enumerate(self._leaves):
            for leaf in leaves:
                if len(leaf.scores) != self.n_classes:
                    raise DimensionMismatch(
                        f"tree {m} has a leaf with {len(leaf.scores)} scores, "
                        f"expected {self.n_classes}"
                    )

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def leaves(self, m: int) -> list[Leaf]:
        return self._leaves[m]

    def paths(self, m: int) -> list[list[tuple[int, float, bool]]]:
        return self._paths[m]

    def leaf_assignment(self, x) -> tuple[int, ...]:
        """Leaf index reached in every tree; identifies the cell of x."""
        return tuple(leaf_of(t, x) for t in self.trees)


@dataclass(frozen=True)
class ThresholdIndex:
    """Per feature, the sorted deduplicated thresholds used across trees."""

    per_feature: tuple[tuple[float, ...], ...]

    def thresholds(self, j: int) -> tuple[float, ...]:
        return self.per_feature[j]

    @property
    def n_features(self) -> int:
        return len(self.per_feature)

    def n_cells(self) -> int:
        out = 1
        for t in self.per_feature:
            out *= len(t) + 1
        return out

    def merged(self, extra: dict[int, list[float]] | None) -> "ThresholdIndex":
        """Union with extra per-feature thresholds (exact-equality dedup)."""
        if not extra:
            return self
        per = []
        for j, ts in enumerate(self.per_feature):
            more = extra.get(j, ())
            per.append(tuple(sorted(set(ts) | set(float(t) for t in more))))
        return ThresholdIndex(per_feature=tuple(per))


def threshold_index(e: Ensemble, extra: dict[int, list[float]] | None = None) -> ThresholdIndex:
    """Sorted per-feature union of all split thresholds in the ensemble."""
    sets: list[set[float]] = [set() for _ in range(e.n_features)]

    def walk(node):
        if isinstance(node, Internal):
            sets[node.feature].add(float(node.threshold))
            walk(node.left)
            walk(node.right)

    for t in e.trees:
        walk(t)
    base = ThresholdIndex(per_feature=tuple(tuple(sorted(s)) for s in sets))
    return base.merged(extra)


def predict_scores(e: Ensemble, w, x) -> np.ndarray:
    """Ensemble score vector: sum over trees of weight * reached-leaf scores."""
    w = np.asarray(w, dtype=float)
    if w.shape != (e.n_trees,):
        raise DimensionMismatch(f"expected {e.n_trees} weights, got {w.shape}")
    if len(x) != e.n_features:
        raise DimensionMismatch(f"expected {e.n_features} features, got {len(x)}")
    total = np.zeros(e.n_classes)
    for m, tree in enumerate(e.trees):
        if w[m] == 0.0:
            continue
        total += w[m] * np.asarray(e.leaves(m)[leaf_of(tree, x)].scores)
    return total


def predict_class(e: Ensemble, w, x) -> int:
    """Argmax class of predict_scores; ties go to the smallest class index."""
    scores = predict_scores(e, w, x)
    return int(np.argmax(scores))  # np.argmax returns the first maximum


def predict_class_batch(e: Ensemble, w, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.array([predict_class(e, w, x) for x in X], dtype=np.int64)


# --- built-in boosted trainer ------------------------------------------


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _softmax(F):
    Z = F - F.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _best_split(X, g, h, rows, reg):
    """Exact greedy split search: best (gain, feature, threshold) over all
    midpoints between consecutive distinct values, or None if no split
    improves the Newton objective."""

    def score(G, H):
        return G * G / (H + reg)

    G_tot, H_tot = g[rows].sum(), h[rows].sum()
    base = score(G_tot, H_tot)
    best = None
    for j in range(X.shape[1]):
        vals = X[rows, j]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sg = g[rows][order]
        sh = h[rows][order]
        GL = np.cumsum(sg)
        HL = np.cumsum(sh)
        for i in range(len(rows) - 1):
            if sv[i] == sv[i + 1]:
                continue
            gain = score(GL[i], HL[i]) + score(G_tot - GL[i], H_tot - HL[i]) - base
            thr = 0.5 * (sv[i] + sv[i + 1])
            if best is None or gain > best[0] + 1e-12:
                best = (gain, j, thr)
    if best is None or best[0] <= 1e-12:
        return None
    return best


def _fit_tree(X, g, h, rows, max_depth, reg, leaf_value):
    if max_depth == 0 or len(rows) < 2:
        return Leaf(scores=leaf_value(rows))
    found = _best_split(X, g, h, rows, reg)
    if found is None:
        return Leaf(scores=leaf_value(rows))
    _, j, thr = found
    mask = X[rows, j] <= thr
    left = _fit_tree(X, g, h, rows[mask], max_depth - 1, reg, leaf_value)
    right = _fit_tree(X, g, h, rows[~mask], max_depth - 1, reg, leaf_value)
    return Internal(feature=j, threshold=float(thr), left=left, right=right)


def train_boosted(fit: Dataset, n_rounds: int, max_depth: int,
                  learning_rate: float = 0.3, seed: int = 0,
                  reg: float = 1.0) -> Ensemble:
    """Train a gradient-boosted ensemble with Newton-step leaf values.

    Binary problems use the logistic loss and one tree per round with
    symmetric leaf vectors (-v, +v); multi-class problems use softmax
    cross-entropy and fit one tree per class per round, so the ensemble
    holds ``n_rounds * n_classes`` trees. Splits are exact greedy over all
    midpoints. The procedure is deterministic; ``seed`` is accepted for
    interface stability (no subsampling is performed).
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    if fit.labels is None:
        raise DegenerateLabels("training requires labels")
    y = fit.labels
    C = fit.n_classes
    if len(np.unique(y)) < 2:
        raise DegenerateLabels("training requires at least two classes")
    X = fit.rows
    n = X.shape[0]
    all_rows = np.arange(n)

    trees: list[TreeNode] = []
    if C == 2:
        F = np.zeros(n)
        yb = (y == 1).astype(float)
        for _ in range(n_rounds):
            p = _sigmoid(F)
            g = p - yb
            h = np.maximum(p * (1 - p), 1e-12)

            def leaf_value(rows, g=g, h=h):
                v = -learning_rate * g[rows].sum() / (h[rows].sum() + reg)
                return (-v, v)

            tree = _fit_tree(X, g, h, all_rows, max_depth, reg, leaf_value)
            trees.append(tree)
            leaves = tree_leaves(tree)
            for i in range(n):
                F[i] += leaves[leaf_of(tree, X[i])].scores[1]
    else:
        F = np.zeros((n, C))
        Y = np.zeros((n, C))
        Y[all_rows, y] = 1.0
        for _ in range(n_rounds):
            P = _softmax(F)
            for c in range(C):
                g = P[:, c] - Y[:, c]
                h = np.maximum(P[:, c] * (1 - P[:, c]), 1e-12)

                def leaf_value(rows, g=g, h=h, c=c):
                    v = -learning_rate * ((C - 1) / C) * g[rows].sum() / (h[rows].sum() + reg)
                    scores = [0.0] * C
                    scores[c] = v
                    return tuple(scores)

                tree = _fit_tree(X, g, h, all_rows, max_depth, reg, leaf_value)
                trees.append(tree)
                leaves = tree_leaves(tree)
                for i in range(n):
                    F[i, c] += leaves[leaf_of(tree, X[i])].scores[c]

    return Ensemble(trees=trees, weights0=np.ones(len(trees)),
                    n_classes=C, n_features=X.shape[1])


# --- JSON round trip -----------------------------------------------------


def _node_to_json(node: TreeNode):
    if isinstance(node, Leaf):
        return {"leaf": list(node.scores)}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_json(node.left),
        "right": _node_to_json(node.right),
    }


def _node_from_json(obj, path: str) -> TreeNode:
    if not isinstance(obj, dict):
        raise SchemaError("node must be an object", path)
    if "leaf" in obj:
        scores = obj["leaf"]
        if not isinstance(scores, list) or not all(
            isinstance(v, (int, float)) for v in scores
        ):
            raise SchemaError("leaf must be a list of numbers", path + ".leaf")
        return Leaf(scores=tuple(float(v) for v in scores))
    for key in ("feature", "threshold", "left", "right"):
        if key not in obj:
            raise SchemaError(f"missing key {key!r}", path)
    if not isinstance(obj["feature"], int):
        raise SchemaError("feature must be an integer", path + ".feature")
    if not isinstance(obj["threshold"], (int, float)):
        raise SchemaError("threshold must be a number", path + ".threshold")
    return Internal(
        feature=obj["feature"],
        threshold=float(obj["threshold"]),
        left=_node_from_json(obj["left"], path + ".left"),
        right=_node_from_json(obj["right"], path + ".right"),
    )


def save_ensemble(e: Ensemble, path) -> None:
    payload = {
        "n_features": e.n_features,
        "n_classes": e.n_classes,
        "weights": [float(w) for w in e.weights0],
        "trees": [_node_to_json(t) for t in e.trees],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def load_ensemble(path) -> Ensemble:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    for key in ("n_features", "n_classes", "trees"):
        if key not in obj:
            raise SchemaError(f"missing key {key!r}", "$")
    trees = obj["trees"]
    if not isinstance(trees, list) or not trees:
        raise SchemaError("trees must be a non-empty list", "$.trees")
    nodes = [_node_from_json(t, f"$.trees[{i}]") for i, t in enumerate(trees)]
    weights = obj.get("weights")
    if weights is None:
        weights = [1.0] * len(nodes)
    if len(weights) != len(nodes):
        raise SchemaError("weights must match tree count", "$.weights")
    return Ensemble(
        trees=nodes,
        weights0=np.asarray(weights, dtype=float),
        n_classes=int(obj["n_classes"]),
        n_features=int(obj["n_features"]),
    )


# --- text-dump import adapter ---------------------------------------------


def parse_text_dump(text: str, n_classes: int = 2, n_features: int | None = None) -> Ensemble:
    """Parse the common boosted-tree text dump into an Ensemble.

    Expected shape (one node per line, ids unique within a booster)::

        booster[0]:
        0:[f2<1.5] yes=1,no=2
            1:leaf=0.3
            2:leaf=-0.2

    Scalar leaf values become symmetric (-v, +v) binary score vectors; for
    ``n_classes > 2`` booster k feeds class ``k % n_classes`` (one-vs-rest
    layout) and the scalar lands in that class slot. Split comparisons are
    re-interpreted under this package's "<= goes left" convention.
    """
    boosters: list[dict[int, tuple]] = []
    current: dict[int, tuple] | None = None
    max_feature = -1
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("booster["):
            current = {}
            boosters.append(current)
            continue
        if current is None:
            current = {}
            boosters.append(current)
        node_id_s, rest = line.split(":", 1)
        node_id = int(node_id_s)
        if rest.startswith("leaf="):
            value = float(rest[len("leaf="):].split(",")[0])
            current[node_id] = ("leaf", value)
        else:
            if not rest.startswith("[f"):
                raise SchemaError(f"cannot parse node line {line!r}", "$")
            cond, links = rest[1:].split("]", 1)
            feat_s, thr_s = cond[1:].split("<", 1)
            feature = int(feat_s)
            max_feature = max(max_feature, feature)
            threshold = float(thr_s)
            fields = dict(kv.split("=") for kv in links.strip().split(",") if "=" in kv)
            current[node_id] = ("split", feature, threshold,
                                int(fields["yes"]), int(fields["no"]))

    if not boosters or all(not b for b in boosters):
        raise SchemaError("no boosters found in dump", "$")

    def build(nodes: dict[int, tuple], node_id: int, cls: int) -> TreeNode:
        entry = nodes[node_id]
        if entry[0] == "leaf":
            scores = [0.0] * n_classes
            if n_classes == 2:
                scores = [-entry[1], entry[1]]
            else:
                scores[cls] = entry[1]
            return Leaf(scores=tuple(scores))
        _, feature, threshold, yes, no = entry
        return Internal(feature=feature, threshold=threshold,
                        left=build(nodes, yes, cls), right=build(nodes, no, cls))

    trees = [build(b, 0, k % n_classes) for k, b in enumerate(boosters) if b]
    p = n_features if n_features is not None else max_feature + 1
    if p < 1:
        p = 1
    return Ensemble(trees=trees, weights0=np.ones(len(trees)),
                    n_classes=n_classes, n_features=p)
