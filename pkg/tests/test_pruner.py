import numpy as np
import pytest

from conftest import blob_dataset, desk_instance, subset_minimum_support
from equiprune.ensemble import Ensemble, Internal, Leaf, predict_class, train_boosted
from equiprune.pruner import (
    L0,
    L1,
    PrunerProblem,
    build_pruner_milp,
    solve_pruner,
)


def stump(threshold, left, right, feature=0):
    return Internal(feature=feature, threshold=threshold,
                    left=Leaf(scores=left), right=Leaf(scores=right))


def simple_ensemble():
    t1 = stump(0.5, (1.0, 0.0), (0.0, 1.0))
    t2 = stump(0.2, (0.6, 0.1), (0.1, 0.6))
    return Ensemble(trees=[t1, t2], weights0=np.ones(2), n_classes=2,
                    n_features=1)


def test_empty_constraints_l0_keeps_one_tree():
    e = simple_ensemble()
    prob = PrunerProblem(ensemble=e, points=[], objective=L0)
    w, sol = solve_pruner(prob)
    assert np.count_nonzero(w) == 1
    assert w.sum() == pytest.approx(2.0)  # total weight preserved


def test_identical_trees_collapse_to_one():
    t = stump(0.5, (1.0, 0.0), (0.0, 1.0))
    e = Ensemble(trees=[t, t], weights0=np.ones(2), n_classes=2, n_features=1)
    points = [np.array([0.0]), np.array([1.0])]
    prob = PrunerProblem(ensemble=e, points=points, objective=L0)
    w, _ = solve_pruner(prob)
    assert np.count_nonzero(w) == 1
    for x in points:
        assert predict_class(e, w, x) == predict_class(e, e.weights0, x)


def test_original_weights_feasible_at_small_eps():
    e = simple_ensemble()
    points = [np.array([v]) for v in (-1.0, 0.3, 0.9)]
    prob = PrunerProblem(ensemble=e, points=points, objective=L0, eps=1e-9)
    model, w_vars = build_pruner_milp(prob, eps=1e-9)
    # the original weights satisfy every constraint directly
    values = np.zeros(len(model.variables))
    for m, v in enumerate(w_vars):
        values[v] = e.weights0[m]
    for var in model.variables:
        if var.kind == "binary":
            values[model.variables.index(var)] = 1.0
    from equiprune.milp import check_feasible

    assert check_feasible(model, values)


def test_posthoc_equivalence_on_constraint_points():
    e, fit, _ = desk_instance(seed=1)
    points = [np.asarray(x) for x in fit.rows]
    prob = PrunerProblem(ensemble=e, points=points, objective=L0)
    w, _ = solve_pruner(prob)
    for x in points:
        assert predict_class(e, w, x) == predict_class(e, e.weights0, x)


def test_l0_matches_subset_enumeration():
    rng = np.random.default_rng(0)
    for trial in range(6):
        ds = blob_dataset(30, p=2, seed=100 + trial)
        e = train_boosted(ds, n_rounds=rng.integers(2, 5), max_depth=2)
        pts = [np.asarray(x) for x in ds.rows[:10]]
        from conftest import min_strict_margin

        prob0 = PrunerProblem(ensemble=e, points=pts, objective=L0)
        eps = min(1e-4, 0.4 * min_strict_margin(e, prob0._reps))
        prob = PrunerProblem(ensemble=e, points=pts, objective=L0, eps=eps)
        w, _ = solve_pruner(prob)
        expected = subset_minimum_support(e, prob._reps, eps)
        assert np.count_nonzero(w) == expected, f"trial {trial}"


def test_monotone_constraint_growth():
    e, fit, _ = desk_instance(seed=3)
    pts = [np.asarray(x) for x in fit.rows]
    small = PrunerProblem(ensemble=e, points=pts[:5], objective=L0)
    large = PrunerProblem(ensemble=e, points=pts, objective=L0)
    w_small, _ = solve_pruner(small)
    w_large, _ = solve_pruner(large)
    assert np.count_nonzero(w_small) <= np.count_nonzero(w_large)


def test_l1_objective_preserves_predictions():
    e, fit, _ = desk_instance(seed=4)
    pts = [np.asarray(x) for x in fit.rows]
    prob = PrunerProblem(ensemble=e, points=pts, objective=L1)
    w, sol = solve_pruner(prob)
    assert np.all(w >= 0)
    for x in pts:
        assert predict_class(e, w, x) == predict_class(e, e.weights0, x)


def test_dedup_by_cell():
    e = simple_ensemble()
    # many points in the same cell collapse to one constraint
    pts = [np.array([v]) for v in np.linspace(0.6, 0.9, 17)]
    prob = PrunerProblem(ensemble=e, points=pts, objective=L0)
    assert prob.n_constraints == 1
