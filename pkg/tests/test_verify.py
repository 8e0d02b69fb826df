import itertools
import math

import numpy as np
import pytest

from conftest import desk_instance
from equiprune.ensemble import Ensemble, Internal, Leaf, ThresholdIndex
from equiprune.errors import TooManyCells
from equiprune.plausibility import BinGrid, ChowLiuModel
from equiprune.synth import random_chow_liu_model
from equiprune.verify import (
    check_equivalence_exhaustive,
    check_state_bound,
    enumerate_low_score_states,
    iter_cells,
)


def uniform_model(p, B):
    boundaries = tuple(tuple(float(b) + 0.5 for b in range(B - 1))
                       for _ in range(p))
    grid = BinGrid(boundaries=boundaries, included=tuple([True] * p))
    parent = {j: j - 1 for j in range(1, p)}
    return ChowLiuModel(
        grid=grid, root=0, order=tuple(range(p)), parent=parent,
        root_table=np.full(B, 1.0 / B),
        edge_tables={j: np.full((B, B), 1.0 / B) for j in range(1, p)},
        beta=0.0)


class TestCellIterator:
    def test_visits_every_cell_once(self):
        theta = ThresholdIndex(per_feature=((0.5, 1.0), (2.0,)))
        cells = list(iter_cells(theta))
        assert len(cells) == 3 * 2 == theta.n_cells()
        assert len({idx for idx, _ in cells}) == 6

    def test_representative_rule(self):
        theta = ThresholdIndex(per_feature=((0.5, 1.0), ()))
        reps = {idx: x for idx, x in iter_cells(theta)}
        assert reps[(0, 0)][0] == 0.5
        assert reps[(1, 0)][0] == 1.0
        assert reps[(2, 0)][0] == 2.0  # last threshold + 1
        assert reps[(0, 0)][1] == 0.0  # no thresholds on feature 1

    def test_cap_enforced(self):
        theta = ThresholdIndex(per_feature=(tuple(range(100)),) * 4)
        with pytest.raises(TooManyCells):
            list(iter_cells(theta, cap=1000))


class TestEquivalenceCheck:
    def test_identical_weights_no_disagreements(self):
        e, _, _ = desk_instance(seed=50)
        assert check_equivalence_exhaustive(e, e.weights0, e.weights0) == []

    def test_hand_built_flip(self):
        a = Internal(feature=0, threshold=0.5, left=Leaf(scores=(1.0, 0.0)),
                     right=Leaf(scores=(0.3, 0.7)))
        b = Internal(feature=0, threshold=1.0, left=Leaf(scores=(0.5, 0.0)),
                     right=Leaf(scores=(0.0, 1.0)))
        e = Ensemble(trees=[a, b], weights0=np.ones(2), n_classes=2,
                     n_features=1)
        w = np.array([2.0, 0.0])
        out = check_equivalence_exhaustive(e, e.weights0, w)
        assert len(out) == 1
        assert out[0].x == (1.0,)
        assert (out[0].original_class, out[0].pruned_class) == (0, 1)


class TestStateEnumeration:
    def test_uniform_all_states_at_log_total(self):
        model = uniform_model(3, 2)
        out = enumerate_low_score_states(model, tau=3 * math.log(2))
        assert len(out) == 8

    def test_uniform_none_just_below(self):
        model = uniform_model(3, 2)
        out = enumerate_low_score_states(model, tau=3 * math.log(2) - 1e-9)
        assert len(out) == 0

    def test_skewed_model_matches_direct_filter(self):
        grid = BinGrid(boundaries=((0.5,), (0.5,)), included=(True, True))
        model = ChowLiuModel(
            grid=grid, root=0, order=(0, 1), parent={1: 0},
            root_table=np.array([0.75, 0.25]),
            edge_tables={1: np.array([[0.9, 0.1], [0.2, 0.8]])},
            beta=0.0)
        tau = -math.log(0.15)
        out = enumerate_low_score_states(model, tau)
        direct = []
        for s0, s1 in itertools.product(range(2), range(2)):
            score = model.state_score({0: s0, 1: s1})
            if score <= tau + 1e-12:
                direct.append(((s0, s1), score))
        assert sorted(out.states) == sorted(s for s, _ in direct)
        assert len(out.scores) == len(direct)

    def test_random_models_match_direct_filter(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = int(rng.integers(1, 4))
            B = int(rng.integers(2, 4))
            model = random_chow_liu_model(p, B, concentration=0.7, rng=rng)
            tau = float(rng.uniform(0, p * math.log(B) + 1))
            out = enumerate_low_score_states(model, tau)
            count = 0
            for combo in itertools.product(*[range(B)] * p):
                state = dict(zip(model.order, combo))
                if model.state_score(state) <= tau + 1e-12:
                    count += 1
            assert len(out) == count


class TestStateBound:
    def test_uniform_equality_case(self):
        model = uniform_model(3, 2)
        res = check_state_bound(model, tau=3 * math.log(2))
        assert res.count == 8
        assert res.bound == pytest.approx(8.0)
        assert res.holds

    def test_tau_zero(self):
        model = uniform_model(2, 2)
        res = check_state_bound(model, tau=0.0)
        assert res.count <= 1
        assert res.holds

    def test_random_models_never_violate(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            p = int(rng.integers(1, 6))
            B = int(rng.integers(2, 5))
            model = random_chow_liu_model(p, B, concentration=0.5, rng=rng)
            tau = float(rng.uniform(0, p * math.log(B)))
            assert check_state_bound(model, tau).holds
