import math

import numpy as np
import pytest

from equiprune.conformal import calibrate, order_index
from equiprune.errors import AlphaOutOfRange, EmptyCalibrationSet


def test_small_n_gives_infinite_threshold():
    # k = ceil(4 * 0.8) = 4 = n + 1
    res = calibrate([1.0, 2.0, 3.0], alpha=0.2)
    assert res.k == 4
    assert math.isinf(res.tau)
    assert res.covers(1e18)


def test_order_statistic_indexing():
    # k = ceil(5 * 0.8) = 4 -> 4th smallest
    res = calibrate([4.0, 2.0, 1.0, 3.0], alpha=0.2)
    assert res.k == 4
    assert res.tau == 4.0


def test_extreme_alpha_picks_minimum():
    # k = ceil(10 * 0.001) = 1 -> smallest score
    scores = list(range(9, 0, -1))
    res = calibrate(scores, alpha=0.999)
    assert res.k == 1
    assert res.tau == 1.0


def test_exact_integer_boundaries():
    # (n+1)(1-alpha) integral: alpha = 0.25, n = 7 -> k = 6 exactly
    assert order_index(7, 0.25) == 6
    assert order_index(3, 0.5) == 2
    assert order_index(99, 0.5) == 50


def test_errors():
    with pytest.raises(EmptyCalibrationSet):
        calibrate([], alpha=0.5)
    with pytest.raises(AlphaOutOfRange):
        calibrate([1.0], alpha=0.0)
    with pytest.raises(AlphaOutOfRange):
        calibrate([1.0], alpha=1.0)
    with pytest.raises(EmptyCalibrationSet):
        calibrate([np.nan], alpha=0.5)


def test_tau_monotone_in_alpha():
    rng = np.random.default_rng(0)
    scores = rng.normal(size=50)
    alphas = np.linspace(0.01, 0.99, 25)
    taus = [calibrate(scores, a).tau for a in alphas]
    for lo, hi in zip(taus[:-1], taus[1:]):
        assert lo >= hi  # tau non-increasing in alpha


def test_permutation_invariance():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=30)
    base = calibrate(scores, 0.3)
    for _ in range(5):
        res = calibrate(rng.permutation(scores), 0.3)
        assert res.tau == base.tau
        assert res.k == base.k


def test_marginal_coverage_monte_carlo():
    # mean empirical coverage within the split-conformal band
    rng = np.random.default_rng(7)
    n, alpha, reps = 100, 0.2, 200
    coverages = []
    for _ in range(reps):
        cal = rng.normal(size=n)
        test = rng.normal(size=200)
        tau = calibrate(cal, alpha).tau
        coverages.append((test <= tau).mean())
    mean_cov = float(np.mean(coverages))
    assert 1 - alpha - 0.02 <= mean_cov <= 1 - alpha + 1 / (n + 1) + 0.02


def test_audit_json():
    res = calibrate([3.0, 1.0, 2.0, 4.0], alpha=0.2)
    assert res.to_json() == {"alpha": 0.2, "n": 4, "k": 4, "tau": 4.0}
    inf_res = calibrate([1.0], alpha=0.1)
    assert inf_res.to_json()["tau"] is None
    assert inf_res.sorted_scores == (1.0,)
