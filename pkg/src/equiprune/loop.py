"""The alternating weight-solve / counterexample-search loop.

Constraints warm-start from the fit set (deduplicated by cell). Each
iteration solves for the sparsest weights satisfying the current constraint
set, then searches for cells where those weights disagree with the original
ones, restricted to the calibrated in-distribution region when a miscoverage
level is configured. The loop stops when a fully certified search finds
nothing; solver limits or duplicate counterexamples end it uncertified.

Full-space mode is the same loop with the region constraint skipped
(tau = +infinity), yielding equivalence over the whole input space when
certified.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .conformal import CalibrationResult, calibrate
from .data import Dataset
from .ensemble import Ensemble, threshold_index
from .errors import EquipruneError, SolverUncertified
from .oracle import EPS_STRICT, find_counterexamples
from .plausibility import CHOW_LIU, ScoreModel, fit_score_model
from .pruner import L0, MarginSlip, PrunerProblem, solve_pruner

FULL_SPACE = "full_space"
IN_DISTRIBUTION = "in_distribution"
UNCERTIFIED = "uncertified"

SCORE_NONE = "none"


@dataclass(frozen=True)
class PruneConfig:
    """Everything a pruning run depends on, serializable for reproduction."""

    alpha: float | None = None
    full_space: bool = False
    score_kind: str = CHOW_LIU
    objective: str = L0
    eps_margin: float | None = None
    eps_strict: float = EPS_STRICT
    time_limit_s: float = 120.0
    node_limit: int | None = None
    max_iterations: int = 10_000
    bins: int = 4
    beta: float = 1.0
    if_trees: int = 30
    if_max_samples: int = 256
    seed: int = 0
    fast_counterexamples: bool = False

    def __post_init__(self):
        if self.full_space == (self.alpha is not None):
            raise ValueError("set exactly one of alpha or full_space")
        if self.alpha is not None and not (0 < self.alpha < 1):
            raise ValueError("alpha must be in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.full_space and self.score_kind == SCORE_NONE:
            raise ValueError("in-distribution mode needs a score model")

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        return out


@dataclass
class IterationRecord:
    iteration: int
    n_constraints: int
    pruner_objective: float
    oracle_statuses: dict
    n_found: int
    pruner_time_s: float
    oracle_time_s: float
    note: str = ""

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "n_constraints": self.n_constraints,
            "pruner_objective": self.pruner_objective,
            "oracle_statuses": {f"{c}->{c2}": s
                                for (c, c2), s in self.oracle_statuses.items()},
            "n_found": self.n_found,
            "pruner_time_s": self.pruner_time_s,
            "oracle_time_s": self.oracle_time_s,
            "note": self.note,
        }


@dataclass
class PruneResult:
    weights: np.ndarray
    iterations: int
    records: list[IterationRecord]
    tau: float
    certified: bool
    guarantee_scope: str
    calibration: CalibrationResult | None
    config: PruneConfig
    total_time_s: float

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.weights))

    def to_json(self) -> dict:
        return {
            "weights": [float(w) for w in self.weights],
            "iterations": self.iterations,
            "tau": None if math.isinf(self.tau) else self.tau,
            "certified": self.certified,
            "guarantee_scope": self.guarantee_scope,
            "support_size": self.support_size,
            "calibration": None if self.calibration is None else self.calibration.to_json(),
            "records": [r.to_json() for r in self.records],
            "total_time_s": self.total_time_s,
            "config": self.config.to_json(),
        }


def save_result(result: PruneResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_json(), fh, indent=1)


def run(e: Ensemble, fit: Dataset, cal: Dataset | None, cfg: PruneConfig,
        score: ScoreModel | None = None,
        dump_dir: str | None = None) -> PruneResult:
    """Prune with the configured guarantee mode.

    In-distribution mode fits the score model on the fit set (unless one is
    passed in), calibrates tau at the configured miscoverage on the
    calibration set, and restricts the counterexample search accordingly.
    """
    start = time.monotonic()
    calibration = None
    tau = math.inf
    if not cfg.full_space:
        if cal is None or cal.n_rows == 0:
            raise EquipruneError("in-distribution mode needs a calibration set")
        if score is None:
            score = fit_score_model(cfg.score_kind, e, fit, bins=cfg.bins,
                                    beta=cfg.beta, if_trees=cfg.if_trees,
                                    if_max_samples=cfg.if_max_samples,
                                    seed=cfg.seed)
        cal_scores = [score.score(e, x) for x in cal.rows]
        calibration = calibrate(cal_scores, cfg.alpha)
        tau = calibration.tau
    active_score = score if (score is not None and math.isfinite(tau)) else None

    extra = active_score.extra_thresholds() if active_score is not None else None
    theta = threshold_index(e, extra=extra)

    # Warm start: one representative constraint point per fit-set cell.
    points: list[np.ndarray] = []
    seen: set[tuple[int, ...]] = set()
    for x in fit.rows:
        cell = e.leaf_assignment(x)
        if cell not in seen:
            seen.add(cell)
            points.append(np.asarray(x, dtype=float))

    eps = cfg.eps_margin
    records: list[IterationRecord] = []
    certified = False
    tightened = False
    w = e.weights0.copy()
    iteration = 0
    note = ""

    while iteration < cfg.max_iterations:
        iteration += 1
        prob = PrunerProblem(ensemble=e, points=points,
                             objective=cfg.objective, eps=eps)
        t0 = time.monotonic()
        try:
            w, pruner_sol = solve_pruner(prob, time_limit_s=cfg.time_limit_s,
                                         node_limit=cfg.node_limit)
        except (MarginSlip, SolverUncertified) as err:
            note = f"weight solve did not certify: {err}"
            records.append(IterationRecord(
                iteration=iteration, n_constraints=prob.n_constraints,
                pruner_objective=math.nan, oracle_statuses={}, n_found=0,
                pruner_time_s=time.monotonic() - t0, oracle_time_s=0.0,
                note=note))
            break
        pruner_time = time.monotonic() - t0

        t1 = time.monotonic()
        oracle = find_counterexamples(
            e, e.weights0, w, score=active_score, tau=tau,
            eps_strict=cfg.eps_strict, time_limit_s=cfg.time_limit_s,
            node_limit=cfg.node_limit, theta=theta,
            first_feasible=cfg.fast_counterexamples,
            dump_dir=None if dump_dir is None else os.path.join(
                dump_dir, f"iter{iteration:04d}"))
        oracle_time = time.monotonic() - t1

        record = IterationRecord(
            iteration=iteration, n_constraints=prob.n_constraints,
            pruner_objective=float(pruner_sol.objective),
            oracle_statuses=oracle.pair_statuses,
            n_found=len(oracle.found), pruner_time_s=pruner_time,
            oracle_time_s=oracle_time)
        records.append(record)

        if not oracle.found:
            certified = oracle.certified
            if not certified:
                note = "counterexample search uncertified"
            break

        new_points = [np.asarray(cx.x, dtype=float) for cx in oracle.found
                      if cx.cell.key not in seen]
        if not new_points:
            # A duplicate means the weight solve and the search disagree
            # numerically about a cell already constrained.
            if not tightened:
                tightened = True
                eps = (eps if eps is not None else _auto_eps(e)) * 10.0
                record.note = "duplicate counterexample: margin tightened 10x"
                iteration -= 1  # retry does not consume an iteration
                continue
            note = "duplicate counterexample after tightening"
            record.note = note
            break
        for cx in oracle.found:
            if cx.cell.key not in seen:
                seen.add(cx.cell.key)
        points.extend(new_points)
    else:
        note = "iteration limit reached"

    scope = UNCERTIFIED
    if certified:
        scope = FULL_SPACE if math.isinf(tau) else IN_DISTRIBUTION
    return PruneResult(weights=w, iterations=len(records), records=records,
                       tau=tau, certified=certified, guarantee_scope=scope,
                       calibration=calibration, config=cfg,
                       total_time_s=time.monotonic() - start)


def _auto_eps(e: Ensemble) -> float:
    from .pruner import default_margin

    return default_margin(e)


def run_full_space(e: Ensemble, fit: Dataset, cfg: PruneConfig | None = None,
                   **overrides) -> PruneResult:
    """Full-space faithful pruning: the same loop with tau = +infinity."""
    if cfg is None:
        cfg = PruneConfig(full_space=True, **overrides)
    if not cfg.full_space:
        raise ValueError("run_full_space requires a full-space config")
    return run(e, fit, None, cfg)
