"""Command-line orchestration of the pruning pipeline.

Every run is reproducible from its inputs plus the resolved configuration,
which each JSON output embeds. Exit codes: 0 on success, 1 on a domain
error, 2 on a usage error. The EQUIPRUNE_LOG environment variable sets the
log level.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import evaluate as ev
from .conformal import calibrate
from .data import SplitSpec, load_csv, save_csv, split, split_indices, write_split_manifest
from .ensemble import (
    load_ensemble,
    parse_text_dump,
    save_ensemble,
    train_boosted,
)
from .errors import EquipruneError
from .loop import PruneConfig, run, run_full_space, save_result
from .plausibility import (
    SCORE_KINDS,
    fit_score_model,
    load_score_model,
    save_score_model,
)
from .pruner import L0, L1
from .synth import MoonsSpec, TreeDistSpec, gen_moons, gen_tree_dist
from .verify import check_equivalence_exhaustive, check_state_bound

log = logging.getLogger("equiprune")


def _write_json(path, payload, config=None):
    if config is not None:
        payload = dict(payload)
        payload["config"] = config
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def _resolved(args, keys):
    return {k: getattr(args, k) for k in keys}


def _load_data(path, label):
    return load_csv(path, label_column=label)


def _parse_floats(text):
    return tuple(float(v) for v in text.split(","))


def _parse_ints(text):
    return tuple(int(v) for v in text.split(","))


# --- subcommand implementations -----------------------------------------


def cmd_synth(args):
    if args.kind == "moons":
        ds = gen_moons(MoonsSpec(n=args.n, noise=args.noise, seed=args.seed))
    else:
        ds, _ = gen_tree_dist(TreeDistSpec(n=args.n, p=args.p,
                                           states=args.states,
                                           concentration=args.concentration,
                                           seed=args.seed))
    save_csv(ds, args.out)
    log.info("wrote %s rows to %s", ds.n_rows, args.out)
    return 0


def cmd_split(args):
    ds = _load_data(args.data, args.label)
    spec = SplitSpec(ratios=_parse_floats(args.ratios), seed=args.seed)
    indices = split_indices(ds.n_rows, spec)
    for i, idx in enumerate(indices):
        save_csv(ds.subset(idx), f"{args.out_prefix}{i}.csv")
    if args.manifest:
        write_split_manifest(args.manifest, spec, indices)
    log.info("split %s rows into %s", ds.n_rows,
             [len(ix) for ix in indices])
    return 0


def cmd_train(args):
    ds = _load_data(args.data, args.label)
    e = train_boosted(ds, n_rounds=args.rounds, max_depth=args.depth,
                      learning_rate=args.learning_rate, seed=args.seed)
    save_ensemble(e, args.out)
    log.info("trained %d trees on %d rows", e.n_trees, ds.n_rows)
    return 0


def cmd_fit_score(args):
    e = load_ensemble(args.model)
    ds = _load_data(args.data, args.label)
    model = fit_score_model(args.score, e, ds, bins=args.bins, beta=args.beta,
                            if_trees=args.if_trees,
                            if_max_samples=args.if_max_samples,
                            seed=args.seed)
    save_score_model(model, args.out)
    return 0


def cmd_calibrate(args):
    e = load_ensemble(args.model)
    score = load_score_model(args.score_model)
    ds = _load_data(args.data, args.label)
    scores = [score.score(e, x) for x in ds.rows]
    result = calibrate(scores, args.alpha)
    _write_json(args.out, result.to_json(),
                config=_resolved(args, ["model", "score_model", "data",
                                        "alpha"]))
    return 0


def _prune_config(args):
    return PruneConfig(
        alpha=None if args.full_space else args.alpha,
        full_space=args.full_space,
        score_kind=args.score,
        objective=args.objective,
        eps_margin=args.eps_margin,
        eps_strict=args.eps_strict,
        time_limit_s=args.time_limit,
        max_iterations=args.max_iterations,
        bins=args.bins,
        beta=args.beta,
        if_trees=args.if_trees,
        if_max_samples=args.if_max_samples,
        seed=args.seed,
        fast_counterexamples=args.fast,
    )


def cmd_prune(args):
    if not args.full_space and args.alpha is None:
        raise EquipruneError("either --alpha or --full-space is required")
    e = load_ensemble(args.model)
    fit = _load_data(args.fit, args.label)
    cal = _load_data(args.cal, args.label) if args.cal else None
    cfg = _prune_config(args)
    result = run(e, fit, cal, cfg, dump_dir=args.oracle_dump)
    save_result(result, args.out)
    log.info("kept %d/%d trees (%s, certified=%s)", result.support_size,
             e.n_trees, result.guarantee_scope, result.certified)
    return 0


def cmd_evaluate(args):
    e = load_ensemble(args.model)
    with open(args.result, encoding="utf-8") as fh:
        result = json.load(fh)
    w = np.asarray(result["weights"], dtype=float)
    test = _load_data(args.test, args.label)
    region = None
    tau = result.get("tau")
    if args.score_model and tau is not None:
        region = (load_score_model(args.score_model), float(tau))
    report = ev.evaluate(e, e.weights0, w, test, region=region)
    _write_json(args.out, report.to_json(),
                config=_resolved(args, ["model", "result", "test",
                                        "score_model"]))
    return 0


def cmd_select_alpha(args):
    e = load_ensemble(args.model)
    sel = _load_data(args.sel, args.label)
    mismatches = {}
    for path in args.results:
        with open(path, encoding="utf-8") as fh:
            result = json.load(fh)
        alpha = result["config"]["alpha"]
        if alpha is None:
            raise EquipruneError(f"{path}: not an in-distribution result")
        w = np.asarray(result["weights"], dtype=float)
        mismatches[float(alpha)] = ev.count_mismatches(e, e.weights0, w, sel)
    selection = ev.select_alpha(mismatches, n=sel.n_rows,
                                rho_star=args.target, kind=args.selector,
                                delta=args.delta)
    _write_json(args.out, selection.to_json(),
                config=_resolved(args, ["model", "sel", "results", "target",
                                        "selector", "delta"]))
    print("fallback" if selection.fallback else f"alpha={selection.chosen}")
    return 0


def cmd_verify(args):
    e = load_ensemble(args.model)
    with open(args.result, encoding="utf-8") as fh:
        result = json.load(fh)
    w = np.asarray(result["weights"], dtype=float)
    region = None
    tau = args.tau if args.tau is not None else result.get("tau")
    score = None
    if args.score_model and tau is not None:
        score = load_score_model(args.score_model)
        region = (score, float(tau))
    disagreements = check_equivalence_exhaustive(e, e.weights0, w,
                                                 region=region, cap=args.cap)
    payload = {
        "n_disagreements": len(disagreements),
        "disagreements": [
            {"x": list(d.x), "original_class": d.original_class,
             "pruned_class": d.pruned_class, "score": d.score}
            for d in disagreements[:args.max_report]
        ],
        "equivalent": not disagreements,
    }
    if score is not None and score.kind == "chowliu" and tau is not None:
        bound = check_state_bound(score.chow_liu, float(tau))
        payload["state_bound"] = {"count": bound.count, "bound": bound.bound,
                                  "holds": bound.holds}
    _write_json(args.out, payload,
                config=_resolved(args, ["model", "result", "score_model",
                                        "tau", "cap"]))
    print("equivalent" if payload["equivalent"]
          else f"{len(disagreements)} disagreeing cells")
    return 0


def _sweep_job(ds, seed, alphas, args):
    spec = SplitSpec(ratios=_parse_floats(args.ratios), seed=seed)
    fit, cal, test = split(ds, spec)
    e = train_boosted(fit, n_rounds=args.rounds, max_depth=args.depth,
                      learning_rate=args.learning_rate, seed=seed)
    rows = []
    fs = run_full_space(e, fit, time_limit_s=args.time_limit,
                        objective=args.objective, seed=seed,
                        fast_counterexamples=args.fast)
    rep = ev.evaluate(e, e.weights0, fs.weights, test)
    rows.append(ev.report_row(args.data, seed, "full_space", None, rep,
                              fs.certified, fs.guarantee_scope,
                              fs.total_time_s, fs.iterations))
    score = fit_score_model(args.score, e, fit, bins=args.bins,
                            beta=args.beta, if_trees=args.if_trees,
                            if_max_samples=args.if_max_samples, seed=seed)
    for alpha in alphas:
        cfg = PruneConfig(alpha=alpha, score_kind=args.score,
                          objective=args.objective,
                          time_limit_s=args.time_limit, bins=args.bins,
                          beta=args.beta, if_trees=args.if_trees,
                          if_max_samples=args.if_max_samples, seed=seed,
                          fast_counterexamples=args.fast)
        res = run(e, fit, cal, cfg, score=score)
        region = (score, res.tau) if math.isfinite(res.tau) else None
        rep = ev.evaluate(e, e.weights0, res.weights, test, region=region)
        rows.append(ev.report_row(args.data, seed, "in_distribution", alpha,
                                  rep, res.certified, res.guarantee_scope,
                                  res.total_time_s, res.iterations))
    return rows


def cmd_sweep(args):
    ds = _load_data(args.data, args.label)
    seeds = _parse_ints(args.seeds)
    alphas = _parse_floats(args.alphas)
    jobs = [(seed, alphas) for seed in seeds]
    all_rows = []
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            futures = [pool.submit(_sweep_job, ds, seed, a, args)
                       for seed, a in jobs]
            for fut in futures:
                all_rows.extend(fut.result())
    else:
        for seed, a in jobs:
            all_rows.extend(_sweep_job(ds, seed, a, args))
    new_file = not os.path.exists(args.out)
    with open(args.out, "a", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ev.REPORT_COLUMNS)
        if new_file:
            writer.writeheader()
        for row in all_rows:
            writer.writerow(row)
    log.info("appended %d rows to %s", len(all_rows), args.out)
    return 0


def cmd_convert(args):
    with open(args.dump, encoding="utf-8") as fh:
        text = fh.read()
    e = parse_text_dump(text, n_classes=args.classes,
                        n_features=args.features)
    save_ensemble(e, args.out)
    return 0


# --- argument wiring --------------------------------------------------------


def _add_data_args(p, label_required=False):
    p.add_argument("--label", default=None, required=label_required,
                   help="label column name")


def _add_score_args(p):
    p.add_argument("--score", default="chowliu",
                   choices=list(SCORE_KINDS) + ["none"])
    p.add_argument("--bins", type=int, default=4)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--if-trees", type=int, default=30)
    p.add_argument("--if-max-samples", type=int, default=256)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="equiprune",
        description="Prune tree ensembles with certified prediction "
                    "equivalence on a calibrated in-distribution region.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--kind", choices=["moons", "treedist"], default="moons")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--states", type=int, default=2)
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="seeded dataset split")
    p.add_argument("--data", required=True)
    _add_data_args(p)
    p.add_argument("--ratios", default="0.64,0.16,0.20")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a boosted ensemble")
    p.add_argument("--data", required=True)
    _add_data_args(p, label_required=True)
    p.add_argument("--rounds", type=int, default=30)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--learning-rate", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit-score", help="fit a plausibility score model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_data_args(p)
    _add_score_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_score)

    p = sub.add_parser("calibrate", help="split-conformal threshold")
    p.add_argument("--model", required=True)
    p.add_argument("--score-model", required=True)
    p.add_argument("--data", required=True)
    _add_data_args(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("prune", help="run the pruning loop")
    p.add_argument("--model", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--cal", default=None)
    _add_data_args(p)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--full-space", action="store_true")
    _add_score_args(p)
    p.add_argument("--objective", choices=[L0, L1], default=L0)
    p.add_argument("--eps-margin", type=float, default=None)
    p.add_argument("--eps-strict", type=float, default=1e-6)
    p.add_argument("--time-limit", type=float, default=120.0)
    p.add_argument("--max-iterations", type=int, default=10_000)
    p.add_argument("--fast", action="store_true",
                   help="accept the first counterexample found per class pair")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle-dump", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("evaluate", help="test-set metrics for a result")
    p.add_argument("--model", required=True)
    p.add_argument("--result", required=True)
    p.add_argument("--test", required=True)
    _add_data_args(p)
    p.add_argument("--score-model", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select-alpha", help="post-hoc miscoverage selection")
    p.add_argument("--model", required=True)
    p.add_argument("--sel", required=True, help="selection split CSV")
    _add_data_args(p)
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--selector", choices=[ev.EMPIRICAL, ev.CONFIDENCE_BOUND],
                   default=ev.EMPIRICAL)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select_alpha)

    p = sub.add_parser("verify", help="exhaustive equivalence check")
    p.add_argument("--model", required=True)
    p.add_argument("--result", required=True)
    p.add_argument("--score-model", default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--cap", type=int, default=10_000_000)
    p.add_argument("--max-report", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="seeds x alphas experiment grid")
    p.add_argument("--data", required=True)
    _add_data_args(p, label_required=True)
    p.add_argument("--ratios", default="0.64,0.16,0.20")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--alphas", default="0.05,0.1,0.2,0.4,0.6,0.8")
    p.add_argument("--rounds", type=int, default=30)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--learning-rate", type=float, default=0.3)
    _add_score_args(p)
    p.add_argument("--objective", choices=[L0, L1], default=L0)
    p.add_argument("--time-limit", type=float, default=120.0)
    p.add_argument("--fast", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("convert", help="import a text tree dump")
    p.add_argument("--dump", required=True)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--features", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("EQUIPRUNE_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EquipruneError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
