"""Command-line driver: analyze -> profile -> train -> replay -> report.

Exit status: 0 success, 1 replay produced at least one Deny, 2 bad input or
structural error, 3 audition needed but no model supplied.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from .analyzer import EnforcementPlan, ReductionStats, build_plan, format_report, optimize_plan
from .dtree import (EvalBudget, Granularity, TrainParams, compile_tree, cross_validate, depth_sweep,
                    load_model, nearest_centroid_cv, train, verify)
from .dtree.flat import dumps_model
from .enforcement import PhaseConfig, dump_verdicts, replay
from .errors import AuditionUnavailable, O2CError
from .profiler import dumps_dataset, import_dataset, profile_trace
from .scenario import (Scenario, ScenarioKind, generate, generate_training_world, scenario_model, suite,
                       write_bundle)
from .trace_model import dump_json, dump_trace, load_json, read_cfg, read_ir, read_spec, read_trace

log = logging.getLogger("o2c")

EXIT_OK, EXIT_DENY, EXIT_INPUT, EXIT_AUDITION = 0, 1, 2, 3
BUDGET_DEPTH_CAP = 14


def _write(path: str, text: str) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _out(args, name: str) -> str:
    return os.path.join(args.out, name)


def cmd_analyze(args) -> int:
    ir = read_ir(args.ir)
    cfg = read_cfg(args.cfg)
    spec = read_spec(args.spec)
    plan = build_plan(ir, cfg, spec)
    if not args.no_optimize:
        plan = optimize_plan(plan, ir, spec)
    _write(_out(args, "plan.o2cplan.json"), dump_json(plan.to_dict()))
    _write(_out(args, "analyze.report.json"), dump_json(plan.stats.to_dict()))
    print(format_report(plan.stats))
    return EXIT_OK


def cmd_profile(args) -> int:
    trace = read_trace(args.trace)
    spec = read_spec(args.spec)
    ds = profile_trace(trace, spec, args.feature_words)
    _write(_out(args, "dataset.o2cdata.csv"), dumps_dataset(ds))
    print(f"rows: {len(ds)}  skipped: {ds.meta['skipped']}  classes: {len(ds.meta['histogram'])}")
    return EXIT_OK


def _granularity(name: str) -> Granularity:
    return Granularity.COMPARTMENT if name == "compartment" else Granularity.TYPE


def cmd_train(args) -> int:
    if args.max_depth > BUDGET_DEPTH_CAP:
        raise O2CError(f"--max-depth {args.max_depth} exceeds the evaluator cap of {BUDGET_DEPTH_CAP}")
    ds = import_dataset(args.data)
    params = TrainParams(max_depth=args.max_depth)
    budget = EvalBudget(max_depth=BUDGET_DEPTH_CAP)
    report = {"params": {"max_depth": args.max_depth, "folds": args.folds, "seed": args.seed,
                         "feature_words": ds.n_words, "rows": len(ds)}, "cv": {}}
    for gran in ("type", "compartment"):
        y = ds.labels(gran)
        res = cross_validate(ds.X, y, params, k=args.folds, seed=args.seed, budget=budget,
                             granularity=_granularity(gran))
        report["cv"][gran] = res.to_dict()
        print(f"{gran:<12} accuracy {res.accuracy}  macro-F1 {res.macro_f1}")
    if args.baseline:
        nc = nearest_centroid_cv(ds.X, ds.labels(args.granularity), k=args.folds, seed=args.seed)
        report["nearest_centroid"] = nc.to_dict()
        print(f"{'centroid':<12} accuracy {nc.accuracy}  ({args.granularity})")
    if args.sweep:
        sweep = depth_sweep(ds.X, ds.labels(args.granularity), k=args.folds, seed=args.seed)
        report["sweep"] = {str(d): r.to_dict() for d, r in sweep.items()}
        for d, r in sweep.items():
            print(f"depth {d:>2}     accuracy {r.accuracy}")
    y = ds.labels(args.granularity)
    flat = compile_tree(train(ds.X, y, params), ds.n_words, _granularity(args.granularity))
    verify(flat, budget)
    _write(_out(args, "model.o2cmodel.json"), dumps_model(flat))
    _write(_out(args, "train.report.json"), dump_json(report))
    return EXIT_OK


def cmd_replay(args) -> int:
    trace = read_trace(args.trace)
    plan = EnforcementPlan.from_dict(load_json(args.plan))
    spec = read_spec(args.spec)
    cfg = read_cfg(args.cfg)
    model = load_model(args.model) if args.model else None
    config = PhaseConfig(start_phase=args.phase, t0=args.t0, transition_tick=args.transition_tick)
    try:
        result = replay(trace, plan, cfg, spec, model, config)
    except AuditionUnavailable as exc:
        print(f"error: audition unavailable: {exc}", file=sys.stderr)
        return EXIT_AUDITION
    _write(_out(args, "verdicts.o2cverdicts.jsonl"), dump_verdicts(result.verdicts))
    summary = result.summary()
    _write(_out(args, "replay.report.json"), dump_json(summary))
    print(f"checked {summary['events_checked']}  deny {summary['deny']}  audit {summary['audit']}  "
          f"phase {summary['final_phase']} (transition at {summary['transition_tick']})  "
          f"auditions {summary['auditions']}")
    for key, n in summary["by_reason"].items():
        print(f"  {key}: {n}")
    return EXIT_DENY if result.denies else EXIT_OK


def cmd_scenario(args) -> int:
    if args.name == "world":
        trace, spec = generate_training_world(args.seed, args.types, args.rows, args.separability)
        _write(_out(args, "world.o2ctrace.jsonl"), dump_trace(trace))
        _write(_out(args, "world.o2cspec.json"), dump_json(spec.to_dict()))
        print(f"world: {args.types} types x {args.rows} rows, {len(trace)} events")
        return EXIT_OK
    if args.name == "suite":
        scenarios = suite(args.seed, args.benign_seeds)
    else:
        try:
            kind = next(k for k in ScenarioKind if k.value.lower() == args.name.lower())
        except StopIteration:
            names = ", ".join(k.value.lower() for k in ScenarioKind)
            raise O2CError(f"unknown scenario {args.name!r}; choose from {names} or suite") from None
        scenarios = [Scenario.named(kind, args.seed)]
    model = scenario_model(args.seed)
    for sc in scenarios:
        bundle = generate(sc, model)
        write_bundle(bundle, args.out)
        print(f"{sc.name}: {len(bundle.trace)} events, {len(bundle.expected)} expected flags")
    return EXIT_OK


def cmd_report(args) -> int:
    data = load_json(args.file)
    if "per_pass_removed" in data:
        print(format_report(ReductionStats.from_dict(data)))
    elif "probes" in data:
        plan = EnforcementPlan.from_dict(data)
        print(format_report(plan.stats))
    elif "cv" in data:
        for gran, res in sorted(data["cv"].items()):
            a, f = res["accuracy"], res["macro_f1"]
            print(f"{gran:<12} accuracy {a['mean']:.4f} ± {a['std']:.4f}  macro-F1 {f['mean']:.4f} ± {f['std']:.4f}")
        for d, res in sorted(data.get("sweep", {}).items(), key=lambda kv: int(kv[0])):
            print(f"depth {int(d):>2}     accuracy {res['accuracy']['mean']:.4f}")
    elif "events_checked" in data:
        for k, v in data.items():
            print(f"{k}: {v}")
    else:
        raise O2CError(f"{args.file}: not a report this tool wrote")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="o2c", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("analyze", help="build and optimize the enforcement plan")
    a.add_argument("--ir", required=True)
    a.add_argument("--cfg", required=True)
    a.add_argument("--spec", required=True)
    a.add_argument("--no-optimize", action="store_true")
    common(a)
    a.set_defaults(func=cmd_analyze)

    pr = sub.add_parser("profile", help="collect a labeled dataset from a trace")
    pr.add_argument("--trace", required=True)
    pr.add_argument("--spec", required=True)
    pr.add_argument("--feature-words", type=int, default=256)
    common(pr)
    pr.set_defaults(func=cmd_profile)

    t = sub.add_parser("train", help="cross-validate and train a decision tree")
    t.add_argument("--data", required=True)
    t.add_argument("--granularity", choices=("type", "compartment"), default="type")
    t.add_argument("--max-depth", type=int, default=14)
    t.add_argument("--folds", type=int, default=5)
    t.add_argument("--sweep", action="store_true", help="also sweep depths 3, 7, 10, 14")
    t.add_argument("--baseline", action="store_true", help="also score a nearest-centroid baseline")
    common(t)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("replay", help="enforce a plan over a trace")
    r.add_argument("--trace", required=True)
    r.add_argument("--plan", required=True)
    r.add_argument("--spec", required=True)
    r.add_argument("--cfg", required=True)
    r.add_argument("--model")
    r.add_argument("--phase", type=int, choices=(-1, 0, 1), default=0)
    r.add_argument("--t0", type=int)
    r.add_argument("--transition-tick", type=int)
    common(r)
    r.set_defaults(func=cmd_replay)

    s = sub.add_parser("scenario", help="emit a synthetic scenario")
    s.add_argument("name", help="scenario kind (e.g. benign, cfihijack), 'suite', or 'world'")
    s.add_argument("--benign-seeds", type=int, default=20)
    s.add_argument("--types", type=int, default=20, help="world: number of object types")
    s.add_argument("--rows", type=int, default=500, help="world: objects per type")
    s.add_argument("--separability", type=float, default=0.9, help="world: chance an object keeps its own content")
    common(s)
    s.set_defaults(func=cmd_scenario)

    rp = sub.add_parser("report", help="print a human summary of a JSON report or plan")
    rp.add_argument("file")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (O2CError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
