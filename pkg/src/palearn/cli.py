"""Command-line entry point: ``palearn run | diagnose | gen-data``.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
``PALEARN_OUT`` sets the default output root for ``run``.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import glob
import hashlib
import json
import logging
import os
import re
import sys

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
OUT_ENV = "PALEARN_OUT"

log = logging.getLogger("palearn")


def config_hash(plan_dict: dict) -> str:
    canonical = json.dumps(plan_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _versions() -> dict:
    import numpy
    import torch

    from . import __version__
    return {"palearn": __version__, "numpy": numpy.__version__, "torch": torch.__version__}


def apply_overrides(plan_dict: dict, args) -> dict:
    d = json.loads(json.dumps(plan_dict))
    if args.noise_rate is not None:
        d["noise_rate"] = args.noise_rate
    if args.seeds:
        d["seeds"] = args.seeds
    hp_over = {k: v for k, v in (("lambda1", args.lambda1), ("lambda2", args.lambda2),
                                 ("epochs_finetune", args.finetune_epochs),
                                 ("epochs_main", args.epochs)) if v is not None}
    for s in d.get("strategies", []):
        if not isinstance(s, dict):
            continue
        if hp_over:
            s.setdefault("hyperparameters", {}).update(hp_over)
        if args.subqueries is not None and s.get("kind") == "pal":
            s["subquery_count"] = args.subqueries
    return d


def cmd_run(args) -> int:
    from .simulate import ExperimentPlan, PlanError, run_active_learning

    try:
        with open(args.plan) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read plan {args.plan}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    plan_dict = apply_overrides(raw, args)
    try:
        plan = ExperimentPlan.from_dict(plan_dict)
    except (PlanError, ValueError) as exc:
        for path, msg in getattr(exc, "errors", [("", str(exc))]):
            print(f"error: {path or '<root>'}: {msg}", file=sys.stderr)
        return EXIT_INVALID

    out_dir = args.out or os.environ.get(OUT_ENV)
    if not out_dir:
        print(f"error: no output directory (pass --out or set {OUT_ENV})", file=sys.stderr)
        return EXIT_INVALID
    os.makedirs(out_dir, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    results = run_active_learning(plan, out_dir, jobs=args.jobs)
    failed = sorted((k, v.error) for k, v in results.items() if v.error)
    manifest = {
        "config_hash": config_hash(plan.to_dict()),
        "plan": plan.to_dict(),
        "seeds": list(plan.seeds),
        "strategies": [s.name for s in plan.strategies],
        "outputs": {"summary": "summary.csv", "runlogs": "runlogs/", "queries": "queries/",
                    "scores": "scores/"},
        "started": started,
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "versions": _versions(),
        "failures": [{"strategy": k[0], "seed": k[1], "error": e} for k, e in failed],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for (name, seed), err in failed:
        print(f"run failed: strategy={name} seed={seed}: {err}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


_SCORE_NAME = re.compile(r"^(?P<strategy>.+)_seed(?P<seed>-?\d+)_round(?P<round>\d+)\.csv$")


def cmd_diagnose(args) -> int:
    from .diagnostics import diagnostics_report
    from .scoring import ScoreFileError, read_score_csv

    score_dir = os.path.join(args.run_dir, "scores")
    if not os.path.isdir(args.run_dir):
        print(f"error: {args.run_dir} is not a directory", file=sys.stderr)
        return EXIT_INVALID
    if not os.path.isdir(score_dir):
        print(f"error: no score dumps under {score_dir}", file=sys.stderr)
        return EXIT_INVALID
    tables = {}
    for path in sorted(glob.glob(os.path.join(score_dir, "*.csv"))):
        m = _SCORE_NAME.match(os.path.basename(path))
        if not m:
            continue
        try:
            tables[(m["strategy"], int(m["seed"]), int(m["round"]))] = read_score_csv(path)
        except ScoreFileError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
    report = diagnostics_report(tables, lambda1=args.lambda1)
    out = args.out or os.path.join(args.run_dir, "diagnostics.json")
    with open(out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(out)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from .core import save_dataset
    from .simulate import generate_synthetic_dataset

    if args.classes < 2 or args.per_class < 1 or args.size < 8:
        print("error: need --classes >= 2, --per-class >= 1 and --size >= 8", file=sys.stderr)
        return EXIT_INVALID
    ds = generate_synthetic_dataset(args.classes, args.per_class, args.size, args.seed,
                                    noise=args.noise)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="palearn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an active-learning experiment plan")
    r.add_argument("plan")
    r.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--noise-rate", type=float)
    r.add_argument("--lambda1", type=float)
    r.add_argument("--lambda2", type=float)
    r.add_argument("--subqueries", type=int, help="K, sub-queries per PAL query")
    r.add_argument("--finetune-epochs", type=int, help="E_S")
    r.add_argument("--epochs", type=int, help="E_Q, task and scoring epochs")
    r.add_argument("--seeds", type=int, nargs="+")
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("diagnose", help="write a diagnostics report for a run directory")
    d.add_argument("run_dir")
    d.add_argument("--out")
    d.add_argument("--lambda1", type=float, default=1.0)
    d.set_defaults(func=cmd_diagnose)

    g = sub.add_parser("gen-data", help="write a synthetic dataset in manifest format")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--per-class", type=int, default=500)
    g.add_argument("--size", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", type=float, default=0.55)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # surfaced as an exit code, not a traceback
        log.exception("command failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
