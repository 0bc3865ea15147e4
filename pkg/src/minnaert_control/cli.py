"""Command-line entry point.

Verbs: validate, spectrum, poles, gain, realize, simulate, track, sweep.
Exit codes: 0 all checks pass, 2 assumption violation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import jsonschema

from . import harness
from .harness import (
    ASSUMPTION_ERRORS,
    NUMERICAL_ERRORS,
    Report,
    StageError,
    demo_config,
    emit_report,
    emit_run_artifacts,
    epsilon_sweep,
    load_config,
    run_tracking_experiment,
    validate_config,
)

EXIT_OK, EXIT_ASSUMPTION, EXIT_NUMERICAL = 0, 2, 3

VERB_STAGE = {"poles": "poles", "gain": "bands", "realize": "synthesize", "simulate": "simulate", "track": "track"}

log = logging.getLogger("minnaert_control")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minnaert-control", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("verb", choices=["validate", "spectrum", "poles", "gain", "realize", "simulate", "track", "sweep"])
    p.add_argument("--config", required=True, help="JSON config path, or 'demo' for the shipped demo")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--epsilon", type=float, action="append", help="override the eps list (repeatable)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--dt-check", action="store_true", help="sweep: rerun the smallest eps at dt/2")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    clean = harness._clean(json.loads(json.dumps(obj, default=harness._json_default)))
    path.write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n")
    return path


def _spectrum(cfg, out: Path):
    path = out / "spectrum.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k1", "k2", "k3", "lambda", "omega"])
        for m in cfg.modes:
            w.writerow([*m.index.as_tuple(), f"{m.lam:.17g}", f"{m.omega:.17g}"])
    return path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        raw = demo_config() if args.config == "demo" else load_config(args.config)
        cfg = validate_config(raw, seed=args.seed, epsilons=args.epsilon)
        if args.verb == "validate":
            _write_json(out / "validate.json", {"status": "ok", "diagnostics": cfg.diagnostics})
            print(json.dumps(harness._clean(json.loads(json.dumps(cfg.diagnostics, default=harness._json_default))),
                             sort_keys=True))
            return EXIT_OK
        if args.verb == "spectrum":
            print(_spectrum(cfg, out))
            return EXIT_OK
        if args.verb == "sweep":
            report = epsilon_sweep(cfg, dt_check=args.dt_check)
            paths = emit_report(report, out)
            for c in report.summary["checks"]:
                print(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}: {c['criterion']}")
            print(paths["summary"])
            return EXIT_OK if all(c["pass"] for c in report.summary["checks"]) else EXIT_NUMERICAL
        stage = VERB_STAGE[args.verb]
        records = []
        for eps in sorted(cfg.epsilons, reverse=True):
            run = run_tracking_experiment(cfg, eps, until=stage, with_gain=args.verb != "poles")
            if args.verb == "poles":
                run.gains = []
            if args.verb in ("poles", "gain"):
                run.control, run.signals = None, {}
            rec = dict(run.record)
            rec["artifacts"] = emit_run_artifacts(run, out)
            records.append(rec)
        summary = dict(Report.empty().summary)
        summary["records"] = records
        summary["config"] = {"name": cfg.raw.get("name", ""), "seed": cfg.seed,
                             "epsilons": sorted(cfg.epsilons, reverse=True)}
        print(_write_json(out / f"{args.verb}.json", summary))
        return EXIT_OK
    except StageError as exc:
        log.error("%s", exc)
        return EXIT_ASSUMPTION if exc.is_assumption else EXIT_NUMERICAL
    except ASSUMPTION_ERRORS as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
        log.error("assumption violation: %s", msg)
        return EXIT_ASSUMPTION
    except NUMERICAL_ERRORS as exc:
        log.error("numerical failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
