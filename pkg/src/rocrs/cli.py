"""Command line front end.

One verb per experiment kind (crs, auction, packing, probing, greedy,
diagnostics), each with two actions:

    rocrs crs run --instance FILE --trials 10000 --seed 7 --out report.csv
    rocrs crs generate --kind graphic_matroid --seed 7 --out inst.json
    rocrs greedy run --oracle f.json --constraints c.json --T 1.0 --steps 100
    rocrs probing run --generator probing --param n=6 --trials 20000

Exit status: 0 when every bound check passes, 1 when any fails, 2 on
input/usage errors.  ROCRS_DESK_CAP bounds the exact-enumeration helpers.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile

from .errors import RocrsError
from .harness import (EXPERIMENT_KINDS, GENERATOR_KINDS, ExperimentConfig,
                      generate_instance, instance_bytes, run_experiment)

# verbs whose generator kind is not simply the verb name
_DEFAULT_GENERATOR = {"crs": "graphic_matroid", "diagnostics": "graphic_matroid",
                      "greedy": "coverage", "auction": "auction",
                      "packing": "packing", "probing": "probing"}


def _parse_param(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw  # bare strings stay strings


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=1, help="master seed")
    parser.add_argument("--trials", type=int, default=10_000)
    parser.add_argument("--out", help="report path; FILE.csv writes FILE.csv "
                                      "and FILE.json, otherwise a prefix")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallelism degree (results do not depend on it)")
    parser.add_argument("--eps", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rocrs",
                                     description=__doc__.split("\n\n")[0])
    verbs = parser.add_subparsers(dest="verb", required=True)
    for verb in EXPERIMENT_KINDS:
        vp = verbs.add_parser(verb)
        actions = vp.add_subparsers(dest="action", required=True)

        run = actions.add_parser("run")
        _add_common(run)
        src = run.add_mutually_exclusive_group()
        src.add_argument("--instance", help="instance JSON file")
        src.add_argument("--generator", choices=GENERATOR_KINDS,
                         help="generate the instance in-process instead")
        run.add_argument("--param", action="append", default=[],
                         type=_parse_param, metavar="KEY=VALUE",
                         help="generator parameter (repeatable)")
        if verb == "greedy":
            run.add_argument("--oracle", help="oracle JSON file")
            run.add_argument("--constraints", help="constraint list JSON file")
            run.add_argument("--T", type=float, help="time horizon in (0, 1]")
            run.add_argument("--steps", type=int, help="discretization steps")

        gen = actions.add_parser("generate")
        gen.add_argument("--kind", choices=GENERATOR_KINDS,
                         default=_DEFAULT_GENERATOR[verb])
        gen.add_argument("--seed", type=int, default=1)
        gen.add_argument("--out", required=True, help="instance file to write")
        gen.add_argument("--param", action="append", default=[],
                         type=_parse_param, metavar="KEY=VALUE")
    return parser


def _read_json(path: str):
    from .errors import InputError
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"malformed JSON in {path} at line {exc.lineno} "
                         f"column {exc.colno}: {exc.msg}") from exc


def _assemble_greedy_instance(args) -> str | None:
    """Merge --oracle/--constraints/--T/--steps into one instance file."""
    overrides = {k: v for k, v in
                 (("T", args.T), ("steps", args.steps)) if v is not None}
    if args.oracle is None and args.constraints is None and not overrides:
        return None
    if args.instance is not None:
        from .harness import load_instance
        payload = load_instance(args.instance)
    else:
        if args.oracle is None or args.constraints is None:
            raise RocrsError("greedy needs --instance, or both --oracle "
                             "and --constraints")
        payload = {"kind": "greedy", "oracle": _read_json(args.oracle),
                   "constraints": _read_json(args.constraints)}
    payload.update(overrides)
    tmp = tempfile.NamedTemporaryFile(mode="wb", suffix=".json", delete=False)
    with tmp:
        tmp.write(instance_bytes(payload))
    return tmp.name


def _cmd_run(args) -> int:
    instance = args.instance
    generator = None
    if args.verb == "greedy":
        merged = _assemble_greedy_instance(args)
        if merged is not None:
            instance = merged
    if args.generator is not None:
        generator = {"kind": args.generator, "params": dict(args.param),
                     "seed": args.seed}
    elif instance is None:
        generator = {"kind": _DEFAULT_GENERATOR[args.verb],
                     "params": dict(args.param), "seed": args.seed}
    config = ExperimentConfig(kind=args.verb, instance=instance,
                              generator=generator, trials=args.trials,
                              seed=args.seed, eps=args.eps, out=args.out,
                              jobs=args.jobs)
    report = run_experiment(config)
    failures = [r for r in report.rows if r.passed is False]
    checked = sum(1 for r in report.rows if r.passed is not None)
    print(f"{args.verb}: {len(report.rows)} rows, {checked} bound checks, "
          f"{len(failures)} failed")
    for key, value in sorted(report.headline.items()):
        print(f"  {key}: {value}")
    for r in failures:
        print(f"  FAIL {r.metric}[{r.target}]: estimate {r.estimate!r} "
              f"vs bound {r.bound!r}")
    if report.csv_path:
        print(f"  wrote {report.csv_path} and {report.json_path}")
    return report.exit_code


def _cmd_generate(args) -> int:
    payload = generate_instance(args.kind, dict(args.param), args.seed)
    with open(args.out, "wb") as fh:
        fh.write(instance_bytes(payload))
    print(f"wrote {args.out} (kind {payload['kind']}, seed {args.seed})")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.action == "run":
            return _cmd_run(args)
        return _cmd_generate(args)
    except RocrsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
