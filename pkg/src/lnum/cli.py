"""Command line entry point: ``lnum {run,sweep,regret-scaling,oracle}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .errors import ConfigurationError


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _config(args):
    cfg = harness.load_config(args.config) if args.config else harness.normalize_config({})
    if getattr(args, "no_delay", False):
        cfg["policy"]["no_delay"] = True
    if getattr(args, "noise", None) is not None:
        cfg["noise"] = args.noise
    if getattr(args, "out", None):
        cfg["output"]["dir"] = args.out
    return cfg


def cmd_run(args):
    cfg = _config(args)
    result = harness.run_once(cfg, args.seed, trajectory=True)
    out = cfg["output"].get("dir")
    if out:
        harness.write_run(result, out, name=f"run_{result.record.policy}_s{args.seed}")
    print(json.dumps(result.record.row(), indent=2))


def cmd_sweep(args):
    cfg = _config(args)
    values = _floats(args.values)
    res = harness.sweep(cfg, args.axis, values, _ints(args.seeds), cfg["output"].get("dir"),
                        workers=args.workers)
    keys = list(res.summary[0])
    print("\t".join(keys))
    for row in res.summary:
        print("\t".join(f"{row[k]:.6g}" if isinstance(row[k], float) else str(row[k]) for k in keys))


def cmd_scaling(args):
    cfg = _config(args)
    res = harness.regret_scaling(cfg, _ints(args.horizons), _ints(args.seeds),
                                 cfg["output"].get("dir"), workers=args.workers)
    for rec in res.records:
        print(f"seed={rec.seed}\tT={rec.T}\tregret_bound={rec.regret_bound:.6g}\tmax_queue={rec.max_queue:.6g}")
    print(f"slope={res.slope:.4f}")


def cmd_oracle(args):
    cfg = _config(args)
    rec = harness.oracle_report(cfg, args.seed)
    text = json.dumps(rec, indent=2, default=float)
    out = cfg["output"].get("dir")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "oracle.json").write_text(text)
    print(text)


def build_parser():
    parser = argparse.ArgumentParser(prog="lnum", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML/JSON run configuration")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output directory for CSV files")
        p.add_argument("--no-delay", action="store_true",
                       help="reveal utilities at injection instead of delivery")
        p.add_argument("--noise", type=float, help="uniform observation noise half-width")

    p = sub.add_parser("run", help="simulate one run")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid over one parameter")
    common(p)
    p.add_argument("--axis", required=True, help="alpha, V, delta, noise, T or section.key")
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--seeds", default="0", help="comma separated seeds")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("regret-scaling", help="log-log regret slope over horizons")
    common(p)
    p.add_argument("--horizons", default="1000,4000,16000")
    p.add_argument("--seeds", default="0,1,2,3,4,5,6,7,8,9")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("oracle", help="solve the static benchmark problem")
    common(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
