"""Command-line entry point.

    pilotwaves run CONFIG.json [--out DIR]
    pilotwaves recipe NAME [--set key.sub=value ...] [--out DIR] [--print]
    pilotwaves compare A.csv B.csv --metric max_abs|time_integrated_abs|rel_at [--at T]
    pilotwaves checkpoint-resume CHECKPOINT.npz [--t-max T]

Exit codes: 0 success, 2 configuration error, 3 divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, apply_overrides, load_config, parse_config, recipe_dict, recipe_names
from .model import ResolutionError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pilotwaves", description=__doc__.split("\n\n")[0])
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/FFT worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a JSON config or a previous run's manifest")
    r.add_argument("config")
    r.add_argument("--out", help="override output_dir")

    rc = sub.add_parser("recipe", help="run a bundled figure recipe")
    rc.add_argument("name", help=f"one of: {', '.join(recipe_names())}")
    rc.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="KEY=VALUE", help="dotted-key override, value parsed as JSON")
    rc.add_argument("--out", help="override output_dir")
    rc.add_argument("--print", dest="print_only", action="store_true",
                    help="print the resolved config and exit")

    c = sub.add_parser("compare", help="compare two t,value CSV series")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--metric", default="max_abs",
                   choices=["max_abs", "time_integrated_abs", "rel_at"])
    c.add_argument("--at", type=float, default=None, help="time for rel_at")

    k = sub.add_parser("checkpoint-resume", help="continue an ensemble run from its checkpoint")
    k.add_argument("checkpoint")
    k.add_argument("--t-max", type=float, default=None)
    return p


def _execute(args) -> int:
    from . import runner

    if args.command == "compare":
        try:
            v = runner.compare(runner.load_series(args.a), runner.load_series(args.b),
                               args.metric, args.at)
        except (OSError, ValueError) as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        print(repr(v))
        return EXIT_OK

    try:
        if args.command == "checkpoint-resume":
            report = runner.resume(args.checkpoint, args.t_max)
        else:
            if args.command == "run":
                cfg = load_config(args.config)
            else:
                raw = apply_overrides(recipe_dict(args.name), args.overrides)
                if args.print_only:
                    print(json.dumps(parse_config(raw).to_dict(), indent=2))
                    return EXIT_OK
                cfg = parse_config(raw)
            if args.out:
                cfg.output_dir = args.out
            report = runner.run(cfg)
    except (ConfigError, ResolutionError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except runner.DivergenceError as e:
        where = f"; last good checkpoint: {e.checkpoint}" if e.checkpoint else ""
        print(f"diverged: {e}{where}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"wrote {len(report.outputs)} file(s) to {report.output_dir} "
          f"in {report.wall_time:.1f}s, {report.n_diagnostics} diagnostic(s)")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=args.threads):
            return _execute(args)
    return _execute(args)


if __name__ == "__main__":
    sys.exit(main())
