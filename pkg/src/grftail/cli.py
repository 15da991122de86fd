"""Command-line interface.

    grftail approx|mc|is|compare --config c.json [--seed N] [--out DIR] [--n N]
    grftail figure fig1|fig2 [--seed N] [--out DIR] [--svg] [--n N]
    grftail rho --config c.json
    grftail pvalue --config c.json [--seed N] [--n N]

Exit codes: 0 success, 2 config error, 3 numeric failure (no critical level
and no Monte Carlo fallback requested).  GRFTAIL_THREADS caps row-level
parallelism; results are byte-identical across thread counts.
"""

import argparse
import dataclasses
import sys

from .errors import ConfigError, GrfTailError, NoRoot
from .experiments import (
    load_config,
    run_compare,
    run_figure,
    run_pvalue,
    run_rho,
    run_single_estimator,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grftail",
        description="Tail probabilities of exponential integrals of Gaussian "
                    "random fields and the associated Poisson counts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--svg", action="store_true", help="also render SVG figures")
        p.add_argument("--n", type=int, default=None, help="override the MC replication count")

    for name, help_text in (
        ("approx", "closed-form approximations per threshold"),
        ("mc", "crude Monte Carlo estimates per threshold"),
        ("is", "importance-sampling estimates per threshold"),
        ("compare", "approximation vs Monte Carlo comparison table"),
    ):
        add_common(sub.add_parser(name, help=help_text))

    fig = sub.add_parser("figure", help="reproduce a built-in figure preset")
    fig.add_argument("which", choices=("fig1", "fig2"), help="preset family")
    add_common(fig, config_required=False)

    add_common(sub.add_parser("rho", help="domain-size diagnostic report"))
    add_common(sub.add_parser("pvalue", help="one-sided p-value for an observed count"))
    return parser


def _load(args):
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n is not None:
        overrides["n"] = args.n
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "figure":
            paths = run_figure(args.which, out_dir=args.out or ".",
                               seed=args.seed, n=args.n, svg=args.svg)
            for p in paths:
                print(p)
            return EXIT_OK

        config = _load(args)
        if args.command in ("approx", "mc", "is"):
            print(run_single_estimator(config, args.command, out_dir=args.out))
            return EXIT_OK
        if args.command == "compare":
            print(run_compare(config, out_dir=args.out))
            return EXIT_OK
        if args.command == "rho":
            sys.stdout.write(run_rho(config))
            return EXIT_OK
        if args.command == "pvalue":
            sys.stdout.write(run_pvalue(config))
            return EXIT_OK
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoRoot as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GrfTailError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
