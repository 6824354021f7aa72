"""Command-line entry point.

Usage: ``biclab <kind> --config path [--seed n] [--jobs k] [--out dir]``
with kind one of the experiment kinds, or the two-word aliases
``audit bic``, ``audit corollary``, ``counterexample one|two``,
``game solve|sweep``, and ``reduce extreme-points``.  ``game solve`` also
accepts direct ``--instance/--j/--samples`` flags without a config file.
The environment variable BICLAB_SEED overrides the config seed.

Exit codes: 0 all experiment assertions passed, 1 an assertion failed,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import BiclabError
from .runner import KINDS, ExperimentConfig, load_config, run

ALIASES = {
    ("audit", "bic"): "bic-audit",
    ("audit", "corollary"): "corollary",
    ("counterexample", "one"): "counterexample-1",
    ("counterexample", "two"): "counterexample-2",
    ("game", "solve"): "game-solve",
    ("game", "sweep"): "game-sweep",
    ("reduce", "extreme-points"): "reduce",
    ("explore", "semibandit"): "semibandit-explore",
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biclab", description=__doc__)
    parser.add_argument("kind", help="experiment kind")
    parser.add_argument("--config", help="path to the experiment config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--jobs", type=int, default=None, help="worker pool size")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--instance", default=None, help="instance file (game solve shortcut)")
    parser.add_argument("--j", type=int, default=None, help="stage index (game solve shortcut)")
    parser.add_argument("--n", default=None, help="signal sample count (game solve shortcut)")
    parser.add_argument(
        "--samples", type=int, default=None, help="scenario count (game solve shortcut)"
    )
    parser.add_argument(
        "--replications", type=int, default=None, help="override replication count"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if len(argv) >= 2 and (argv[0], argv[1]) in ALIASES:
        argv = [ALIASES[(argv[0], argv[1])]] + argv[2:]
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    kind = args.kind
    if kind not in KINDS:
        print(f"error: unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}",
              file=sys.stderr)
        return 2

    try:
        if args.config:
            config = load_config(args.config)
            if config.kind != kind:
                print(
                    f"error: config kind {config.kind!r} does not match {kind!r}",
                    file=sys.stderr,
                )
                return 2
        else:
            params: dict = {}
            if args.instance:
                with open(args.instance, "r", encoding="utf-8") as fh:
                    params["instance"] = fh.read()
            if args.j is not None:
                params["j"] = args.j
            if args.n is not None:
                params["n"] = None if args.n in ("inf", "infinite", "none") else int(args.n)
            if args.samples is not None:
                params["samples"] = args.samples
            config = ExperimentConfig(kind=kind, params=params)

        if args.replications is not None:
            config.replications = args.replications
        if args.seed is not None:
            config.seed = args.seed
        env_seed = os.environ.get("BICLAB_SEED")
        if env_seed is not None:
            config.seed = int(env_seed)
        if args.jobs is not None:
            config.jobs = args.jobs
        return run(config, out_dir=args.out)
    except BiclabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
