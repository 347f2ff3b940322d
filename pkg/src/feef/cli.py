"""Command line entry point: ``feef run | bound-check | export-coverage``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import ExperimentConfig, export_coverage, load_config, run_experiment
from .nets import ContractError
from .tabular import bound_check_suite

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# CLI flags that mirror ExperimentConfig keys; all parsed as strings and
# converted by the config itself
_RUN_FLAGS = [k for k in ExperimentConfig.keys()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="feef", description="FEEF model-based control experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress per episode")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--config", help="key=value config file; flags override it")
    run.add_argument("--paper-config", action="store_true",
                     help="start from the full-scale hyperparameters (400 units, 700/70/7)")
    for key in _RUN_FLAGS:
        run.add_argument("--" + key.replace("_", "-"), dest=key, default=None)

    bc = sub.add_parser("bound-check", help="check the tabular bound and decomposition")
    bc.add_argument("--toys", type=int, default=20)
    bc.add_argument("--seed", type=int, default=0)

    ex = sub.add_parser("export-coverage", help="dump visited-state points of a run")
    ex.add_argument("run_dir")
    ex.add_argument("--seed", type=int, default=None)
    ex.add_argument("--out", default=None)
    return p


def _cmd_run(args) -> int:
    values = load_config(args.config) if args.config else {}
    values.update({k: getattr(args, k) for k in _RUN_FLAGS if getattr(args, k) is not None})
    try:
        config = ExperimentConfig.from_mapping(values, paper_config=args.paper_config)
    except (ContractError, ValueError) as exc:
        raise UsageError(f"feef run: invalid configuration: {exc}") from exc
    results = run_experiment(config)
    for seed, records in results.items():
        agent_eps = [r for r in records if r.episode >= 0]
        best = max((r.ret for r in agent_eps), default=float("nan"))
        print(f"seed {seed}: {len(agent_eps)} episodes, best return {best:.4g}, "
              f"final coverage {records[-1].coverage:.3f}")
    print(f"wrote {config.output}/metrics.csv")
    return EXIT_OK


def _cmd_bound_check(args) -> int:
    if args.toys < 1:
        raise UsageError("feef bound-check: --toys must be positive")
    checks = bound_check_suite(args.toys, args.seed)
    ok = True
    for c in checks:
        passed = c.passed()
        ok &= passed
        print(f"toy {c.toy:3d} policy {c.policy}: F={c.feef:.6f} bound={c.bound_rhs:.6f} "
              f"slack={c.feef - c.bound_rhs:.3e} decomposition_err={c.decomposition_error:.1e} "
              f"{'PASS' if passed else 'FAIL'}")
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_RUNTIME


def _cmd_export(args) -> int:
    print(export_coverage(args.run_dir, args.seed, args.out))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        handler = {"run": _cmd_run, "bound-check": _cmd_bound_check, "export-coverage": _cmd_export}
        return handler[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ContractError, FloatingPointError) as exc:
        print(f"feef: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
