"""Command line: ``regdirichlet run|list|describe``."""

from __future__ import annotations

import argparse
import os
import sys
import time

from ..pathkit import ConfigurationError
from .config import load_config
from .experiments import REGISTRY, Context

__all__ = ["main", "run_config", "ExperimentReport"]

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, (int,)):
        return str(v)
    try:
        return f"{float(v):.17g}"
    except (TypeError, ValueError):
        return str(v)


def _atomic(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fp:
        fp.write(text)
    os.replace(tmp, path)


def _csv_text(check) -> str:
    lines = [",".join(check.header)]
    lines += [",".join(_fmt(v) for v in row) for row in check.rows]
    return "\n".join(lines) + "\n"


class ExperimentReport:
    """Config echo, per-check verdicts, overall verdict and wall time."""

    def __init__(self, cfg, checks, wall):
        self.cfg, self.checks, self.wall = cfg, checks, wall

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.gating)

    def text(self) -> str:
        out = [f"# experiment {self.cfg.experiment}: {REGISTRY[self.cfg.experiment].anchor}",
               "# config (replayable)", self.cfg.echo().rstrip(), "# checks"]
        for c in self.checks:
            tag = ("PASS" if c.passed else "FAIL") if c.gating else "INFO"
            out.append(f"{tag} {c.name}: {c.summary}")
        out.append(f"# overall {'PASS' if self.passed else 'FAIL'}")
        out.append(f"# wall_time_s {self.wall:.2f}")
        return "\n".join(out) + "\n"

    def write(self, root) -> str:
        target = os.path.join(root, self.cfg.experiment)
        os.makedirs(target, exist_ok=True)
        for c in self.checks:
            _atomic(os.path.join(target, f"{c.name}.csv"), _csv_text(c))
            for name, text in c.extra_files.items():
                _atomic(os.path.join(target, name), text)
        _atomic(os.path.join(target, "report.txt"), self.text())
        return target


def run_config(cfg) -> ExperimentReport:
    start = time.perf_counter()
    checks = REGISTRY[cfg.experiment].run(Context(cfg))
    return ExperimentReport(cfg, checks, time.perf_counter() - start)


def _parser():
    p = argparse.ArgumentParser(prog="regdirichlet",
                                description="Regularized stochastic calculus experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory (default: output.dir or ./out)")
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--seed", type=int, default=None)
    sub.add_parser("list", help="list registered experiments")
    d = sub.add_parser("describe", help="show what an experiment verifies")
    d.add_argument("name")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    if args.command == "list":
        for name in REGISTRY:
            print(name)
        return EXIT_PASS
    if args.command == "describe":
        exp = REGISTRY.get(args.name)
        if exp is None:
            print(f"unknown experiment {args.name!r}", file=sys.stderr)
            return EXIT_USAGE
        print(f"{exp.name}\n  verifies: {exp.anchor}\n  {exp.blurb}")
        return EXIT_PASS
    if args.workers is not None and args.workers < 1:
        print("--workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    overrides = {"ensemble.seed": args.seed, "ensemble.workers": args.workers}
    try:
        cfg = load_config(args.config, registry=REGISTRY, overrides=overrides)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.out is not None:
        cfg.out = args.out
    try:
        report = run_config(cfg)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    where = report.write(cfg.out)
    sys.stdout.write(report.text())
    print(f"# wrote {where}")
    return EXIT_PASS if report.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
