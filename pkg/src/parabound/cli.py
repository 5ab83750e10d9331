"""Command line entry point.

    parabound run SCENARIO.json [--single] [--out DIR] [--resolution N]
    parabound suite DIR [--single] [--out DIR] [--resolution N]

Exit codes: 0 all pass, 1 a bound is violated, 2 configuration error,
3 under-resolved. PARABOUND_THREADS caps the number of scenarios run at once.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .harness import FAIL, PASS
from .scenario import (UNDER_RESOLVED, ConfigError, Scenario, ScenarioError, bundled_dir,
                       run_scenario)

EXIT_PASS, EXIT_VIOLATION, EXIT_CONFIG, EXIT_UNDER_RESOLVED = 0, 1, 2, 3

log = logging.getLogger("parabound")


def _run_one(path: str, single: bool, out: str | None, resolution: int | None) -> tuple[str, str, str]:
    """Worker: (name, status, message); never raises."""
    try:
        s = Scenario.load(path)
        out_dir = out if out is not None else s.outputs.get("dir")
        res = run_scenario(s, resolution=resolution, single=single, out_dir=out_dir)
    except ConfigError as err:
        return Path(path).stem, "config-error", str(err)
    except ScenarioError as err:
        return Path(path).stem, "error", str(err)
    worst = ""
    for r in res.reports:
        if r.status == FAIL:
            worst = f"{r.kind} at {r.location}: violation {r.max_violation:.3e} > {r.eps_budget:.3e}"
            break
    if res.status == UNDER_RESOLVED:
        worst = res.details.get("error") or "; ".join(res.eps.get("notes", []))
    return res.name, res.status, worst


def _exit_code(statuses) -> int:
    if "config-error" in statuses:
        return EXIT_CONFIG
    if FAIL in statuses or "error" in statuses:
        return EXIT_VIOLATION
    if UNDER_RESOLVED in statuses:
        return EXIT_UNDER_RESOLVED
    return EXIT_PASS


def _threads() -> int:
    raw = os.environ.get("PARABOUND_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring PARABOUND_THREADS=%r", raw)
        return 1


def run_paths(paths, single=False, out=None, resolution=None) -> int:
    paths = [str(p) for p in paths]
    jobs = min(_threads(), len(paths)) or 1
    args = [(p, single, out, resolution) for p in paths]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, *zip(*args)))
    else:
        results = [_run_one(*a) for a in args]
    for name, status, msg in results:
        tag = status if not single or status not in (PASS, FAIL) else f"{status} (ungated)"
        print(f"{name}: {tag}" + (f"  {msg}" if msg else ""))
    return _exit_code([r[1] for r in results])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parabound",
                                description="Verify pointwise bounds for semilinear heat equations.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, target, helptext in (("run", "scenario", "run one scenario file"),
                                   ("suite", "directory", "run every *.json scenario in a directory")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument(target, nargs="?" if name == "suite" else None,
                        help=None if name == "run" else "defaults to the bundled scenarios")
        sp.add_argument("--single", action="store_true",
                        help="one resolution only; verdicts are marked ungated")
        sp.add_argument("--out", help="directory for <name>.summary.json and <name>.points.csv")
        sp.add_argument("--resolution", type=int, help="coarse node count per axis")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.resolution is not None and args.resolution < 5:
        print("error: --resolution must be at least 5", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        path = Path(args.scenario)
        if not path.is_file():
            print(f"error: no scenario file {path}", file=sys.stderr)
            return EXIT_CONFIG
        paths = [path]
    else:
        folder = Path(args.directory) if args.directory else bundled_dir()
        paths = sorted(folder.glob("*.json"))
        if not paths:
            print(f"error: no scenario files in {folder}", file=sys.stderr)
            return EXIT_CONFIG
    return run_paths(paths, args.single, args.out, args.resolution)


if __name__ == "__main__":
    sys.exit(main())
