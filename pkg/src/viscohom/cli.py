"""Command-line entry point.

``viscohom <command> --config PATH [--out DIR] [--seed N] [--threads N]``

``--config`` takes a TOML path or the name of a bundled configuration
(``disk``, ``quick``, ``laminate``, ``contrast1``). Exit codes: 0 success,
2 configuration error, 3 solver failure, 4 property failure (including a
non-monotone convergence study).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import SimConfig, load_config
from .errors import ConfigError, SolverDiverged, ViscohomError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_PROPERTY = 4

BUNDLED = ("disk", "quick", "laminate", "contrast1")


def resolve_config(ref: str) -> Path:
    path = Path(ref)
    if path.exists() or ref not in BUNDLED:
        return path
    from .properties import config_path

    return config_path(ref)


def _load(args, required: bool = True) -> Optional[SimConfig]:
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command", "config")
        return None
    try:
        cfg = load_config(resolve_config(args.config))
    except ConfigError:
        raise
    except ViscohomError as exc:  # validation failures raised by the model layer
        raise ConfigError(str(exc), "config") from exc
    kw = {}
    if args.out is not None:
        kw["dir"] = args.out
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.threads is not None:
        kw["threads"] = args.threads
    return cfg.with_output(**kw) if kw else cfg


def _out_dir(args, cfg: Optional[SimConfig]) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(cfg.output.dir) if cfg is not None else Path("out")


def _cmd_cell(args) -> int:
    from .harness import run_cell

    cfg = _load(args)
    rows = run_cell(cfg, cfg.output.dir)
    print(f"cell: {len(rows)} corrector solves written to {cfg.output.dir}/cell.csv")
    return EXIT_OK


def _cmd_effective(args) -> int:
    from .harness import run_effective

    cfg = _load(args)
    model = run_effective(cfg, cfg.output.dir)
    print(model.to_text())
    return EXIT_OK


def _cmd_macro(args) -> int:
    from .harness import run_macro

    cfg = _load(args)
    traj = run_macro(cfg, cfg.output.dir)
    print(f"macro: {len(traj.times)} steps written to {cfg.output.dir}/macro.csv")
    return EXIT_OK


def _cmd_fine(args) -> int:
    from .harness import run_fine

    cfg = _load(args)
    runs = run_fine(cfg, cfg.output.dir)
    for eps, traj in runs.items():
        print(f"fine eps={eps:g}: {traj.ops.size} dofs, {len(traj.times)} steps")
    return EXIT_OK


def _cmd_converge(args) -> int:
    from .harness import run_convergence

    cfg = _load(args)
    rec = run_convergence(cfg, cfg.output.dir)
    for e in rec.ordered():
        print(f"eps={e.eps:g}  e={e.error:.6e}  floor={e.floor:.6e}  relative={e.relative_error:.4e}")
    print(f"monotone decrease: {rec.status}")
    print(f"at discretization floor: {'yes' if rec.at_floor() else 'no'}")
    return EXIT_OK if rec.monotone else EXIT_PROPERTY


def _cmd_props(args) -> int:
    from .properties import run_property_suite

    cfg = _load(args, required=False)
    seed = args.seed if args.seed is not None else (cfg.output.seed if cfg else 0)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    results = run_property_suite(seed, out, inject_non_spd=args.inject_non_spd, only=args.only)
    for r in results:
        print(f"{r.status}  {r.module}.{r.name}: {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} properties passed")
    return EXIT_PROPERTY if failed else EXIT_OK


def _cmd_report(args) -> int:
    from .harness import write_report

    cfg = _load(args, required=False)
    print(write_report(_out_dir(args, cfg), cfg))
    return EXIT_OK


COMMANDS = {
    "cell": (_cmd_cell, "solve the cell problems for the unit gradient loads"),
    "effective": (_cmd_effective, "assemble and report the effective model"),
    "macro": (_cmd_macro, "solve the homogenized problem on the macro mesh"),
    "fine": (_cmd_fine, "solve the fine-scale problem for every configured eps"),
    "converge": (_cmd_converge, "fine-versus-homogenized error study over eps"),
    "props": (_cmd_props, "run the seeded property suite"),
    "report": (_cmd_report, "collect outputs of a run directory into report.txt"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viscohom", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML path or bundled configuration name")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides output.seed)")
        p.add_argument("--threads", type=int, help="worker threads for independent runs")
        if name == "props":
            p.add_argument("--inject-non-spd", action="store_true",
                           help="negative control: indefinite coercivity fixture")
            p.add_argument("--only", nargs="+", help="restrict to these property or module names")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("config error: threads: must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    func = COMMANDS[args.command][0]
    t0 = time.perf_counter()
    try:
        code = func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverDiverged, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ViscohomError, ValueError) as exc:
        # invalid input detected during setup (phase layout, time step vs kernel, ...)
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"[{args.command}] {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
