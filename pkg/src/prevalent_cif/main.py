from __future__ import annotations
import prevalent_cif  # noqa: F401

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from . import io
from .errors import (
    CohortValidationError,
    EmptyCohortError,
    PrevalentCifError,
    ScenarioError,
)
from .graph import EstimateRunner
from .study.harness import STUDY_ESTIMATORS, THREADS, compare_estimators, run_study
from .study.scenarios import ScenarioConfig, sample_cohort
from .survival.cohort import class_counts, cohort_summary

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4
EXIT_NUMERIC = 5


def _estimator_list(text: str) -> List[str]:
    names = [t.strip().lower() for t in text.split(",") if t.strip()]
    if not names:
        raise argparse.ArgumentTypeError("empty estimator list")
    return names


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--quiet", action="store_true", help="no console output or progress bars")


def _add_design(p: argparse.ArgumentParser) -> None:
    p.add_argument("--c-lower", type=float, default=40.0, help="minimum recruitment age")
    p.add_argument("--c-upper", type=float, default=69.0, help="maximum recruitment age")
    p.add_argument("--tau", type=float, default=80.0, help="maximum analysis age")


def _add_inference(p: argparse.ArgumentParser) -> None:
    p.add_argument("--transform", default="identity", choices=["identity", "log", "arcsine-root"])
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--grid", type=float, nargs=3, metavar=("START", "STOP", "STEP"),
                   help="uniform reporting grid (inclusive of STOP)")
    p.add_argument("--band-range", type=float, nargs=2, metavar=("TAU1", "TAU2"))
    p.add_argument("--B", type=int, default=250, help="multiplier draws for the band")
    p.add_argument("--seed", type=int, help="master seed (drawn from system entropy when absent)")
    p.add_argument("--auxiliary", action="store_true", help="include the auxiliary influence terms")


def _add_scenario(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", help="4-digit scenario code, e.g. 2111")
    g.add_argument("--config", type=Path, help="YAML scenario file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prevalent-cif", description="Cumulative incidence estimation with prevalent cases")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (("estimate", "estimate CIFs, pointwise intervals and optional bands"),
                            ("band", "simultaneous confidence bands only")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("input", type=Path, help="cohort CSV: id,v1,v2,delta1,delta2,r")
        _add_common(p)
        _add_design(p)
        p.add_argument("--estimator", "--estimators", dest="estimators", type=_estimator_list, default=["aj", "new"],
                       help="comma-separated subset of aj,new,tie,comb")
        _add_inference(p)
        p.add_argument("--restrict-t1-after", type=float, help="drop subjects with observed onset before this age")
        p.add_argument("--allow-estimand-mismatch", action="store_true",
                       help="combine AJ and new even when the new estimate has mass below c_lower")

    p = sub.add_parser("simulate", help="sample a cohort from a scenario")
    _add_scenario(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)
    _add_common(p)

    p = sub.add_parser("coverage", help="replicated simulation study")
    _add_scenario(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--n-reps", type=int, required=True)
    p.add_argument("--estimator", "--estimators", dest="estimators", type=_estimator_list,
                   default=list(STUDY_ESTIMATORS))
    _add_inference(p)
    p.set_defaults(transform="arcsine-root")
    p.add_argument("--threads", type=int, default=THREADS)
    p.add_argument("--oracle", choices=["quad", "mc"], default="quad")
    p.add_argument("--oracle-draws", type=int)
    _add_common(p)
    return parser


def _grid(args) -> Optional[List[float]]:
    if not args.grid:
        return None
    start, stop, step = args.grid
    if step <= 0:
        raise argparse.ArgumentTypeError("grid step must be positive")
    return np.round(np.arange(start, stop + step / 2, step), 10).tolist()


def _seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(np.random.SeedSequence().entropy % (2**63))


def _scenario(args) -> ScenarioConfig:
    if args.config is not None:
        return ScenarioConfig.from_yaml(args.config)
    return ScenarioConfig.from_code(args.scenario)


def _cmd_estimate(args, console: Console, band_only: bool = False) -> int:
    seed = _seed(args)
    design = {"c_lower": args.c_lower, "c_upper": args.c_upper, "tau": args.tau}
    band_range = args.band_range
    if band_only and band_range is None:
        band_range = [args.c_lower + 10.0, args.tau]
    params = {
        "design": design,
        "estimators": args.estimators,
        "transform": args.transform,
        "alpha": args.alpha,
        "grid": _grid(args),
        "band_range": band_range,
        "B": args.B,
        "include_auxiliary": args.auxiliary,
        "restrict_t1_after": args.restrict_t1_after,
        "allow_estimand_mismatch": args.allow_estimand_mismatch,
    }
    manifest = io.RunManifest(subcommand=args.command, inputs=[str(args.input)], output_dir=str(args.out),
                              seed=seed, parameters=params)
    manifest.write()
    unknown = set(args.estimators) - {"aj", "new", "tie", "comb"}
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown estimator(s): {', '.join(sorted(unknown))}")

    result = EstimateRunner().run(
        input_path=str(args.input), output_dir=str(args.out), seed=seed,
        band_range=tuple(band_range) if band_range else None, band_only=band_only,
        **{k: v for k, v in params.items() if k != "band_range"},
    )
    manifest.outputs = result.get("outputs", [])
    manifest.finish()

    table = Table(title=f"{args.command}: {len(result['cohort'])} subjects")
    table.add_column("estimator")
    table.add_column("estimand")
    table.add_column(f"G({args.tau:g})", justify="right")
    table.add_column("band critical value", justify="right")
    for name, est in result["estimates"].items():
        band = result.get("bands", {}).get(name)
        table.add_row(name, est.estimand_tag.value, f"{float(est(args.tau)):.4f}",
                      f"{band.critical_value:.3f}" if band else "-")
    console.print(table)
    console.print(f"[green]wrote[/green] {len(manifest.outputs)} file(s) to {args.out}")
    return EXIT_OK


def _cmd_simulate(args, console: Console) -> int:
    cfg = _scenario(args)
    seed = _seed(args)
    manifest = io.RunManifest(subcommand="simulate", inputs=[str(args.config)] if args.config else [],
                              output_dir=str(args.out), seed=seed,
                              parameters={"scenario": cfg.model_dump(mode="json"), "n": args.n})
    manifest.write()
    cohort = sample_cohort(cfg, args.n, seed)
    summary = {"scenario": cfg.code, "cohort": cohort_summary(cohort), "classes": class_counts(cohort)}
    manifest.outputs = [
        str(io.write_cohort_csv(cohort, args.out / "cohort.csv")),
        str(io.write_json(summary, args.out / "summary.json")),
    ]
    manifest.finish()
    s = summary["cohort"]
    console.print(
        f"scenario {cfg.code}: n={s['n']}, prevalent below {cfg.design.c_lower:g}: {s['prevalent_below_c_lower']}, "
        f"incident: {s['incident']}"
    )
    return EXIT_OK


def _cmd_coverage(args, console: Console) -> int:
    cfg = _scenario(args)
    seed = _seed(args)
    band_range = tuple(args.band_range) if args.band_range else cfg.default_band_range
    params = {
        "scenario": cfg.model_dump(mode="json"),
        "n": args.n,
        "n_reps": args.n_reps,
        "B": args.B,
        "alpha": args.alpha,
        "grid": _grid(args),
        "band_range": list(band_range),
        "estimators": args.estimators,
        "transform": args.transform,
        "include_auxiliary": args.auxiliary,
        "threads": args.threads,
        "oracle": args.oracle,
        "oracle_draws": args.oracle_draws,
    }
    manifest = io.RunManifest(subcommand="coverage", inputs=[str(args.config)] if args.config else [],
                              output_dir=str(args.out), seed=seed, parameters=params)
    manifest.write()
    summary = run_study(
        cfg, args.n, args.n_reps, B=args.B, alpha=args.alpha, grid=params["grid"], band_range=band_range,
        estimators=args.estimators, seed=seed, transform=args.transform, include_auxiliary=args.auxiliary,
        threads=args.threads, oracle_method="monte_carlo" if args.oracle == "mc" else "closed_form_integration",
        oracle_draws=args.oracle_draws, progress=not args.quiet,
    )
    manifest.outputs = [str(io.write_study(summary, args.out))]
    if {"aj", "new"} <= set(summary.estimators):
        path = args.out / "efficiency.csv"
        compare_estimators(summary).to_csv(path, index=False, lineterminator="\n")
        manifest.outputs.append(str(path))
    manifest.finish()

    ref = summary.reference_band_coverage or {}
    table = Table(title=f"scenario {cfg.code}, n={args.n}, {args.n_reps} replications")
    table.add_column("estimator")
    table.add_column("band coverage", justify="right")
    table.add_column("reference", justify="right")
    table.add_column("mean band width", justify="right")
    for name, s in summary.estimators.items():
        table.add_row(name, f"{s.band_coverage:.3f} ± {s.band_coverage_mc_se:.3f}",
                      f"{ref[name]:.3f}" if name in ref else "-", f"{s.mean_band_width:.4f}")
    console.print(table)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    console = Console(quiet=args.quiet)
    err = Console(stderr=True)
    try:
        if args.command in ("estimate", "band"):
            return _cmd_estimate(args, console, band_only=args.command == "band")
        if args.command == "simulate":
            return _cmd_simulate(args, console)
        return _cmd_coverage(args, console)
    except CohortValidationError as e:
        for line in e.report_lines():
            print(line, file=sys.stderr)
        err.print(f"[red]validation failed:[/red] {e}")
        return EXIT_VALIDATION
    except EmptyCohortError as e:
        err.print(f"[red]error:[/red] {e}")
        return EXIT_VALIDATION
    except (ScenarioError, ValidationError, argparse.ArgumentTypeError) as e:
        err.print(f"[red]usage error:[/red] {e}")
        return EXIT_USAGE
    except OSError as e:
        err.print(f"[red]I/O error:[/red] {e}")
        return EXIT_IO
    except (PrevalentCifError, ValueError) as e:
        err.print(f"[red]estimation failed:[/red] {type(e).__name__}: {e}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
