"""Command-line entry point.

    python main.py <subcommand> --config CONFIG.json [--out DIR] [--format FMT ...]
                   [--threads N] [--seed SEED] [--verbose]
    python main.py --schema

Subcommands: simulate, sweep, semisynth, audit, calibrate, diagnose. Exit
codes: 0 success, 2 config error, 3 identification failure, 4 I/O error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pydantic

from . import errors
from .basetypes import ExcludedColumn, ExcludedInstrumentDgp, LinearInteraction
from .calibration import CalibrationResult, calibrate_alpha, calibrate_spec, problem_for_model
from .config import (
    CONFIGS,
    AuditConfig,
    CalibrateConfig,
    DiagnoseConfig,
    SemisynthConfig,
    SimulateConfig,
    SweepConfig,
    load_config,
    schemas,
)
from .data_model import read_csv, write_csv
from .dgp import simulate
from .instruments import build_instrument
from .montecarlo import bias_sweep, run_experiment, semisynth, transform_audit
from .numerics import add_intercept, residualize
from .report import emit_report
from .utils import default_threads, mix_seed
from .weak_causality import (
    FkgResult,
    SaturationTest,
    Witness,
    find_sign_violation,
    fkg_check,
    random_monotone,
    saturation_test,
)

logger = logging.getLogger("ivforge.cli")

DEFAULT_FORMATS = {
    "simulate": ["csv"],
    "sweep": ["csv", "svg"],
    "semisynth": ["csv", "json"],
    "audit": ["csv"],
    "calibrate": ["json"],
    "diagnose": ["json"],
}


def setup_logging(verbose: bool) -> None:
    root = logging.getLogger("ivforge")
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("[%(asctime)s] [%(levelname)s] %(message)s"))
        root.addHandler(handler)


# -------------------------------------------------------------------------
# Subcommands
# -------------------------------------------------------------------------

class CalibrationTable(pydantic.BaseModel):
    results: list[CalibrationResult]


class DiagnoseReport(pydantic.BaseModel):
    saturation: SaturationTest
    fkg_pairs: int
    fkg_sign_ok: int
    fkg_failures: list[FkgResult]
    witness: Optional[Witness]
    excluded_witness: Optional[Witness]


def _emit_all(result, formats: list[str], out: Path, stem: str) -> list[Path]:
    return [emit_report(result, fmt, out / f"{stem}.{fmt}") for fmt in formats]


def cmd_simulate(cfg: SimulateConfig, args, out: Path, stem: str) -> list[Path]:
    if any(f != "csv" for f in args.formats):
        raise errors.ConfigError("simulate writes datasets as csv only")
    seed = args.seed if args.seed is not None else cfg.seed
    ds = simulate(calibrate_spec(cfg.dgp), cfg.n, seed)
    path = out / f"{stem}.csv"
    write_csv(ds, path)
    return [path]


def cmd_sweep(cfg: SweepConfig, args, out: Path, stem: str) -> list[Path]:
    if args.seed is not None:
        cfg = cfg.model_copy(update={"master_seed": args.seed})
    cfg = cfg.model_copy(update={"dgp": calibrate_spec(cfg.dgp)})
    if isinstance(cfg.dgp, (LinearInteraction, ExcludedInstrumentDgp)):
        result = bias_sweep(cfg, threads=args.threads)
    else:
        result = run_experiment(cfg, threads=args.threads)
    return _emit_all(result, args.formats, out, stem)


def cmd_semisynth(cfg: SemisynthConfig, args, out: Path, stem: str) -> list[Path]:
    seed = args.seed if args.seed is not None else cfg.master_seed
    table = semisynth(cfg.dgps, cfg.instrument, cfg.n_per_rep, cfg.replications, seed,
                      threads=args.threads, ape_draws=cfg.ape_draws)
    print(f"{'dgp':<14}{'alpha1':>12}{'mean':>12}{'ci_lo':>12}{'ci_hi':>12}{'ols':>12}  rejects")
    for row in table.rows:
        alpha = f"{row.alpha1:.6g}" if row.alpha1 is not None else "-"
        print(f"{row.dgp:<14}{alpha:>12}{row.mean_theta:>12.4f}{row.ci_lo:>12.4f}{row.ci_hi:>12.4f}"
              f"{row.mean_ols:>12.4f}  {row.rejects_truth}")
    return _emit_all(table, args.formats, out, stem)


def cmd_audit(cfg: AuditConfig, args, out: Path, stem: str) -> list[Path]:
    if cfg.data is not None:
        ds = read_csv(Path(args.config).parent / cfg.data, cfg.roles)
    else:
        sim = cfg.simulate
        seed = args.seed if args.seed is not None else sim.seed
        ds = simulate(calibrate_spec(sim.dgp), sim.n, seed)
    table = transform_audit(ds, cfg.instrument, cfg.transforms, cfg.standardize)
    for row in table.rows:
        if row.status == "ok":
            print(f"{row.transform.value:<14}{row.theta_hat:>12.4f}  ({row.ci_lo:.4f}, {row.ci_hi:.4f})")
        else:
            print(f"{row.transform.value:<14}{row.status:>12}  {row.message}")
    return _emit_all(table, args.formats, out, stem)


def cmd_calibrate(cfg: CalibrateConfig, args, out: Path, stem: str) -> list[Path]:
    if any(f != "json" for f in args.formats):
        raise errors.ConfigError("calibrate writes json only")
    results = []
    for model in cfg.models:
        problem = problem_for_model(
            model, cfg.sigma, cfg.first_stage_interact, cfg.x_mean, tolerance=cfg.tolerance, quad_nodes=cfg.quad_nodes
        )
        result = calibrate_alpha(problem)
        print(f"{model.value:<14} alpha1 = {result.alpha1:.12g}  residual = {result.residual:.3e}")
        results.append(result)
    path = out / f"{stem}.json"
    try:
        path.write_text(CalibrationTable(results=results).model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise errors.IoError(f"cannot write {path}: {exc}") from exc
    return [path]


def run_diagnose(cfg: DiagnoseConfig) -> DiagnoseReport:
    ds = simulate(calibrate_spec(cfg.dgp), cfg.n, cfg.seed)
    f_perp = residualize(build_instrument(cfg.instrument, ds), add_intercept(ds.x))
    saturation = saturation_test(f_perp, ds.x, cfg.bins)

    rng = np.random.default_rng(cfg.seed)
    failures, ok = [], 0
    for k in range(cfg.fkg_pairs):
        result = fkg_check(random_monotone(rng), random_monotone(rng), cfg.fkg_draws, mix_seed(cfg.seed, k))
        if result.sign_ok:
            ok += 1
        else:
            failures.append(result)

    excluded = cfg.witness.model_copy(update={"instrument": ExcludedColumn()})
    return DiagnoseReport(
        saturation=saturation,
        fkg_pairs=cfg.fkg_pairs,
        fkg_sign_ok=ok,
        fkg_failures=failures,
        witness=find_sign_violation(cfg.witness),
        excluded_witness=find_sign_violation(excluded),
    )


def cmd_diagnose(cfg: DiagnoseConfig, args, out: Path, stem: str) -> list[Path]:
    if any(f != "json" for f in args.formats):
        raise errors.ConfigError("diagnose writes json only")
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    report = run_diagnose(cfg)
    sat = report.saturation
    print(f"saturation: max |t| = {sat.stat:.3f} over {sat.cells} cells -> {'pass' if sat.passed else 'FAIL'}")
    print(f"fkg: {report.fkg_sign_ok}/{report.fkg_pairs} pairs with the expected covariance sign")
    if report.witness is not None:
        print(f"sign violation: theta_iv = {report.witness.theta_iv:.6g} with monotone outcomes")
    else:
        print("sign violation: none found")
    print(f"excluded-instrument family: {'violation found' if report.excluded_witness else 'no violation'}")
    path = out / f"{stem}.json"
    try:
        path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise errors.IoError(f"cannot write {path}: {exc}") from exc
    return [path]


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "semisynth": cmd_semisynth,
    "audit": cmd_audit,
    "calibrate": cmd_calibrate,
    "diagnose": cmd_diagnose,
}


# -------------------------------------------------------------------------
# Parser
# -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ivforge", description="IV estimation with covariate-built instruments")
    parser.add_argument("--schema", action="store_true", help="print the JSON schema of every config and exit")
    sub = parser.add_subparsers(dest="command")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default="out", help="output directory (created if missing)")
        p.add_argument("--format", dest="formats", action="append", choices=["csv", "json", "svg"])
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--verbose", "-v", action="store_true")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.schema:
        print(json.dumps(schemas(), indent=2))
        return 0
    if args.command is None:
        parser.print_help()
        return 2

    setup_logging(args.verbose)
    args.formats = args.formats or DEFAULT_FORMATS[args.command]

    try:
        args.threads = args.threads if args.threads is not None else default_threads()
        if args.threads < 1:
            raise errors.ConfigError("--threads must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise errors.ConfigError("--seed must be non-negative")
        cfg = load_config(args.config, CONFIGS[args.command])
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise errors.IoError(f"cannot create output directory {out}: {exc}") from exc
        written = COMMANDS[args.command](cfg, args, out, Path(args.config).stem)
    except errors.IvForgeException as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except pydantic.ValidationError as exc:
        logger.error("invalid configuration: %s", exc)
        return 2

    for path in written:
        logger.info("output: %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
