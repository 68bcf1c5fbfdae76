"""Replication engine.

`run_experiment` draws R datasets from one DGP, estimates each by 2SLS and
summarizes the replication distribution. Every replication seeds its own
generator with `mix_seed(master_seed, rep, grid)` and results are reduced in
replication order, so reports are identical for any worker count.

`bias_sweep` repeats an experiment over a grid of interaction coefficients,
`semisynth` calibrates and runs the index models side by side, and
`transform_audit` re-estimates one observed dataset under several covariate
transforms.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Literal, Optional

import numpy as np
import pydantic

from . import errors
from .basetypes import (
    BaseDgp,
    DgpSpec,
    ExcludedInstrumentDgp,
    ExperimentConfig,
    InstrumentSpec,
    LinearInteraction,
    TransformId,
)
from .calibration import calibrate_spec
from .data_model import Dataset
from .dgp import average_partial_effect, build_dgp
from .estimator import ols, tsls
from .utils import default_threads, mix_seed

logger = logging.getLogger("ivforge.montecarlo")

UNIDENTIFIED_WARN_SHARE = 0.01
DEFAULT_RHO_GRID = [float(r) for r in np.linspace(-3.0, 3.0, 13)]


class Summary(pydantic.BaseModel):
    mean_theta: float
    rep_sd: float
    mc_se: float
    ci_lo: float
    ci_hi: float
    rejects_truth: bool
    identified_count: int
    unidentified_count: int
    weak_count: int = 0
    warning: Optional[str] = None


class SimulationReport(pydantic.BaseModel):
    config: ExperimentConfig
    rho: Optional[float] = None
    per_rep_theta: list[float]
    rep_index: list[int]
    unidentified_reps: list[int] = []
    per_rep_ols: Optional[list[float]] = None
    summary: Summary


class SweepResult(pydantic.BaseModel):
    config: ExperimentConfig
    points: list[SimulationReport]


def summarize(thetas: list[float], truth: float, unidentified: int, weak: int = 0) -> Summary:
    values = np.asarray(thetas, dtype=np.float64)
    r = values.shape[0]
    rep_sd = float(np.std(values, ddof=1)) if r > 1 else 0.0
    lo, hi = (float(q) for q in np.percentile(values, [2.5, 97.5]))
    total = r + unidentified
    warning = None
    if unidentified > UNIDENTIFIED_WARN_SHARE * total:
        warning = f"{unidentified} of {total} replications were unidentified and excluded"
    return Summary(
        mean_theta=float(np.mean(values)),
        rep_sd=rep_sd,
        mc_se=rep_sd / np.sqrt(r),
        ci_lo=lo,
        ci_hi=hi,
        rejects_truth=not (lo <= truth <= hi),
        identified_count=r,
        unidentified_count=unidentified,
        weak_count=weak,
        warning=warning,
    )


def _rho_of(spec: DgpSpec) -> Optional[float]:
    for field in ("rho_interact", "rho_target"):
        if hasattr(spec, field):
            return float(getattr(spec, field))
    return None


def run_experiment(
    cfg: ExperimentConfig,
    threads: Optional[int] = None,
    grid: int = 0,
    dgp: Optional[BaseDgp] = None,
    with_ols: bool = False,
) -> SimulationReport:
    """Run cfg.replications independent draw-and-estimate replications."""
    dgp = dgp if dgp is not None else build_dgp(cfg.dgp)
    threads = threads or default_threads()

    def replicate(rep: int):
        rng = np.random.default_rng(mix_seed(cfg.master_seed, rep, grid))
        ds = dgp.draw(cfg.n_per_rep, rng)
        try:
            est = tsls(ds, cfg.instrument, cfg.transform)
        except (errors.Unidentified, errors.RankDeficient) as exc:
            logger.debug("replication %d unidentified: %s", rep, exc)
            return rep, None, False, None
        naive = ols(ds, cfg.transform) if with_ols else None
        return rep, est.theta_hat, est.weak, naive

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(replicate, range(cfg.replications)))

    thetas = [theta for _, theta, _, _ in results if theta is not None]
    reps = [rep for rep, theta, _, _ in results if theta is not None]
    failed = [rep for rep, theta, _, _ in results if theta is None]
    weak = sum(1 for _, theta, is_weak, _ in results if theta is not None and is_weak)
    if not thetas:
        raise errors.AllUnidentified(f"all {cfg.replications} replications were unidentified")
    if failed:
        logger.warning("%d of %d replications unidentified", len(failed), cfg.replications)
    if weak:
        logger.info("%d replications had a weak first stage (F < 10)", weak)

    summary = summarize(thetas, cfg.truth_theta, len(failed), weak)
    logger.info(
        "experiment %s: R=%d n=%d mean=%.6g mc_se=%.3g ci=(%.4g, %.4g)",
        cfg.dgp.kind, cfg.replications, cfg.n_per_rep, summary.mean_theta, summary.mc_se,
        summary.ci_lo, summary.ci_hi,
    )
    return SimulationReport(
        config=cfg,
        rho=_rho_of(cfg.dgp),
        per_rep_theta=thetas,
        rep_index=reps,
        unidentified_reps=failed,
        per_rep_ols=[o for _, theta, _, o in results if theta is not None] if with_ols else None,
        summary=summary,
    )


def bias_sweep(cfg: ExperimentConfig, threads: Optional[int] = None) -> SweepResult:
    """One experiment per interaction coefficient in cfg.rho_grid."""
    if not isinstance(cfg.dgp, (LinearInteraction, ExcludedInstrumentDgp)):
        raise errors.InvalidSpec(f"bias sweeps vary rho_interact; {cfg.dgp.kind} has none")
    grid = cfg.rho_grid if cfg.rho_grid is not None else DEFAULT_RHO_GRID
    points = []
    for g, rho in enumerate(grid):
        spec = cfg.dgp.model_copy(update={"rho_interact": float(rho)})
        point_cfg = cfg.model_copy(update={"dgp": spec, "rho_grid": None})
        points.append(run_experiment(point_cfg, threads=threads, grid=g))
    return SweepResult(config=cfg, points=points)


# -------------------------------------------------------------------------
# Semi-synthetic exercise
# -------------------------------------------------------------------------

class SemisynthRow(pydantic.BaseModel):
    dgp: str
    alpha1: Optional[float]
    ape: float
    mean_theta: float
    ci_lo: float
    ci_hi: float
    rejects_truth: bool
    mean_ols: float
    unidentified_count: int


class SemisynthTable(pydantic.BaseModel):
    rows: list[SemisynthRow]
    reports: list[SimulationReport]


def semisynth(
    dgps: list[DgpSpec],
    instrument: InstrumentSpec,
    n_per_rep: int,
    replications: int,
    master_seed: int,
    threads: Optional[int] = None,
    ape_draws: int = 200_000,
) -> SemisynthTable:
    """Calibrate each index model to a unit average effect, then estimate by 2SLS."""
    rows, reports = [], []
    for g, spec in enumerate(dgps):
        spec = calibrate_spec(spec)
        cfg = ExperimentConfig(
            dgp=spec,
            instrument=instrument,
            n_per_rep=n_per_rep,
            replications=replications,
            master_seed=master_seed,
            truth_theta=1.0,
        )
        report = run_experiment(cfg, threads=threads, grid=g, with_ols=True)
        s = report.summary
        rows.append(SemisynthRow(
            dgp=spec.kind,
            alpha1=getattr(spec, "alpha1", None),
            ape=average_partial_effect(spec, ape_draws, mix_seed(master_seed, 0, 10_000 + g)),
            mean_theta=s.mean_theta,
            ci_lo=s.ci_lo,
            ci_hi=s.ci_hi,
            rejects_truth=s.rejects_truth,
            mean_ols=float(np.mean(report.per_rep_ols)),
            unidentified_count=s.unidentified_count,
        ))
        reports.append(report)
    return SemisynthTable(rows=rows, reports=reports)


# -------------------------------------------------------------------------
# Transform audit
# -------------------------------------------------------------------------

class AuditRow(pydantic.BaseModel):
    transform: TransformId
    status: Literal["ok", "domain_error", "unidentified"]
    theta_hat: Optional[float] = None
    se_robust: Optional[float] = None
    ci_lo: Optional[float] = None
    ci_hi: Optional[float] = None
    first_stage_f: Optional[float] = None
    message: str = ""


class AuditTable(pydantic.BaseModel):
    rows: list[AuditRow]
    standardized: bool = False
    scale: Optional[float] = None


def transform_audit(
    ds: Dataset,
    spec: InstrumentSpec,
    transforms: list[TransformId],
    standardize: bool = False,
) -> AuditTable:
    """Estimate the same IV model under each covariate transform.

    Per-row domain and identification failures are recorded in the row. With
    `standardize`, estimates and interval ends are divided by the robust SE of
    the untransformed (identity) specification.
    """
    rows = []
    for h in transforms:
        h = TransformId(h)
        try:
            est = tsls(ds, spec, h)
        except errors.DomainError as exc:
            rows.append(AuditRow(transform=h, status="domain_error", message=str(exc)))
            continue
        except (errors.Unidentified, errors.RankDeficient) as exc:
            rows.append(AuditRow(transform=h, status="unidentified", message=str(exc)))
            continue
        rows.append(AuditRow(
            transform=h,
            status="ok",
            theta_hat=est.theta_hat,
            se_robust=est.se_robust,
            ci_lo=est.ci95[0],
            ci_hi=est.ci95[1],
            first_stage_f=est.first_stage_f,
        ))

    if not standardize:
        return AuditTable(rows=rows)

    linear = next((r for r in rows if r.transform is TransformId.IDENTITY and r.status == "ok"), None)
    scale = linear.se_robust if linear is not None else tsls(ds, spec, TransformId.IDENTITY).se_robust
    if not scale > 0:
        raise errors.Unidentified("the identity specification has a zero standard error; cannot standardize")
    scaled = [
        r.model_copy(update={
            "theta_hat": r.theta_hat / scale,
            "ci_lo": r.ci_lo / scale,
            "ci_hi": r.ci_hi / scale,
        }) if r.status == "ok" else r
        for r in rows
    ]
    return AuditTable(rows=scaled, standardized=True, scale=scale)
