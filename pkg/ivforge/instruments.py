"""Instrument construction, covariate transforms and identification checks.

An instrument is built from the raw covariates (or from an excluded column)
and only then residualized on the controls, which are an intercept plus the
transformed covariates h(X). Saturation and relevance checks report on the
residualized instrument.
"""
import dataclasses
import logging

import numpy as np

from . import errors, numerics
from .basetypes import ExcludedColumn, InstrumentSpec, ProductInstrument, TransformId, TransformInstrument
from .data_model import Dataset
from .numerics import Matrix, Vector

logger = logging.getLogger("ivforge.instruments")

SAT_TOL = 1e-8
TANH_CLAMP = 280.0
F_CAP = 1e12


# -------------------------------------------------------------------------
# Transforms
# -------------------------------------------------------------------------

def _tanh_ratio(x: Matrix) -> Matrix:
    x = np.clip(x, -TANH_CLAMP, TANH_CLAMP)
    num = 2.0 * np.exp(2.0 * x) - 2.0 * np.exp(-2.0 * x)
    den = 2.5 * np.exp(2.5 * x) + 2.5 * np.exp(-2.5 * x)
    return num / den


def apply_transform(h: TransformId | str, x) -> Matrix:
    """Apply h column by column. Identity returns an exact copy."""
    h = TransformId(h)
    x = numerics.as_matrix(x, "covariates")
    if h is TransformId.IDENTITY:
        return x.copy()
    if h is TransformId.CENTERED_EXP:
        return np.exp(x - x.mean(axis=0))
    if h is TransformId.LOG1P:
        bad = np.argwhere(x <= -1.0)
        if bad.size:
            row, col = bad[0]
            raise errors.DomainError(h.value, int(row), int(col))
        return np.log1p(x)
    if h is TransformId.TANH_RATIO:
        return _tanh_ratio(x)
    raise errors.InvalidSpec(f"unknown transform {h!r}")


def controls_for(x, h: TransformId | str = TransformId.IDENTITY) -> Matrix:
    """Control design (1, h(X))."""
    return numerics.add_intercept(apply_transform(h, x))


# -------------------------------------------------------------------------
# Instruments
# -------------------------------------------------------------------------

def _check_columns(indices: list[int], available: int, what: str) -> None:
    for k in indices:
        if not 0 <= k < available:
            raise errors.IndexOutOfRange(f"{what} index {k} out of range (have {available})")


def covariate_instrument(spec: ProductInstrument | TransformInstrument, x) -> Vector:
    """Instrument f(X) computed from a covariate matrix alone."""
    x = numerics.as_matrix(x, "covariates")
    if isinstance(spec, ProductInstrument):
        _check_columns([spec.i, spec.j], x.shape[1], "covariate")
        return x[:, spec.i] * x[:, spec.j]

    if isinstance(spec, TransformInstrument):
        _check_columns(spec.columns, x.shape[1], "covariate")
        block = apply_transform(spec.h, x[:, spec.columns])
        if spec.combiner == "sum":
            return block.sum(axis=1)
        return block.prod(axis=1)

    raise errors.InvalidSpec(f"{type(spec).__name__} is not built from covariates")


def build_instrument(spec: InstrumentSpec, ds: Dataset) -> Vector:
    """Raw instrument column f(X, Z); residualization happens downstream."""
    if isinstance(spec, (ProductInstrument, TransformInstrument)):
        return covariate_instrument(spec, ds.x)

    if isinstance(spec, ExcludedColumn):
        if ds.z is None:
            raise errors.MissingExcluded("instrument uses an excluded column but the dataset has no z block")
        _check_columns([spec.m], ds.z.shape[1], "excluded")
        return ds.z[:, spec.m].copy()

    raise errors.InvalidSpec(f"unsupported instrument spec {spec!r}")


# -------------------------------------------------------------------------
# Diagnostics
# -------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class SaturationResult:
    var_fperp: float
    degenerate: bool


@dataclasses.dataclass(frozen=True)
class RelevanceResult:
    cov_dfperp: float
    first_stage_f: float


def saturation_on_controls(f, controls) -> tuple[SaturationResult, Vector]:
    """Saturation check against a ready-made control design (intercept included)."""
    f = numerics.as_vector(f, "instrument")
    f_perp = numerics.residualize(f, controls)
    var_f = numerics.sample_var(f)
    var_fperp = max(numerics.sample_var(f_perp), 0.0)
    degenerate = var_f == 0.0 or var_fperp < SAT_TOL * var_f
    if degenerate:
        logger.debug("instrument is saturated by the controls: var(f_perp)=%g, var(f)=%g", var_fperp, var_f)
    return SaturationResult(var_fperp, degenerate), f_perp


def check_saturation(f, x) -> SaturationResult:
    """Is f (numerically) a linear function of the covariates x?"""
    result, _ = saturation_on_controls(f, numerics.add_intercept(x))
    return result


def check_relevance(d, f_perp) -> RelevanceResult:
    """Covariance of d with f_perp and the HC1 first-stage F of d on (1, f_perp)."""
    d = numerics.as_vector(d, "treatment")
    f_perp = numerics.as_vector(f_perp, "residualized instrument")
    cov = numerics.sample_cov(d, f_perp)
    if numerics.sample_var(f_perp) == 0.0:
        return RelevanceResult(cov, 0.0)

    design = numerics.add_intercept(f_perp)
    beta = numerics.solve_least_squares(design, d)
    resid = d - design @ beta
    var = hc1_covariance(design, resid)
    se = float(np.sqrt(max(var[1, 1], 0.0)))
    if se == 0.0:
        stat = F_CAP if beta[1] != 0.0 else 0.0
    else:
        stat = min(float((beta[1] / se) ** 2), F_CAP)
    return RelevanceResult(cov, stat)


def hc1_covariance(design: Matrix, resid: Vector) -> Matrix:
    """HC1 sandwich n/(n-k) * (A'A)^-1 A' diag(u^2) A (A'A)^-1."""
    n, k = design.shape
    if n <= k:
        raise errors.RankDeficient(n, f"HC1 needs more than {k} rows, got {n}")
    bread = numerics.inverse_gram(design)
    meat = design.T @ (design * (resid ** 2)[:, None])
    return (n / (n - k)) * bread @ meat @ bread
