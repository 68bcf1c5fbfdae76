"""Linear IV estimation.

`iv_ratio` is the covariance-ratio form of the estimand on an already
residualized instrument. `tsls` runs the full two-stage regression of the
analyst model

    Y = a + theta * D + pi' h(X) + e

with one instrument built from the covariates (or an excluded column), and
reports HC1 standard errors. `corollary_bias` and `nonlinearity_bias` give the
plug-in bias theta - theta_IV when the structural function carries a known
nonlinear term that the linear model omits.
"""
import dataclasses
import logging
import warnings

import numpy as np

from . import errors, numerics
from .basetypes import InstrumentSpec, ProductInstrument, TransformId
from .data_model import Dataset
from .instruments import (
    build_instrument,
    check_relevance,
    controls_for,
    hc1_covariance,
    saturation_on_controls,
)
from .numerics import Vector

logger = logging.getLogger("ivforge.estimator")

Z95 = 1.959964
REL_TOL = 1e-10
WEAK_F = 10.0


@dataclasses.dataclass(frozen=True)
class IvEstimate:
    theta_hat: float
    coeffs: Vector  # intercept followed by the h(X) coefficients
    se_robust: float
    ci95: tuple[float, float]
    var_fperp: float
    cov_dfperp: float
    n: int
    first_stage_f: float

    @property
    def weak(self) -> bool:
        return self.first_stage_f < WEAK_F


def _relevance_tol(d: Vector, f_perp: Vector) -> float:
    return REL_TOL * float(np.std(d, ddof=1)) * float(np.std(f_perp, ddof=1))


def iv_ratio(y, d, f_perp) -> float:
    """Cov(y, f_perp) / Cov(d, f_perp)."""
    y = numerics.as_vector(y, "outcome")
    d = numerics.as_vector(d, "treatment")
    f_perp = numerics.as_vector(f_perp, "residualized instrument")
    cov_d = numerics.sample_cov(d, f_perp)
    if abs(cov_d) <= _relevance_tol(d, f_perp):
        raise errors.Unidentified(f"instrument is irrelevant: cov(d, f_perp) = {cov_d:g}")
    return numerics.sample_cov(y, f_perp) / cov_d


def tsls(
    ds: Dataset,
    spec: InstrumentSpec | None = None,
    h: TransformId | str = TransformId.IDENTITY,
) -> IvEstimate:
    """Two-stage least squares of y on (1, d, h(X)) instrumenting d with f."""
    spec = spec if spec is not None else ProductInstrument()
    f = build_instrument(spec, ds)
    controls = controls_for(ds.x, h)

    saturation, f_perp = saturation_on_controls(f, controls)
    if saturation.degenerate:
        raise errors.Unidentified(
            f"instrument is a linear function of the controls (var(f_perp)={saturation.var_fperp:g})"
        )
    relevance = check_relevance(ds.d, f_perp)
    if abs(relevance.cov_dfperp) <= _relevance_tol(ds.d, f_perp):
        raise errors.Unidentified(f"instrument is irrelevant: cov(d, f_perp) = {relevance.cov_dfperp:g}")

    # first stage: d on (1, f, h(X))
    first = np.column_stack([controls[:, 0], f, controls[:, 1:]])
    d_hat = first @ numerics.solve_least_squares(first, ds.d)

    # second stage: y on (1, d_hat, h(X)); residuals use the actual d
    x_hat = np.column_stack([controls[:, 0], d_hat, controls[:, 1:]])
    beta = numerics.solve_least_squares(x_hat, ds.y)
    x_obs = np.column_stack([controls[:, 0], ds.d, controls[:, 1:]])
    resid = ds.y - x_obs @ beta

    cov = hc1_covariance(x_hat, resid)
    se = float(np.sqrt(max(cov[1, 1], 0.0)))
    theta = float(beta[1])

    if relevance.first_stage_f < WEAK_F:
        logger.debug("weak first stage: F = %.3g", relevance.first_stage_f)
        warnings.warn(
            f"weak first stage (F = {relevance.first_stage_f:.3g} < {WEAK_F:g})",
            errors.WeakInstrumentWarning,
            stacklevel=2,
        )

    return IvEstimate(
        theta_hat=theta,
        coeffs=np.delete(beta, 1),
        se_robust=se,
        ci95=(theta - Z95 * se, theta + Z95 * se),
        var_fperp=saturation.var_fperp,
        cov_dfperp=relevance.cov_dfperp,
        n=ds.n,
        first_stage_f=relevance.first_stage_f,
    )


def ols(ds: Dataset, h: TransformId | str = TransformId.IDENTITY) -> float:
    """Naive OLS coefficient on d in y ~ (1, d, h(X))."""
    controls = controls_for(ds.x, h)
    design = np.column_stack([controls[:, 0], ds.d, controls[:, 1:]])
    return float(numerics.solve_least_squares(design, ds.y)[1])


def nonlinearity_bias(
    ds: Dataset,
    nonlinear_part,
    spec: InstrumentSpec | None = None,
    h: TransformId | str = TransformId.IDENTITY,
) -> float:
    """Plug-in theta - theta_IV when the outcome carries an omitted term.

    `nonlinear_part` is the value of the omitted structural component at each
    row of `ds`. The IV estimand picks it up through Cov(nonlinear, f_perp),
    so theta - theta_IV = -Cov(nonlinear, f_perp) / Cov(d, f_perp).
    """
    spec = spec if spec is not None else ProductInstrument()
    nonlinear_part = numerics.as_vector(nonlinear_part, "nonlinear part")
    if nonlinear_part.shape[0] != ds.n:
        raise errors.LengthMismatch(f"nonlinear part has {nonlinear_part.shape[0]} rows, dataset has {ds.n}")
    saturation, f_perp = saturation_on_controls(build_instrument(spec, ds), controls_for(ds.x, h))
    if saturation.degenerate:
        raise errors.Unidentified(
            f"instrument is a linear function of the controls on the pilot (var(f_perp)={saturation.var_fperp:g})"
        )
    cov_d = numerics.sample_cov(ds.d, f_perp)
    if abs(cov_d) <= _relevance_tol(ds.d, f_perp):
        raise errors.Unidentified(f"instrument is irrelevant on the pilot: cov(d, f_perp) = {cov_d:g}")
    return -numerics.sample_cov(nonlinear_part, f_perp) / cov_d


def corollary_bias(ds_pilot: Dataset, rho: float, spec: ProductInstrument | None = None) -> float:
    """theta - theta_IV for Y linear in (D, X) plus rho * X_i * X_j.

    Equals -rho * Var(f_perp) / Cov(d, f_perp) with f = X_i * X_j
    residualized on (1, X).
    """
    spec = spec if spec is not None else ProductInstrument()
    if not isinstance(spec, ProductInstrument):
        raise errors.InvalidSpec("corollary bias is defined for product instruments only")
    product = build_instrument(spec, ds_pilot)
    return nonlinearity_bias(ds_pilot, rho * product, spec)
