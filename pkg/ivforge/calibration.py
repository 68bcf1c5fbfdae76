"""Calibration of alpha1 so that the average partial effect of D is one.

For an index model Y = g(W) (+ noise) with W = alpha1 * D + X1 + X2 the
average partial effect is alpha1 * E[g'(W)]. The calibrated alpha1 is the root
of r(alpha1) = alpha1 * E[g'(W(alpha1))] - 1, found by bracketed bisection.

When D is Gaussian given nothing else, W is Gaussian with mean
E[X1] + E[X2] and variance a * alpha1^2 + c * alpha1 + b, and E[g'(W)] is a
1-D Gauss-Hermite sum. When D carries the first-stage interaction loading, W
is no longer Gaussian and the expectation is taken by nested quadrature over X
and then D | X.
"""
import enum
import logging
from typing import Optional

import numpy as np
import pydantic
from numpy.polynomial.hermite import hermgauss
from scipy import special, stats

from . import errors
from .basetypes import INDEX_MODELS, Exponential, Logit, Probit, SigmaSpec

logger = logging.getLogger("ivforge.calibration")

QUAD_NODES = 64
TOLERANCE = 1e-8
BRACKET = (1e-6, 8.0)
MAX_ALPHA = 64.0
MAX_ITER = 200


class GModel(str, enum.Enum):
    PROBIT = "probit"
    EXPONENTIAL = "exponential"
    LOGIT = "logit"
    LINEAR_IDENTITY = "linear_identity"


def g_prime(model: GModel | str, w):
    model = GModel(model)
    w = np.asarray(w, dtype=np.float64)
    if model is GModel.PROBIT:
        return stats.norm.pdf(w)
    if model is GModel.EXPONENTIAL:
        return np.exp(w)
    if model is GModel.LOGIT:
        p = special.expit(w)
        return p * (1.0 - p)
    return np.ones_like(w)


def _gauss_expect(model: GModel, w_mean, w_variance: float, quad_nodes: int):
    """E[g'(W)] for W ~ N(w_mean, w_variance); w_mean may be an array."""
    w_mean = np.asarray(w_mean, dtype=np.float64)
    if w_variance == 0.0:
        return g_prime(model, w_mean)
    nodes, weights = hermgauss(quad_nodes)
    points = w_mean[..., None] + np.sqrt(2.0 * w_variance) * nodes
    # exp overflows to inf where the expectation itself diverges
    with np.errstate(over="ignore"):
        return g_prime(model, points) @ weights / np.sqrt(np.pi)


def expected_gprime(
    model: GModel | str,
    w_variance: float,
    quad_nodes: int = QUAD_NODES,
    w_mean: float = 0.0,
) -> float:
    """E[g'(W)] for Gaussian W by Gauss-Hermite quadrature."""
    model = GModel(model)
    if not w_variance > 0:
        raise errors.InvalidSpec(f"W variance must be positive, got {w_variance}")
    if model is GModel.LINEAR_IDENTITY:
        return 1.0
    return float(_gauss_expect(model, w_mean, w_variance, quad_nodes))


def expected_gprime_joint(
    model: GModel | str,
    alpha1: float,
    sigma: SigmaSpec,
    kappa: float,
    quad_nodes: int = QUAD_NODES,
    w_mean: float = 0.0,
) -> float:
    """E[g'(W)] for W = w_mean + alpha1 * (D0 + kappa * (X1 X2 - rho)) + X1 + X2.

    X1 and X2 are centred here; `w_mean` carries their means. The outer 2-D
    quadrature runs over X ~ N(0, Sigma_x); given X the treatment
    noise D0 is N(beta'X, s2), so the inner expectation is Gaussian again.
    """
    model = GModel(model)
    if model is GModel.LINEAR_IDENTITY:
        return 1.0
    cov = sigma.covariance()[:3, :3]
    sigma_x = cov[1:, 1:]
    sigma_xd = cov[1:, 0]
    beta = np.linalg.solve(sigma_x, sigma_xd)
    s2 = max(float(cov[0, 0] - sigma_xd @ beta), 0.0)

    nodes, weights = hermgauss(quad_nodes)
    u1, u2 = np.meshgrid(nodes, nodes, indexing="ij")
    w2 = np.outer(weights, weights).ravel() / np.pi
    x = np.sqrt(2.0) * np.column_stack([u1.ravel(), u2.ravel()]) @ np.linalg.cholesky(sigma_x).T

    d_mean = x @ beta + kappa * (x[:, 0] * x[:, 1] - sigma.rho_pair)
    inner_mean = w_mean + alpha1 * d_mean + x[:, 0] + x[:, 1]
    inner = _gauss_expect(model, inner_mean, alpha1 * alpha1 * s2, quad_nodes)
    return float(inner @ w2)


class CalibrationProblem(pydantic.BaseModel):
    """Var(W) = a * alpha1^2 + c * alpha1 + b, or the joint law when sigma is set."""

    model: GModel
    a: float = pydantic.Field(1.0, gt=0)
    c: float = 0.0
    b: float = pydantic.Field(0.0, ge=0)
    sigma: Optional[SigmaSpec] = None
    kappa: float = 0.0
    w_mean: float = 0.0
    tolerance: float = pydantic.Field(TOLERANCE, gt=0)
    bracket: tuple[float, float] = BRACKET
    max_alpha: float = MAX_ALPHA
    quad_nodes: int = pydantic.Field(QUAD_NODES, ge=2)

    @pydantic.field_validator("bracket")
    @classmethod
    def _positive_bracket(cls, bracket: tuple[float, float]) -> tuple[float, float]:
        lo, hi = bracket
        if not 0 < lo < hi:
            raise ValueError("bracket must satisfy 0 < lo < hi")
        return bracket

    @classmethod
    def from_sigma(
        cls, model: GModel | str, sigma: SigmaSpec, kappa: float = 0.0, x_mean: float = 0.0, **kwargs
    ) -> "CalibrationProblem":
        r = sigma.rho_pair
        return cls(
            model=GModel(model),
            a=sigma.sigma_d2,
            c=4.0 * r,
            b=sigma.sigma_x1_2 + sigma.sigma_x2_2 + 2.0 * r,
            sigma=sigma if kappa != 0.0 else None,
            kappa=kappa,
            w_mean=2.0 * x_mean,
            **kwargs,
        )

    def w_variance(self, alpha1: float) -> float:
        return self.a * alpha1 * alpha1 + self.c * alpha1 + self.b

    def expected_gprime(self, alpha1: float) -> float:
        if self.sigma is not None and self.kappa != 0.0:
            return expected_gprime_joint(self.model, alpha1, self.sigma, self.kappa, self.quad_nodes, self.w_mean)
        return expected_gprime(self.model, self.w_variance(alpha1), self.quad_nodes, self.w_mean)

    def residual(self, alpha1: float) -> float:
        return alpha1 * self.expected_gprime(alpha1) - 1.0


class CalibrationResult(pydantic.BaseModel):
    model: GModel
    alpha1: float
    residual: float
    iterations: int
    bracket: tuple[float, float]


def calibrate_alpha(problem: CalibrationProblem) -> CalibrationResult:
    """Solve alpha1 * E[g'(W(alpha1))] = 1 by bisection on the bracket."""
    if problem.model is GModel.LINEAR_IDENTITY:
        return CalibrationResult(model=problem.model, alpha1=1.0, residual=0.0, iterations=0, bracket=(1.0, 1.0))

    lo, hi = problem.bracket
    r_lo, r_hi = problem.residual(lo), problem.residual(hi)
    while np.sign(r_lo) == np.sign(r_hi) and hi < problem.max_alpha:
        hi = min(2.0 * hi, problem.max_alpha)
        logger.info("calibration bracket expanded to (%g, %g)", lo, hi)
        r_hi = problem.residual(hi)
    if r_lo == 0.0:
        return CalibrationResult(model=problem.model, alpha1=lo, residual=0.0, iterations=0, bracket=(lo, hi))
    if np.sign(r_lo) == np.sign(r_hi):
        raise errors.NoRoot(
            (lo, hi),
            f"{problem.model.value}: alpha1 * E[g'(W)] - 1 keeps sign {np.sign(r_lo):+.0f} on ({lo:g}, {hi:g}); "
            "a unit average effect is unreachable with this covariance",
        )

    bracket = (lo, hi)
    mid, r_mid = lo, r_lo
    for it in range(1, MAX_ITER + 1):
        mid = 0.5 * (lo + hi)
        r_mid = problem.residual(mid)
        if abs(r_mid) < problem.tolerance or hi - lo < 1e-15 * hi:
            break
        if np.sign(r_mid) == np.sign(r_lo):
            lo, r_lo = mid, r_mid
        else:
            hi = mid
    if abs(r_mid) >= problem.tolerance:
        raise errors.NoRoot(
            bracket,
            f"{problem.model.value}: bisection stopped at alpha1={mid:.12g} with residual {r_mid:.3g} "
            f"above the tolerance {problem.tolerance:g} after {it} steps",
        )
    logger.debug("calibrated %s: alpha1=%.12g residual=%.3g after %d steps", problem.model.value, mid, r_mid, it)
    return CalibrationResult(model=problem.model, alpha1=mid, residual=r_mid, iterations=it, bracket=bracket)


_SPEC_MODELS = {Probit: GModel.PROBIT, Exponential: GModel.EXPONENTIAL, Logit: GModel.LOGIT}
_MODEL_SPECS = {model: spec for spec, model in _SPEC_MODELS.items()}


def problem_for(spec: Probit | Exponential | Logit, **kwargs) -> CalibrationProblem:
    return CalibrationProblem.from_sigma(
        _SPEC_MODELS[type(spec)], spec.sigma, spec.first_stage_interact, spec.x_mean, **kwargs
    )


def problem_for_model(
    model: GModel | str,
    sigma: Optional[SigmaSpec] = None,
    first_stage_interact: Optional[float] = None,
    x_mean: Optional[float] = None,
    **kwargs,
) -> CalibrationProblem:
    """Problem for a model's default DGP, with any of its covariance fields overridden."""
    model = GModel(model)
    if model is GModel.LINEAR_IDENTITY:
        return CalibrationProblem(model=model, **kwargs)
    overrides = {"sigma": sigma, "first_stage_interact": first_stage_interact, "x_mean": x_mean}
    spec = _MODEL_SPECS[model](**{k: v for k, v in overrides.items() if v is not None})
    return problem_for(spec, **kwargs)


def calibrate_spec(spec):
    """Return `spec` with alpha1 filled in; other DGP specs pass through."""
    if not isinstance(spec, INDEX_MODELS):
        return spec
    result = calibrate_alpha(problem_for(spec))
    logger.info("calibrated %s model: alpha1 = %.10g (residual %.2e)", spec.kind, result.alpha1, result.residual)
    return spec.model_copy(update={"alpha1": result.alpha1})
