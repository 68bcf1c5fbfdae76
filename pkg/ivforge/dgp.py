"""Data-generating processes.

Each `DgpSpec` variant has a built counterpart implementing `BaseDgp`:
`build_dgp` turns a validated spec into an object that can draw any number of
datasets. Building is where one-off work happens (Cholesky factors, the
adversarial pilot fit), so replication loops build once and draw many times.

Variants drawn from the covariance spec share one core: (D0, X1, X2, eps) is
multivariate normal and the treatment carries a first-stage interaction
loading, D = D0 + kappa * (X1 * X2 - rho_pair). The loading leaves Cov(D, X_j)
unchanged and gives covariate-built instruments a relevant first stage.
"""
import dataclasses
import logging
import warnings
from typing import Optional

import numpy as np
from scipy import special, stats

from . import errors, numerics
from .basetypes import (
    Adversarial,
    BaseDgp,
    DgpSpec,
    ExcludedInstrumentDgp,
    Exponential,
    LinearInteraction,
    Logit,
    LogLinear,
    Probit,
    ProductInstrument,
    SigmaSpec,
    TransformInstrument,
)
from .data_model import Dataset
from .instruments import covariate_instrument
from .numerics import Matrix, Vector

logger = logging.getLogger("ivforge.dgp")

MIN_ROWS = 10
CONDITIONING_TOL = 1e-3


def _cholesky(sigma: SigmaSpec) -> Matrix:
    return np.linalg.cholesky(sigma.covariance())


def _draw_core(chol: Matrix, kappa: float, rho_pair: float, n: int, rng: np.random.Generator):
    """Draw (D, X, eps) with D = D0 + kappa * (X1 X2 - rho_pair)."""
    draws = rng.standard_normal((n, 4)) @ chol.T
    x = draws[:, 1:3]
    d = draws[:, 0] + kappa * (x[:, 0] * x[:, 1] - rho_pair)
    return d, x, draws[:, 3]


class _SigmaDgp(BaseDgp):
    spec: LinearInteraction | Adversarial | Probit | Exponential | Logit

    def __init__(self, spec) -> None:
        self.spec = spec
        self._chol = _cholesky(spec.sigma)

    def core(self, n: int, rng: np.random.Generator):
        s = self.spec
        return _draw_core(self._chol, s.first_stage_interact, s.sigma.rho_pair, n, rng)


# -------------------------------------------------------------------------
# Linear models
# -------------------------------------------------------------------------

class LinearInteractionModel(_SigmaDgp):
    constant_effect = True

    def draw(self, n: int, rng: np.random.Generator) -> Dataset:
        s = self.spec
        d, x, eps = self.core(n, rng)
        y = s.alpha + s.theta * d + s.pi1 * x[:, 0] + s.pi2 * x[:, 1] + s.rho_interact * x[:, 0] * x[:, 1] + eps
        return Dataset(y=y, d=d, x=x)

    def partial_effect(self, d: Vector, x: Matrix) -> Vector:
        return np.full(d.shape[0], self.spec.theta)


@dataclasses.dataclass(frozen=True)
class AdversarialModel:
    """Structural nuisance h(X) = X pi + g_rho * f(X) fitted on a pilot sample."""

    g_rho: float
    pi: Vector
    instrument: ProductInstrument | TransformInstrument
    projection: Vector  # coefficients of f on (1, X) in the pilot
    cov_dfperp: float
    var_fperp: float

    def structural(self, x: Matrix) -> Vector:
        return x @ self.pi + self.g_rho * covariate_instrument(self.instrument, x)


def fit_adversarial(
    theta: float,
    rho_target: float,
    pi,
    instrument: ProductInstrument | TransformInstrument,
    pilot: Dataset,
) -> AdversarialModel:
    """Choose g so that theta - theta_IV equals rho_target under the pilot's law.

    The IV estimand of Y = a + theta D + X pi + g f(X) + eps picks up
    g * Var(f_perp) / Cov(D, f_perp), hence g = -rho_target * Cov / Var.
    """
    pi = numerics.as_vector(pi, "pi")
    if pi.shape[0] != pilot.n_covariates:
        raise errors.InvalidSpec(f"pi has {pi.shape[0]} entries for {pilot.n_covariates} covariates")
    if not isinstance(instrument, (ProductInstrument, TransformInstrument)):
        raise errors.InvalidSpec("the adversarial construction needs an instrument built from covariates")

    f = covariate_instrument(instrument, pilot.x)
    controls = numerics.add_intercept(pilot.x)
    projection = numerics.projection_coefficients(f, controls)
    f_perp = f - controls @ projection
    cov = numerics.sample_cov(pilot.d, f_perp)
    var = numerics.sample_var(f_perp)
    scale = float(np.std(pilot.d, ddof=1)) * float(np.std(f_perp, ddof=1))
    if var == 0.0 or cov == 0.0 or abs(cov) <= 1e-10 * scale:
        raise errors.Unidentified("pilot instrument is degenerate or irrelevant")
    if abs(cov) < CONDITIONING_TOL * scale:
        logger.warning("adversarial pilot: |cov(d, f_perp)| = %.3g is tiny, g(rho) is ill-conditioned", abs(cov))
        warnings.warn("adversarial coefficient is ill-conditioned", errors.ConditioningWarning, stacklevel=2)

    g_rho = -rho_target * cov / var
    logger.debug("adversarial fit: rho_target=%g g_rho=%.6g (theta=%g)", rho_target, g_rho, theta)
    return AdversarialModel(
        g_rho=float(g_rho),
        pi=pi,
        instrument=instrument,
        projection=projection,
        cov_dfperp=cov,
        var_fperp=var,
    )


class AdversarialDgp(_SigmaDgp):
    constant_effect = True
    spec: Adversarial

    def __init__(self, spec: Adversarial) -> None:
        super().__init__(spec)
        pilot_rng = np.random.default_rng(spec.pilot_seed)
        d, x, _ = self.core(spec.pilot_n, pilot_rng)
        pilot = Dataset(y=np.zeros(spec.pilot_n), d=d, x=x)
        self.model = fit_adversarial(spec.theta, spec.rho_target, spec.pi, spec.instrument, pilot)

    def draw(self, n: int, rng: np.random.Generator) -> Dataset:
        s = self.spec
        d, x, eps = self.core(n, rng)
        y = s.alpha + s.theta * d + self.model.structural(x) + eps
        return Dataset(y=y, d=d, x=x)

    def partial_effect(self, d: Vector, x: Matrix) -> Vector:
        return np.full(d.shape[0], self.spec.theta)


# -------------------------------------------------------------------------
# Index models, W = alpha1 D + X1 + X2
# -------------------------------------------------------------------------

class _IndexDgp(_SigmaDgp):
    constant_effect = False

    def __init__(self, spec) -> None:
        if spec.alpha1 is None:
            raise errors.InvalidSpec(f"{spec.kind} model has no alpha1; run calibration first")
        super().__init__(spec)

    def core(self, n: int, rng: np.random.Generator):
        # the loading uses the centred product, so the shift comes after it
        d, x, eps = super().core(n, rng)
        return d, x + self.spec.x_mean, eps

    def index(self, d: Vector, x: Matrix) -> Vector:
        return self.spec.alpha1 * d + x[:, 0] + x[:, 1]


class ProbitDgp(_IndexDgp):
    def draw(self, n: int, rng: np.random.Generator) -> Dataset:
        d, x, _ = self.core(n, rng)
        p = special.ndtr(self.index(d, x))
        y = (rng.random(n) < p).astype(np.float64)
        return Dataset(y=y, d=d, x=x)

    def partial_effect(self, d: Vector, x: Matrix) -> Vector:
        return self.spec.alpha1 * stats.norm.pdf(self.index(d, x))


class ExponentialDgp(_IndexDgp):
    def draw(self, n: int, rng: np.random.Generator) -> Dataset:
        d, x, eps = self.core(n, rng)
        return Dataset(y=np.exp(self.index(d, x)) + eps, d=d, x=x)

    def partial_effect(self, d: Vector, x: Matrix) -> Vector:
        return self.spec.alpha1 * np.exp(self.index(d, x))


class LogitDgp(_IndexDgp):
    def draw(self, n: int, rng: np.random.Generator) -> Dataset:
        d, x, _ = self.core(n, rng)
        p = special.expit(self.index(d, x))
        y = (rng.random(n) < p).astype(np.float64)
        return Dataset(y=y, d=d, x=x)

    def partial_effect(self, d: Vector, x: Matrix) -> Vector:
        p = special.expit(self.index(d, x))
        return self.spec.alpha1 * p * (1.0 - p)


# -------------------------------------------------------------------------
# Log-linear model with Gamma covariates
# -------------------------------------------------------------------------

class LogLinearDgp(BaseDgp):
    """X_k = G_k + sqrt(rho) Z, D = delta + sqrt(rho) Z + kappa (X1 X2 - E[X1 X2]).

    Rows where a covariate is not positive are redrawn so log X_k is defined.
    """

    constant_effect = True
    spec: LogLinear

    def __init__(self, spec: LogLinear) -> None:
        self.spec = spec
        v = spec.gamma_var - spec.rho_latent
        self._shape = spec.gamma_mean ** 2 / v
        self._scale = v / spec.gamma_mean
        self._root_rho = np.sqrt(spec.rho_latent)
        self._sd_delta = np.sqrt(spec.sigma_d2 - spec.rho_latent)
        self._mean_product = spec.gamma_mean ** 2 + spec.rho_latent

    def _latent_rows(self, n: int, rng: np.random.Generator):
        common = rng.standard_normal(n)
        g = rng.gamma(self._shape, self._scale, size=(n, 2))
        x = g + self._root_rho * common[:, None]
        delta = rng.normal(0.0, self._sd_delta, size=n)
        return x, delta + self._root_rho * common

    def draw(self, n: int, rng: np.random.Generator) -> Dataset:
        s = self.spec
        xs, ds = [], []
        kept, drawn = 0, 0
        while kept < n:
            batch = max(n - kept, MIN_ROWS)
            x, d = self._latent_rows(batch, rng)
            drawn += batch
            ok = np.all(x > 0.0, axis=1)
            take = np.flatnonzero(ok)[: n - kept]
            xs.append(x[take])
            ds.append(d[take])
            kept += take.shape[0]
        x = np.concatenate(xs)
        d = np.concatenate(ds) + s.first_stage_interact * (x[:, 0] * x[:, 1] - self._mean_product)
        if drawn > n:
            logger.debug("log-linear draw: redraw rate %.4f (%d extra rows)", (drawn - n) / drawn, drawn - n)
        eps = rng.normal(0.0, np.sqrt(s.sigma_eps2), size=n)
        y = d + s.pi1 * np.log(x[:, 0]) + s.pi2 * np.log(x[:, 1]) + eps
        return Dataset(y=y, d=d, x=x)

    def redraw_rate(self, n: int, seed: int) -> float:
        """Share of latent rows rejected for a non-positive covariate."""
        x, _ = self._latent_rows(n, np.random.default_rng(seed))
        return float(np.mean(~np.all(x > 0.0, axis=1)))

    def partial_effect(self, d: Vector, x: Matrix) -> Vector:
        return np.ones(d.shape[0])


# -------------------------------------------------------------------------
# Excluded-instrument benchmark
# -------------------------------------------------------------------------

class ExcludedInstrumentModel(BaseDgp):
    """D = gamma_z Z + rho_pair (X1 + X2) + nu with Corr(eps, nu) = endog_corr."""

    constant_effect = True
    spec: ExcludedInstrumentDgp

    def __init__(self, spec: ExcludedInstrumentDgp) -> None:
        self.spec = spec
        sig = spec.sigma
        self._chol_x = np.linalg.cholesky(np.array([
            [sig.sigma_x1_2, sig.rho_pair],
            [sig.rho_pair, sig.sigma_x2_2],
        ]))
        sd_eps, sd_nu = np.sqrt(sig.sigma_eps2), np.sqrt(sig.sigma_d2)
        c = spec.endog_corr * sd_eps * sd_nu
        self._chol_err = np.linalg.cholesky(np.array([[sig.sigma_eps2, c], [c, sig.sigma_d2]]))

    def draw(self, n: int, rng: np.random.Generator) -> Dataset:
        s = self.spec
        x = rng.standard_normal((n, 2)) @ self._chol_x.T
        z = rng.standard_normal(n)
        err = rng.standard_normal((n, 2)) @ self._chol_err.T
        eps, nu = err[:, 0], err[:, 1]
        d = s.gamma_z * z + s.sigma.rho_pair * (x[:, 0] + x[:, 1]) + nu
        y = s.alpha + s.theta * d + s.pi1 * x[:, 0] + s.pi2 * x[:, 1] + s.rho_interact * x[:, 0] * x[:, 1] + eps
        return Dataset(y=y, d=d, x=x, z=z[:, None])

    def partial_effect(self, d: Vector, x: Matrix) -> Vector:
        return np.full(d.shape[0], self.spec.theta)


# -------------------------------------------------------------------------
# Entry points
# -------------------------------------------------------------------------

_BUILDERS = {
    LinearInteraction: LinearInteractionModel,
    Adversarial: AdversarialDgp,
    Probit: ProbitDgp,
    Exponential: ExponentialDgp,
    Logit: LogitDgp,
    LogLinear: LogLinearDgp,
    ExcludedInstrumentDgp: ExcludedInstrumentModel,
}


def build_dgp(spec: DgpSpec) -> BaseDgp:
    try:
        builder = _BUILDERS[type(spec)]
    except KeyError:
        raise errors.InvalidSpec(f"unknown DGP spec {type(spec).__name__}") from None
    return builder(spec)


def simulate(spec: DgpSpec, n: int, seed: int, dgp: Optional[BaseDgp] = None) -> Dataset:
    """Draw n rows of `spec` from a PCG64 stream seeded with `seed`."""
    if n < MIN_ROWS:
        raise errors.InvalidSpec(f"need at least {MIN_ROWS} rows, got {n}")
    dgp = dgp if dgp is not None else build_dgp(spec)
    return dgp.draw(n, np.random.default_rng(seed))


def average_partial_effect(spec: DgpSpec, draws: int, seed: int) -> float:
    """Monte Carlo mean of dE[Y | D, X]/dD; exact for constant-effect models."""
    dgp = build_dgp(spec)
    if dgp.constant_effect:
        return float(dgp.partial_effect(np.zeros(1), np.zeros((1, 2)))[0])
    ds = simulate(spec, draws, seed, dgp=dgp)
    return float(np.mean(dgp.partial_effect(ds.d, ds.x)))
