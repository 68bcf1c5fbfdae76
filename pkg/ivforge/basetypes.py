"""Abstract bases and serializable spec models.

This module defines the contracts and the configuration vocabulary shared by
the rest of the package:

- `BaseDgp`: the interface every data-generating process implements, so the
  replication engine can draw datasets without knowing which structural law
  is behind them.
- pydantic models for everything that lives in a JSON experiment config:
  instrument specs, covariate transforms, covariance specs, DGP variants and
  the experiment itself.

Discriminated unions (`kind` field) keep the JSON flat and unambiguous.
"""
import abc
import enum
import math
from typing import Annotated, Literal, Optional, Union

import numpy as np
import pydantic

from .errors import NonPositiveDefinite


# -------------------------------------------------------------------------
# Instruments and transforms
# -------------------------------------------------------------------------

class TransformId(str, enum.Enum):
    IDENTITY = "identity"
    CENTERED_EXP = "centered_exp"
    LOG1P = "log1p"
    TANH_RATIO = "tanh_ratio"


class ProductInstrument(pydantic.BaseModel):
    kind: Literal["product"] = "product"
    i: int = pydantic.Field(0, ge=0)
    j: int = pydantic.Field(1, ge=0)

    @pydantic.model_validator(mode="after")
    def _distinct(self) -> "ProductInstrument":
        if self.i == self.j:
            raise ValueError("product instrument needs two distinct covariates")
        return self


class TransformInstrument(pydantic.BaseModel):
    kind: Literal["transform"] = "transform"
    h: TransformId = TransformId.IDENTITY
    columns: list[Annotated[int, pydantic.Field(ge=0)]] = pydantic.Field(min_length=1)
    combiner: Literal["product", "sum"] = "product"


class ExcludedColumn(pydantic.BaseModel):
    kind: Literal["excluded"] = "excluded"
    m: int = pydantic.Field(0, ge=0)


InstrumentSpec = Annotated[
    Union[ProductInstrument, TransformInstrument, ExcludedColumn],
    pydantic.Field(discriminator="kind"),
]


# -------------------------------------------------------------------------
# Covariance of (D, X1, X2, eps)
# -------------------------------------------------------------------------

class SigmaSpec(pydantic.BaseModel):
    """Covariance of (D, X1, X2, eps) with a common off-diagonal between D, X1, X2."""

    sigma_d2: float = pydantic.Field(1.0, gt=0)
    sigma_x1_2: float = pydantic.Field(1.0, gt=0)
    sigma_x2_2: float = pydantic.Field(1.0, gt=0)
    rho_pair: float = 0.3
    sigma_eps2: float = pydantic.Field(1.0, gt=0)

    @pydantic.model_validator(mode="after")
    def _positive_definite(self) -> "SigmaSpec":
        try:
            np.linalg.cholesky(self.covariance())
        except np.linalg.LinAlgError:
            raise NonPositiveDefinite(f"covariance is not positive definite: {self.model_dump()}")
        return self

    def covariance(self) -> np.ndarray:
        r = self.rho_pair
        return np.array([
            [self.sigma_d2, r, r, 0.0],
            [r, self.sigma_x1_2, r, 0.0],
            [r, r, self.sigma_x2_2, 0.0],
            [0.0, 0.0, 0.0, self.sigma_eps2],
        ])


def semisynth_sigma() -> SigmaSpec:
    # Low-variance treatment: binary-outcome models can only reach a unit APE
    # when Var(D) is well below 1/(2*pi).
    return SigmaSpec(sigma_d2=0.05, sigma_x1_2=1.0, sigma_x2_2=1.0, rho_pair=0.1, sigma_eps2=1.0)


def narrow_sigma() -> SigmaSpec:
    # Tightly spread covariates that keep exp(W) from being heavy tailed.
    return SigmaSpec(sigma_d2=0.02, sigma_x1_2=0.25, sigma_x2_2=0.25, rho_pair=0.05, sigma_eps2=1.0)


# -------------------------------------------------------------------------
# Data-generating processes
# -------------------------------------------------------------------------

class LinearInteraction(pydantic.BaseModel):
    kind: Literal["linear_interaction"] = "linear_interaction"
    alpha: float = 0.0
    theta: float = 1.0
    pi1: float = 1.0
    pi2: float = 1.0
    rho_interact: float = 0.0
    first_stage_interact: float = 0.5
    sigma: SigmaSpec = pydantic.Field(default_factory=SigmaSpec)


class Adversarial(pydantic.BaseModel):
    kind: Literal["adversarial"] = "adversarial"
    alpha: float = 0.0
    theta: float = 1.0
    pi: list[float] = pydantic.Field(default_factory=lambda: [1.0, 1.0], min_length=2, max_length=2)
    rho_target: float = 0.0
    instrument: InstrumentSpec = pydantic.Field(default_factory=ProductInstrument)
    pilot_n: int = pydantic.Field(1_000_000, ge=100)
    pilot_seed: int = pydantic.Field(1_000_003, ge=0)
    first_stage_interact: float = 0.5
    sigma: SigmaSpec = pydantic.Field(default_factory=SigmaSpec)


class _IndexModel(pydantic.BaseModel):
    """W = alpha1 * D + X1 + X2 with E[X1] = E[X2] = x_mean.

    The first-stage loading and covariance defaults differ per model; their
    sign and spread decide the sign of the product-instrument bias.
    """

    alpha1: Optional[float] = None
    first_stage_interact: float = 0.2
    x_mean: float = 0.0
    sigma: SigmaSpec = pydantic.Field(default_factory=semisynth_sigma)


class Probit(_IndexModel):
    kind: Literal["probit"] = "probit"
    first_stage_interact: float = 0.15
    x_mean: float = 1.0
    sigma: SigmaSpec = pydantic.Field(default_factory=narrow_sigma)


class Exponential(_IndexModel):
    kind: Literal["exponential"] = "exponential"
    first_stage_interact: float = -2.0
    sigma: SigmaSpec = pydantic.Field(default_factory=narrow_sigma)


class Logit(_IndexModel):
    kind: Literal["logit"] = "logit"


class LogLinear(pydantic.BaseModel):
    kind: Literal["log_linear"] = "log_linear"
    pi1: float = 2.5
    pi2: float = 2.5
    gamma_mean: float = pydantic.Field(2.0, gt=0)
    gamma_var: float = pydantic.Field(1.0, gt=0)
    rho_latent: float = pydantic.Field(0.3, ge=0)
    sigma_d2: float = pydantic.Field(1.0, gt=0)
    sigma_eps2: float = pydantic.Field(0.25, gt=0)
    first_stage_interact: float = 0.2

    @pydantic.model_validator(mode="after")
    def _latent_variance(self) -> "LogLinear":
        if not self.gamma_var > self.rho_latent:
            raise ValueError("gamma_var must exceed rho_latent so the Gamma draws keep positive variance")
        if not self.sigma_d2 > self.rho_latent:
            raise ValueError("sigma_d2 must exceed rho_latent so the treatment noise keeps positive variance")
        return self


class ExcludedInstrumentDgp(pydantic.BaseModel):
    kind: Literal["excluded_instrument"] = "excluded_instrument"
    alpha: float = 0.0
    theta: float = 1.0
    pi1: float = 1.0
    pi2: float = 1.0
    rho_interact: float = 0.0
    gamma_z: float = 1.0
    endog_corr: float = pydantic.Field(0.5, gt=-1, lt=1)
    sigma: SigmaSpec = pydantic.Field(default_factory=SigmaSpec)


DgpSpec = Annotated[
    Union[LinearInteraction, Adversarial, Probit, Exponential, Logit, LogLinear, ExcludedInstrumentDgp],
    pydantic.Field(discriminator="kind"),
]

INDEX_MODELS = (Probit, Exponential, Logit)


# -------------------------------------------------------------------------
# Experiments
# -------------------------------------------------------------------------

class ExperimentConfig(pydantic.BaseModel):
    dgp: DgpSpec
    instrument: InstrumentSpec = pydantic.Field(default_factory=ProductInstrument)
    transform: TransformId = TransformId.IDENTITY
    n_per_rep: int = pydantic.Field(1000, ge=50)
    replications: int = pydantic.Field(1000, ge=2)
    master_seed: int = pydantic.Field(0, ge=0)
    rho_grid: Optional[list[float]] = None
    truth_theta: float = 1.0

    @pydantic.field_validator("rho_grid")
    @classmethod
    def _finite_grid(cls, grid: Optional[list[float]]) -> Optional[list[float]]:
        if grid is not None and not all(math.isfinite(r) for r in grid):
            raise ValueError("rho_grid values must be finite")
        return grid


# -------------------------------------------------------------------------
# Abstract Base Classes
# -------------------------------------------------------------------------

class BaseDgp(abc.ABC):
    """A built, ready-to-draw data-generating process."""

    spec: pydantic.BaseModel
    # True when dY/dD is the same at every row
    constant_effect: bool = False

    @abc.abstractmethod
    def draw(self, n: int, rng: np.random.Generator):
        """Return a `Dataset` of n rows drawn with `rng`."""
        ...

    @abc.abstractmethod
    def partial_effect(self, d: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Pointwise dY/dD (of the conditional mean) at the given rows."""
        ...
