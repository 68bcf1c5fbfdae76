"""JSON config models, one per CLI subcommand.

Every run is described by a single JSON document validated against one of
the models below. Command-line flags only override the seed, the thread count
and the output location.
"""
from pathlib import Path
from typing import Optional, Type, TypeVar

import pydantic

from . import errors
from .basetypes import (
    DgpSpec,
    ExperimentConfig,
    Exponential,
    InstrumentSpec,
    Logit,
    LogLinear,
    Probit,
    ProductInstrument,
    SigmaSpec,
    TransformId,
)
from .calibration import QUAD_NODES, TOLERANCE, GModel
from .data_model import ColumnRole
from .weak_causality import WitnessFamily

T = TypeVar("T", bound=pydantic.BaseModel)


class SimulateConfig(pydantic.BaseModel):
    dgp: DgpSpec
    n: int = pydantic.Field(1000, ge=10)
    seed: int = pydantic.Field(0, ge=0)


SweepConfig = ExperimentConfig


class SemisynthConfig(pydantic.BaseModel):
    dgps: list[DgpSpec] = pydantic.Field(default_factory=lambda: [LogLinear(), Probit(), Exponential(), Logit()])
    instrument: InstrumentSpec = pydantic.Field(default_factory=ProductInstrument)
    n_per_rep: int = pydantic.Field(1000, ge=50)
    replications: int = pydantic.Field(1000, ge=2)
    master_seed: int = pydantic.Field(0, ge=0)
    ape_draws: int = pydantic.Field(200_000, ge=1000)


class AuditConfig(pydantic.BaseModel):
    """Either a CSV with a role map, or a simulated demo dataset."""

    data: Optional[str] = None
    roles: dict[str, ColumnRole] = {}
    simulate: Optional[SimulateConfig] = None
    instrument: InstrumentSpec = pydantic.Field(default_factory=ProductInstrument)
    transforms: list[TransformId] = pydantic.Field(default_factory=lambda: list(TransformId))
    standardize: bool = False

    @pydantic.model_validator(mode="after")
    def _one_source(self) -> "AuditConfig":
        if (self.data is None) == (self.simulate is None):
            raise ValueError("give exactly one of 'data' (with 'roles') or 'simulate'")
        if self.data is not None and not self.roles:
            raise ValueError("'roles' must map CSV columns when 'data' is given")
        return self


class CalibrateConfig(pydantic.BaseModel):
    """Unset covariance fields fall back to each model's DGP defaults."""

    models: list[GModel] = pydantic.Field(
        default_factory=lambda: [GModel.PROBIT, GModel.EXPONENTIAL, GModel.LOGIT]
    )
    sigma: Optional[SigmaSpec] = None
    first_stage_interact: Optional[float] = None
    x_mean: Optional[float] = None
    tolerance: float = pydantic.Field(TOLERANCE, gt=0)
    quad_nodes: int = pydantic.Field(QUAD_NODES, ge=2)


class DiagnoseConfig(pydantic.BaseModel):
    dgp: DgpSpec
    instrument: InstrumentSpec = pydantic.Field(default_factory=ProductInstrument)
    n: int = pydantic.Field(10_000, ge=100)
    seed: int = pydantic.Field(0, ge=0)
    bins: int = pydantic.Field(5, ge=2)
    fkg_pairs: int = pydantic.Field(100, ge=0)
    fkg_draws: int = pydantic.Field(50_000, ge=100)
    witness: WitnessFamily = pydantic.Field(default_factory=WitnessFamily)


CONFIGS: dict[str, Type[pydantic.BaseModel]] = {
    "simulate": SimulateConfig,
    "sweep": SweepConfig,
    "semisynth": SemisynthConfig,
    "audit": AuditConfig,
    "calibrate": CalibrateConfig,
    "diagnose": DiagnoseConfig,
}


def _describe(exc: pydantic.ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{where}: {err['msg']}")
    return "; ".join(parts)


def load_config(path: str | Path, model: Type[T]) -> T:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise errors.ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise errors.ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        return model.model_validate_json(text)
    except pydantic.ValidationError as exc:
        raise errors.ConfigError(f"{path}: {_describe(exc)}") from exc


def schemas() -> dict[str, dict]:
    return {name: model.model_json_schema() for name, model in CONFIGS.items()}
