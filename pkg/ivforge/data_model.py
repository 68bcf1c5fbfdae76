"""Dataset container and CSV ingestion/emission.

A `Dataset` is the unit every estimator consumes: outcome y, endogenous
treatment d, covariates x (no intercept stored) and an optional block of
excluded exogenous columns z. Arrays are frozen on construction so a dataset
can be shared freely between worker threads.
"""
import dataclasses
import enum
import logging
import warnings
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from . import errors
from .numerics import Matrix, Vector

logger = logging.getLogger("ivforge.data_model")


class ColumnRole(str, enum.Enum):
    OUTCOME = "outcome"
    TREATMENT = "treatment"
    COVARIATE = "covariate"
    EXCLUDED = "excluded"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset:
    y: Vector
    d: Vector
    x: Matrix
    z: Optional[Matrix] = None
    y_name: str = "y"
    d_name: str = "d"
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        y = _frozen(self.y).reshape(-1)
        d = _frozen(self.d).reshape(-1)
        x = _frozen(self.x)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        n = y.shape[0]
        if d.shape[0] != n or x.shape[0] != n:
            raise errors.LengthMismatch(f"column lengths differ: y={n}, d={d.shape[0]}, x={x.shape[0]}")
        if x.shape[1] < 1:
            raise errors.InvalidSpec("a dataset needs at least one covariate")

        z = None
        if self.z is not None:
            z = _frozen(self.z)
            if z.ndim == 1:
                z = z.reshape(-1, 1)
            if z.shape[0] != n:
                raise errors.LengthMismatch(f"z has {z.shape[0]} rows, expected {n}")
            if z.shape[1] == 0:
                z = None

        for name, col in (("y", y), ("d", d), ("x", x), ("z", z)):
            if col is not None and not np.all(np.isfinite(col)):
                raise errors.NonFinite(f"column block {name} contains NaN or Inf")

        x_names = tuple(self.x_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        z_names = tuple(self.z_names) if z is not None else ()
        if z is not None and not z_names:
            z_names = tuple(f"z{m + 1}" for m in range(z.shape[1]))
        if len(x_names) != x.shape[1] or (z is not None and len(z_names) != z.shape[1]):
            raise errors.LengthMismatch("column names do not match the number of columns")

        # frozen dataclass: assign normalized fields through object.__setattr__
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "z_names", z_names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]

    def columns(self) -> list[str]:
        return [self.y_name, self.d_name, *self.x_names, *self.z_names]

    def to_frame(self) -> pd.DataFrame:
        blocks = [self.y[:, None], self.d[:, None], self.x]
        if self.z is not None:
            blocks.append(self.z)
        return pd.DataFrame(np.column_stack(blocks), columns=self.columns())

    def with_outcome(self, y: Vector) -> "Dataset":
        return dataclasses.replace(self, y=y)


# -------------------------------------------------------------------------
# CSV I/O
# -------------------------------------------------------------------------

def _parse_column(frame: pd.DataFrame, name: str) -> Vector:
    raw = frame[name]
    out = np.empty(len(raw), dtype=np.float64)
    for i, cell in enumerate(raw):
        if not isinstance(cell, str):
            # short rows come back as NaN
            raise errors.NonNumericCell(i + 1, name, "")
        try:
            value = float(cell.strip())
        except ValueError:
            raise errors.NonNumericCell(i + 1, name, cell) from None
        if not np.isfinite(value):
            raise errors.NonNumericCell(i + 1, name, cell)
        out[i] = value
    return out


def read_csv(path: str | Path, role_map: Mapping[str, ColumnRole | str]) -> Dataset:
    """Read a header-first CSV and assign columns by role.

    Column order within the covariate and excluded blocks follows the order of
    `role_map`. Columns absent from `role_map` are dropped with an
    `UnmappedColumnsWarning`. Row numbers in errors are 1-based data rows.
    """
    roles = {name: ColumnRole(role) for name, role in role_map.items()}
    outcomes = [k for k, r in roles.items() if r is ColumnRole.OUTCOME]
    treatments = [k for k, r in roles.items() if r is ColumnRole.TREATMENT]
    if len(outcomes) != 1 or len(treatments) != 1:
        raise errors.ConfigError("role map needs exactly one outcome and one treatment column")

    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise errors.EmptyFile(f"{path} is empty") from None
    except UnicodeDecodeError as exc:
        raise errors.MalformedFile(f"{path} is not valid UTF-8 (byte offset {exc.start})") from None
    except pd.errors.ParserError as exc:
        raise errors.MalformedFile(f"cannot parse {path}: {exc}") from None
    except OSError as exc:
        raise errors.IoError(f"cannot read {path}: {exc}") from exc
    if frame.shape[0] == 0:
        raise errors.EmptyFile(f"{path} has a header but no data rows")

    for name in roles:
        if name not in frame.columns:
            raise errors.MissingColumn(name)

    unmapped = [c for c in frame.columns if c not in roles]
    if unmapped:
        logger.info("ignoring unmapped columns in %s: %s", path, ", ".join(unmapped))
        warnings.warn(f"ignored columns: {unmapped}", errors.UnmappedColumnsWarning, stacklevel=2)

    x_names = [k for k, r in roles.items() if r is ColumnRole.COVARIATE]
    z_names = [k for k, r in roles.items() if r is ColumnRole.EXCLUDED]
    if not x_names:
        raise errors.ConfigError("role map names no covariate column")

    x = np.column_stack([_parse_column(frame, c) for c in x_names])
    z = np.column_stack([_parse_column(frame, c) for c in z_names]) if z_names else None
    return Dataset(
        y=_parse_column(frame, outcomes[0]),
        d=_parse_column(frame, treatments[0]),
        x=x,
        z=z,
        y_name=outcomes[0],
        d_name=treatments[0],
        x_names=tuple(x_names),
        z_names=tuple(z_names),
    )


def role_map_for(ds: Dataset) -> dict[str, ColumnRole]:
    roles = {ds.y_name: ColumnRole.OUTCOME, ds.d_name: ColumnRole.TREATMENT}
    roles.update({c: ColumnRole.COVARIATE for c in ds.x_names})
    roles.update({c: ColumnRole.EXCLUDED for c in ds.z_names})
    return roles


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Write y, d, covariates, then excluded columns with 17 significant digits."""
    path = Path(path)
    try:
        ds.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as exc:
        raise errors.IoError(f"cannot write {path}: {exc}") from exc
