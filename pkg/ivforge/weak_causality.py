"""Weak-causality diagnostics.

An IV estimand is weakly causal when its sign agrees with individual
treatment effects that all share one sign. For a single instrument that holds
when the residualized instrument is mean independent of the covariates,
E[f_perp | X] = 0. This module provides:

- `saturation_test`: a binned check of E[f_perp | X] = 0 on a sample.
- `fkg_check`: Monte Carlo covariance-sign check for pairs of functions that
  are monotone in a shared argument with independent noise.
- `DiscreteModel` and `discrete_theta_iv`: exact population estimand by
  enumeration over a finite support.
- `find_sign_violation`: grid search for a model with monotone potential
  outcomes and a negative estimand.
"""
import itertools
import logging
import math
from typing import Literal, Optional

import numpy as np
import pydantic
from scipy import special

from . import errors, numerics
from .basetypes import ExcludedColumn, InstrumentSpec, ProductInstrument
from .data_model import Dataset
from .instruments import build_instrument

logger = logging.getLogger("ivforge.weak_causality")

MAX_CELLS = 25
MIN_PER_BIN = 10
PASS_STAT = 3.0
WIT_TOL = 1e-6
POP_TOL = 1e-12


# -------------------------------------------------------------------------
# Saturation test
# -------------------------------------------------------------------------

class SaturationTest(pydantic.BaseModel):
    stat: float
    passed: bool
    cells: int
    bins_per_covariate: int


def _cross_bins(x: np.ndarray, bins: int) -> tuple[np.ndarray, int]:
    j = x.shape[1]
    per = bins
    while per > 2 and per ** j > MAX_CELLS:
        per -= 1
    codes = np.zeros(x.shape[0], dtype=np.int64)
    for col in range(j):
        edges = np.quantile(x[:, col], np.linspace(0.0, 1.0, per + 1)[1:-1])
        codes = codes * per + np.searchsorted(edges, x[:, col], side="right")
    return codes, per


def saturation_test(f_perp, x, bins: int = 5) -> SaturationTest:
    """Largest within-cell |t| of the residualized instrument over X-quantile cells.

    Each covariate is cut at its quantiles and cells are crossed, with the
    per-covariate bin count reduced until there are at most 25 cells.
    """
    if bins < 2:
        raise errors.InvalidSpec("saturation test needs at least two bins")
    f_perp = numerics.as_vector(f_perp, "residualized instrument")
    x = numerics.as_matrix(x, "covariates")
    if x.shape[0] != f_perp.shape[0]:
        raise errors.LengthMismatch("instrument and covariates differ in length")

    codes, per = _cross_bins(x, bins)
    labels, counts = np.unique(codes, return_counts=True)
    if counts.min() < MIN_PER_BIN:
        raise errors.TooFewPerBin(f"a cell has {counts.min()} rows; at least {MIN_PER_BIN} are needed")
    if np.max(np.abs(f_perp)) <= 1e-10:
        return SaturationTest(stat=0.0, passed=True, cells=labels.shape[0], bins_per_covariate=per)

    stat = 0.0
    for label, count in zip(labels, counts):
        cell = f_perp[codes == label]
        mean = float(cell.mean())
        sd = float(cell.std(ddof=1))
        if sd == 0.0:
            t = 0.0 if mean == 0.0 else math.inf
        else:
            t = abs(mean) / (sd / math.sqrt(count))
        stat = max(stat, t)
    logger.debug("saturation test: %d cells, max |t| = %.4g", labels.shape[0], stat)
    return SaturationTest(stat=stat, passed=stat < PASS_STAT, cells=labels.shape[0], bins_per_covariate=per)


# -------------------------------------------------------------------------
# FKG covariance sign
# -------------------------------------------------------------------------

class MonotoneFunction(pydantic.BaseModel):
    """direction * base(t) + noise_scale * noise, with base non-decreasing."""

    family: Literal["identity", "piecewise_linear", "logistic", "cubic"] = "identity"
    direction: Literal[1, -1] = 1
    knot: float = 0.0
    slope_left: float = pydantic.Field(1.0, ge=0)
    slope_right: float = pydantic.Field(1.0, ge=0)
    scale: float = pydantic.Field(1.0, gt=0)
    linear: float = pydantic.Field(0.0, ge=0)
    noise_scale: float = pydantic.Field(0.0, ge=0)

    def base(self, t: np.ndarray) -> np.ndarray:
        if self.family == "identity":
            return t
        if self.family == "piecewise_linear":
            return self.slope_left * np.minimum(t - self.knot, 0.0) + self.slope_right * np.maximum(t - self.knot, 0.0)
        if self.family == "logistic":
            return special.expit(self.scale * (t - self.knot))
        return (t - self.knot) ** 3 + self.linear * t

    def __call__(self, t: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return self.direction * self.base(t) + self.noise_scale * noise


def random_monotone(rng: np.random.Generator) -> MonotoneFunction:
    return MonotoneFunction(
        family=rng.choice(["identity", "piecewise_linear", "logistic", "cubic"]).item(),
        direction=int(rng.choice([1, -1])),
        knot=float(rng.uniform(-1.0, 1.0)),
        slope_left=float(rng.uniform(0.0, 2.0)),
        slope_right=float(rng.uniform(0.0, 2.0)),
        scale=float(rng.uniform(0.5, 4.0)),
        linear=float(rng.uniform(0.0, 1.0)),
        noise_scale=float(rng.uniform(0.0, 1.0)),
    )


class FkgResult(pydantic.BaseModel):
    cov: float
    mc_se: float
    sign_ok: bool


def fkg_check(g: MonotoneFunction, h: MonotoneFunction, draws: int = 100_000, seed: int = 0) -> FkgResult:
    """Cov(g(X, eps), h(X, eta)) with X, eps, eta independent standard normals.

    Same monotone direction: cov must not be below -4 MC SE. Opposite
    directions: cov must not be above +4 MC SE.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(draws)
    gv = g(x, rng.standard_normal(draws))
    hv = h(x, rng.standard_normal(draws))
    cov = numerics.sample_cov(gv, hv)
    products = (gv - gv.mean()) * (hv - hv.mean())
    se = float(products.std(ddof=1) / math.sqrt(draws))
    if g.direction == h.direction:
        ok = cov >= -4.0 * se
    else:
        ok = cov <= 4.0 * se
    return FkgResult(cov=cov, mc_se=se, sign_ok=bool(ok))


# -------------------------------------------------------------------------
# Discrete models
# -------------------------------------------------------------------------

class DiscreteModel(pydantic.BaseModel):
    """Finite-support model of (X, Z, D, Y).

    `y_table[k][i]` is Y(d_support[k], x_support[i]); `d_table[i][l]` is the
    index into `d_support` taken at (x_support[i], z_support[l]); `pmf[i][l]`
    is the probability of that cell.
    """

    x_support: list[list[float]] = pydantic.Field(min_length=1)
    z_support: list[float] = pydantic.Field(min_length=1)
    d_support: list[float] = pydantic.Field(min_length=1)
    y_table: list[list[float]]
    d_table: list[list[int]]
    pmf: list[list[float]]
    y_monotone: bool = False

    @pydantic.model_validator(mode="after")
    def _consistent(self) -> "DiscreteModel":
        nx, nz, nd = len(self.x_support), len(self.z_support), len(self.d_support)
        if len({len(p) for p in self.x_support}) != 1 or not self.x_support[0]:
            raise ValueError("x_support points must share one non-zero dimension")
        if len(self.y_table) != nd or any(len(row) != nx for row in self.y_table):
            raise ValueError("y_table must be |d_support| x |x_support|")
        if len(self.d_table) != nx or any(len(row) != nz for row in self.d_table):
            raise ValueError("d_table must be |x_support| x |z_support|")
        if any(not 0 <= k < nd for row in self.d_table for k in row):
            raise ValueError("d_table entries must index d_support")
        pmf = np.asarray(self.pmf, dtype=np.float64)
        if pmf.shape != (nx, nz):
            raise ValueError("pmf must be |x_support| x |z_support|")
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-9:
            raise ValueError("pmf must be non-negative and sum to 1")
        if self.y_monotone and not self.outcomes_monotone():
            raise ValueError("y_monotone is set but Y(d, x) decreases in d somewhere")
        return self

    def outcomes_monotone(self) -> bool:
        order = np.argsort(self.d_support, kind="stable")
        y = np.asarray(self.y_table, dtype=np.float64)[order]
        return bool(np.all(np.diff(y, axis=0) >= 0.0))

    def cells(self) -> tuple[Dataset, np.ndarray]:
        """All (x, z) cells with positive mass as a Dataset plus their weights."""
        pmf = np.asarray(self.pmf, dtype=np.float64)
        rows = [(i, l) for i in range(len(self.x_support)) for l in range(len(self.z_support)) if pmf[i, l] > 0]
        if not rows:
            raise errors.InvalidSpec("pmf has no positive cell")
        x = np.array([self.x_support[i] for i, _ in rows], dtype=np.float64)
        z = np.array([[self.z_support[l]] for _, l in rows], dtype=np.float64)
        d_idx = [self.d_table[i][l] for i, l in rows]
        d = np.array([self.d_support[k] for k in d_idx], dtype=np.float64)
        y = np.array([self.y_table[k][i] for k, (i, _) in zip(d_idx, rows)], dtype=np.float64)
        weights = np.array([pmf[i, l] for i, l in rows])
        return Dataset(y=y, d=d, x=x, z=z), weights

    def x_index(self) -> np.ndarray:
        pmf = np.asarray(self.pmf, dtype=np.float64)
        return np.array([i for i in range(len(self.x_support)) for l in range(len(self.z_support)) if pmf[i, l] > 0])


def _population_residual(f: np.ndarray, controls: np.ndarray, weights: np.ndarray) -> np.ndarray:
    root = np.sqrt(weights)
    try:
        beta = numerics.solve_least_squares(controls * root[:, None], f * root, rank_tol=1e-12)
    except errors.RankDeficient:
        raise errors.Unidentified("controls are collinear on the support") from None
    return f - controls @ beta


def discrete_theta_iv(model: DiscreteModel, instrument: InstrumentSpec, saturated: bool = False) -> float:
    """Exact Cov(Y, f_perp) / Cov(D, f_perp) over the model's pmf.

    Controls are (1, X), or one dummy per X support point when `saturated`.
    """
    cells, w = model.cells()
    f = build_instrument(instrument, cells)
    if saturated:
        xi = model.x_index()
        controls = (xi[:, None] == np.unique(xi)[None, :]).astype(np.float64)
    else:
        controls = numerics.add_intercept(cells.x)
    f_perp = _population_residual(f, controls, w)
    f_perp = f_perp - w @ f_perp

    var_f = float(w @ (f - w @ f) ** 2)
    var_fperp = float(w @ f_perp ** 2)
    if var_fperp <= POP_TOL * max(var_f, 1.0):
        raise errors.Unidentified(f"population var(f_perp) = {var_fperp:g}; the controls saturate the instrument")
    cov_d = float(w @ ((cells.d - w @ cells.d) * f_perp))
    if abs(cov_d) <= POP_TOL:
        raise errors.Unidentified("population cov(D, f_perp) is zero")
    cov_y = float(w @ ((cells.y - w @ cells.y) * f_perp))
    return cov_y / cov_d


class FirstStageReport(pydantic.BaseModel):
    monotone: bool
    violations: list[int]


def first_stage_monotone(model: DiscreteModel, instrument: InstrumentSpec) -> FirstStageReport:
    """Is D weakly increasing in the instrument value at every x?

    Returns the x indices where a higher instrument value meets a lower D.
    """
    nz = len(model.z_support)
    x = np.repeat(np.asarray(model.x_support, dtype=np.float64), nz, axis=0)
    z = np.tile(np.asarray(model.z_support, dtype=np.float64), len(model.x_support))[:, None]
    grid = Dataset(y=np.zeros(x.shape[0]), d=np.zeros(x.shape[0]), x=x, z=z)
    f = build_instrument(instrument, grid).reshape(len(model.x_support), nz)
    violations = []
    for i, row in enumerate(model.d_table):
        d = np.asarray([model.d_support[k] for k in row])
        for a, b in itertools.permutations(range(nz), 2):
            if f[i, a] < f[i, b] and d[a] > d[b]:
                violations.append(i)
                break
    return FirstStageReport(monotone=not violations, violations=violations)


def sample_discrete(model: DiscreteModel, n: int, seed: int, noise_sd: float = 0.0) -> Dataset:
    """Draw n rows from the model's pmf, adding N(0, noise_sd^2) outcome noise."""
    cells, w = model.cells()
    rng = np.random.default_rng(seed)
    pick = rng.choice(w.shape[0], size=n, p=w / w.sum())
    y = cells.y[pick]
    if noise_sd > 0:
        y = y + rng.normal(0.0, noise_sd, size=n)
    return Dataset(y=y, d=cells.d[pick], x=cells.x[pick], z=cells.z[pick])


# -------------------------------------------------------------------------
# Witness search
# -------------------------------------------------------------------------


GRID_2X2 = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]


class WitnessFamily(pydantic.BaseModel):
    """Grid of discrete models with X on a 2x2 grid and binary Z and D.

    The pmf over X takes three free weights in steps of `weight_step` (the
    fourth is the remainder, at least one step); Z is an independent fair
    coin. Outcomes are Y(0, x) = y0 and Y(1, x) = y0 + effect with
    non-negative effects, so every model has non-decreasing potential outcomes.
    """

    instrument: InstrumentSpec = pydantic.Field(default_factory=ProductInstrument)
    weight_step: float = pydantic.Field(0.1, gt=0, lt=0.25)
    y0_tables: list[list[float]] = pydantic.Field(default_factory=lambda: [
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, -2.0],
        [0.0, 0.0, 0.0, 2.0],
        [0.0, 1.0, 1.0, 3.0],
    ])
    effect_tables: list[list[float]] = pydantic.Field(default_factory=lambda: [
        [0.0, 0.0, 0.0, 0.0],
        [1.0, 1.0, 1.0, 1.0],
        [0.0, 0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0, 0.0],
    ])
    d_tables: list[list[list[int]]] = pydantic.Field(default_factory=lambda: [
        [[0, 1], [0, 1], [0, 1], [0, 1]],
        [[0, 0], [0, 1], [0, 1], [1, 1]],
        [[0, 0], [0, 0], [0, 0], [1, 1]],
        [[0, 1], [0, 0], [0, 0], [1, 1]],
    ])
    require_monotone_first_stage: bool = True

    @pydantic.field_validator("effect_tables")
    @classmethod
    def _non_negative(cls, tables: list[list[float]]) -> list[list[float]]:
        if any(e < 0 for t in tables for e in t):
            raise ValueError("treatment effects must be non-negative")
        return tables

    def x_pmfs(self):
        units = round(1.0 / self.weight_step)
        for a, b, c in itertools.product(range(1, units), repeat=3):
            rest = units - a - b - c
            if rest >= 1:
                yield [k / units for k in (a, b, c, rest)]

    def models(self):
        for px, y0, effect, d_table in itertools.product(self.x_pmfs(), self.y0_tables, self.effect_tables, self.d_tables):
            yield DiscreteModel(
                x_support=GRID_2X2,
                z_support=[0.0, 1.0],
                d_support=[0.0, 1.0],
                y_table=[list(y0), [y + e for y, e in zip(y0, effect)]],
                d_table=d_table,
                pmf=[[p / 2.0, p / 2.0] for p in px],
                y_monotone=True,
            )


class Witness(pydantic.BaseModel):
    model: DiscreteModel
    theta_iv: float
    searched: int


def find_sign_violation(family: WitnessFamily, wit_tol: float = WIT_TOL) -> Optional[Witness]:
    """First model in `family` whose estimand is below -wit_tol, or None.

    A candidate is re-verified by enumerating it again and checking its
    outcomes are monotone before it is returned.
    """
    searched = 0
    for model in family.models():
        if family.require_monotone_first_stage and not first_stage_monotone(model, family.instrument).monotone:
            continue
        searched += 1
        try:
            theta = discrete_theta_iv(model, family.instrument)
        except errors.Unidentified:
            continue
        if theta < -wit_tol:
            check = discrete_theta_iv(model.model_copy(deep=True), family.instrument)
            if check < -wit_tol and model.outcomes_monotone():
                logger.info("sign violation after %d models: theta_iv = %.6g", searched, theta)
                return Witness(model=model, theta_iv=check, searched=searched)
    logger.info("no sign violation in %d models", searched)
    return None


def excluded_family(**kwargs) -> WitnessFamily:
    """The default family instrumented by Z alone, for which E[f_perp | X] = 0."""
    return WitnessFamily(instrument=ExcludedColumn(m=0), **kwargs)
