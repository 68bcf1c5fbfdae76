from .basetypes import (
    Adversarial,
    ExcludedColumn,
    ExcludedInstrumentDgp,
    ExperimentConfig,
    Exponential,
    LinearInteraction,
    Logit,
    LogLinear,
    Probit,
    ProductInstrument,
    SigmaSpec,
    TransformId,
    TransformInstrument,
)
from .calibration import CalibrationProblem, calibrate_alpha, expected_gprime
from .data_model import ColumnRole, Dataset, read_csv, write_csv
from .dgp import average_partial_effect, build_dgp, fit_adversarial, simulate
from .estimator import IvEstimate, corollary_bias, iv_ratio, tsls
from .montecarlo import SimulationReport, bias_sweep, run_experiment, transform_audit
