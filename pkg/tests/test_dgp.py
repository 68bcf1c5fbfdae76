import warnings

import numpy as np
import pydantic
import pytest

from conftest import cov_se, structural_noise
from ivforge import errors
from ivforge.basetypes import (
    Adversarial,
    ExcludedInstrumentDgp,
    ExperimentConfig,
    Exponential,
    LinearInteraction,
    Logit,
    LogLinear,
    Probit,
    ProductInstrument,
    SigmaSpec,
)
from ivforge.calibration import calibrate_spec
from ivforge.data_model import Dataset
from ivforge.dgp import average_partial_effect, build_dgp, fit_adversarial, simulate
from ivforge.montecarlo import run_experiment


def test_treatment_covariate_covariance():
    ds = simulate(LinearInteraction(), 100_000, seed=7)
    assert abs(np.cov(ds.d, ds.x[:, 0])[0, 1] - 0.3) < 4.0 * cov_se(ds.d, ds.x[:, 0])


@pytest.mark.parametrize("seed", range(5))
def test_moment_fidelity(seed):
    spec = LinearInteraction()
    ds = simulate(spec, 100_000, seed=seed)
    eps = structural_noise(ds, spec)
    sigma = spec.sigma.covariance()
    cols = {"x1": ds.x[:, 0], "x2": ds.x[:, 1], "eps": eps}
    index = {"x1": 1, "x2": 2, "eps": 3}
    for a, ia in index.items():
        for b, ib in index.items():
            got = np.cov(cols[a], cols[b])[0, 1]
            assert abs(got - sigma[ia, ib]) < 4.0 * cov_se(cols[a], cols[b]), (a, b)
    # the first-stage loading adds kappa^2 * Var(X1 X2) to Var(D) and leaves Cov(D, X_j) alone
    kappa, r = spec.first_stage_interact, spec.sigma.rho_pair
    var_d = spec.sigma.sigma_d2 + kappa ** 2 * (1.0 + r ** 2)
    assert abs(np.var(ds.d, ddof=1) - var_d) < 4.0 * cov_se(ds.d, ds.d)
    for j in range(2):
        assert abs(np.cov(ds.d, ds.x[:, j])[0, 1] - r) < 4.0 * cov_se(ds.d, ds.x[:, j])


def test_exogeneity_by_construction():
    spec = LinearInteraction(rho_interact=1.5)
    ds = simulate(spec, 50_000, seed=21)
    eps = structural_noise(ds, spec)
    for col in (ds.d, ds.x[:, 0], ds.x[:, 1]):
        assert abs(np.cov(eps, col)[0, 1]) < 4.0 * cov_se(eps, col)


def test_logit_without_treatment_effect():
    ds = simulate(Logit(alpha1=0.0), 100_000, seed=2)
    # X1 + X2 is symmetric about zero, so E[logistic(X1 + X2)] = 1/2
    assert set(np.unique(ds.y)) <= {0.0, 1.0}
    assert abs(ds.y.mean() - 0.5) < 4.0 * 0.5 / np.sqrt(ds.n)


def test_index_model_covariate_mean():
    spec = Probit(alpha1=2.0)
    ds = simulate(spec, 100_000, seed=3)
    assert ds.x.mean(axis=0) == pytest.approx([spec.x_mean] * 2, abs=0.01)
    assert abs(ds.d.mean()) < 0.01
    for j in range(2):
        assert abs(np.cov(ds.d, ds.x[:, j])[0, 1] - spec.sigma.rho_pair) < 4.0 * cov_se(ds.d, ds.x[:, j])


def test_log_linear_independent_covariates():
    ds = simulate(LogLinear(rho_latent=0.0), 100_000, seed=4)
    assert np.all(ds.x > 0)
    assert abs(np.corrcoef(ds.x[:, 0], ds.x[:, 1])[0, 1]) < 4.0 / np.sqrt(ds.n)


def test_log_linear_support_and_gamma_moments():
    spec = LogLinear()
    ds = simulate(spec, 50_000, seed=5)
    assert ds.n == 50_000
    assert np.all(ds.x > 0)
    assert ds.x.mean(axis=0) == pytest.approx([2.0, 2.0], abs=0.1)
    assert build_dgp(spec).redraw_rate(100_000, seed=1) < 0.05


def test_log_linear_invalid_variance():
    with pytest.raises(pydantic.ValidationError):
        LogLinear(gamma_var=0.2, rho_latent=0.3)


def test_excluded_instrument_columns():
    spec = ExcludedInstrumentDgp()
    ds = simulate(spec, 50_000, seed=6)
    assert ds.z is not None and ds.z.shape == (50_000, 1)
    assert abs(np.corrcoef(ds.z[:, 0], ds.x[:, 0])[0, 1]) < 4.0 / np.sqrt(ds.n)
    assert np.cov(ds.d, ds.z[:, 0])[0, 1] == pytest.approx(spec.gamma_z, abs=0.05)


def test_determinism():
    for spec in (LinearInteraction(), LogLinear(), ExcludedInstrumentDgp(), Probit(alpha1=2.0)):
        a = simulate(spec, 500, seed=99)
        b = simulate(spec, 500, seed=99)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.d, b.d) and np.array_equal(a.x, b.x)


def test_invalid_specs():
    with pytest.raises(errors.InvalidSpec):
        simulate(LinearInteraction(), 5, seed=0)
    with pytest.raises(errors.InvalidSpec):
        simulate(Probit(), 100, seed=0)
    with pytest.raises(errors.NonPositiveDefinite):
        SigmaSpec(rho_pair=1.5)


def test_adversarial_zero_target():
    pilot = build_dgp(LinearInteraction()).draw(10_000, np.random.default_rng(0))
    model = fit_adversarial(1.0, 0.0, [1.0, 1.0], ProductInstrument(), pilot)
    assert model.g_rho == 0.0
    np.testing.assert_allclose(model.structural(pilot.x), pilot.x @ np.array([1.0, 1.0]))


def test_adversarial_coefficient_formula():
    pilot = build_dgp(LinearInteraction()).draw(20_000, np.random.default_rng(1))
    model = fit_adversarial(1.0, 2.5, [1.0, 1.0], ProductInstrument(), pilot)
    assert model.g_rho == pytest.approx(-2.5 * model.cov_dfperp / model.var_fperp)
    assert model.projection.shape == (3,)


def test_adversarial_ill_conditioned_pilot():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((10_000, 2))
    d = x[:, 0] + 1e-6 * rng.standard_normal(10_000)
    pilot = Dataset(y=np.zeros(10_000), d=d, x=x)
    with pytest.warns(errors.ConditioningWarning):
        fit_adversarial(1.0, 1.0, [1.0, 1.0], ProductInstrument(), pilot)
    exact = Dataset(y=np.zeros(10_000), d=x[:, 0], x=x)
    with pytest.raises(errors.Unidentified):
        fit_adversarial(1.0, 1.0, [1.0, 1.0], ProductInstrument(), exact)


def test_average_partial_effects():
    assert average_partial_effect(LinearInteraction(theta=1.0), 10, seed=0) == 1.0
    assert average_partial_effect(LogLinear(), 10, seed=0) == 1.0
    assert average_partial_effect(Exponential(alpha1=0.0), 10_000, seed=0) == 0.0


@pytest.mark.parametrize("spec", [Probit(), Exponential(), Logit()], ids=["probit", "exponential", "logit"])
def test_calibrated_average_partial_effect(spec):
    calibrated = calibrate_spec(spec)
    assert average_partial_effect(calibrated, 1_000_000, seed=42) == pytest.approx(1.0, abs=0.02)


@pytest.mark.slow
@pytest.mark.parametrize("rho_target", [-5.0, 2.5, 10.0])
def test_adversarial_bias_hits_target(rho_target):
    spec = Adversarial(rho_target=rho_target)
    dgp = build_dgp(spec)
    cfg = ExperimentConfig(dgp=spec, n_per_rep=2000, replications=500, master_seed=77)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", errors.WeakInstrumentWarning)
        report = run_experiment(cfg, threads=4, dgp=dgp)
    bias = spec.theta - report.summary.mean_theta
    assert abs(bias - rho_target) < 3.0 * report.summary.mc_se
