import math

import numpy as np
import pydantic
import pytest
from scipy import special

from ivforge import errors
from ivforge.basetypes import SigmaSpec, semisynth_sigma
from ivforge.calibration import (
    CalibrationProblem,
    GModel,
    calibrate_alpha,
    expected_gprime,
    expected_gprime_joint,
    g_prime,
    problem_for_model,
)

VARIANCES = [0.5, 2.0, 5.0]


@pytest.mark.parametrize("v", VARIANCES)
def test_linear_identity(v):
    assert expected_gprime(GModel.LINEAR_IDENTITY, v) == 1.0


@pytest.mark.parametrize("v", VARIANCES)
def test_exponential_closed_form(v):
    assert expected_gprime(GModel.EXPONENTIAL, v) == pytest.approx(math.exp(v / 2.0), rel=1e-10)


@pytest.mark.parametrize("v", VARIANCES)
def test_probit_closed_form(v):
    assert expected_gprime(GModel.PROBIT, v) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi * (v + 1.0)), abs=1e-8)


@pytest.mark.parametrize("mean", [-1.0, 0.5, 2.0])
def test_closed_forms_with_mean(mean):
    v = 3.0
    expected = math.exp(-mean * mean / (2.0 * (v + 1.0))) / math.sqrt(2.0 * math.pi * (v + 1.0))
    assert expected_gprime(GModel.PROBIT, v, w_mean=mean) == pytest.approx(expected, abs=1e-8)
    assert expected_gprime(GModel.EXPONENTIAL, v, w_mean=mean) == pytest.approx(math.exp(mean + v / 2.0), rel=1e-10)


@pytest.mark.parametrize(
    "model,v",
    [(m, v) for m in (GModel.PROBIT, GModel.LOGIT) for v in VARIANCES] + [(GModel.EXPONENTIAL, 0.5)],
)
def test_quadrature_against_monte_carlo(model, v):
    w = np.random.default_rng(12).normal(0.0, math.sqrt(v), size=1_000_000)
    values = g_prime(model, w)
    se = values.std(ddof=1) / math.sqrt(w.shape[0])
    assert abs(expected_gprime(model, v) - values.mean()) < 4.0 * se


def test_nonpositive_variance():
    with pytest.raises(errors.InvalidSpec):
        expected_gprime(GModel.PROBIT, 0.0)


def test_linear_identity_calibrates_to_one():
    result = calibrate_alpha(CalibrationProblem(model=GModel.LINEAR_IDENTITY))
    assert result.alpha1 == 1.0
    assert result.residual == 0.0


def test_probit_unreachable_with_unit_covariance():
    problem = CalibrationProblem.from_sigma(GModel.PROBIT, SigmaSpec())
    with pytest.raises(errors.NoRoot) as info:
        calibrate_alpha(problem)
    assert info.value.bracket[1] == 64.0
    assert info.value.exit_code == 3


def test_exponential_with_huge_covariate_variance():
    with pytest.raises(errors.NoRoot):
        calibrate_alpha(CalibrationProblem(model=GModel.EXPONENTIAL, a=1.0, c=0.0, b=50.0))


def test_unreachable_tolerance_is_not_reported_as_converged():
    problem = CalibrationProblem.from_sigma(GModel.PROBIT, semisynth_sigma(), tolerance=1e-300)
    with pytest.raises(errors.NoRoot) as info:
        calibrate_alpha(problem)
    assert "tolerance" in str(info.value)


def _bisect_oracle(fn, lo, hi):
    f_lo = fn(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sign(fn(mid)) == np.sign(f_lo):
            lo, f_lo = mid, fn(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_gaussian_probit_against_closed_form_oracle():
    sigma = semisynth_sigma()
    problem = CalibrationProblem.from_sigma(GModel.PROBIT, sigma)
    result = calibrate_alpha(problem)

    def closed(alpha):
        return alpha / math.sqrt(2.0 * math.pi * (problem.w_variance(alpha) + 1.0)) - 1.0

    assert abs(result.residual) < 1e-8
    assert result.alpha1 == pytest.approx(_bisect_oracle(closed, 1e-6, 64.0), rel=1e-6)
    assert result.iterations <= 200


def test_w_variance_coefficients():
    sigma = SigmaSpec(sigma_d2=0.5, sigma_x1_2=1.0, sigma_x2_2=2.0, rho_pair=0.2)
    problem = CalibrationProblem.from_sigma(GModel.LOGIT, sigma)
    assert (problem.a, problem.c, problem.b) == pytest.approx((0.5, 0.8, 3.4))


@pytest.mark.parametrize("model", [GModel.PROBIT, GModel.EXPONENTIAL, GModel.LOGIT])
def test_joint_quadrature_reduces_to_gaussian(model):
    sigma = semisynth_sigma()
    problem = CalibrationProblem.from_sigma(model, sigma)
    for alpha in (0.3, 1.0, 2.0):
        joint = expected_gprime_joint(model, alpha, sigma, kappa=0.0)
        assert joint == pytest.approx(expected_gprime(model, problem.w_variance(alpha)), rel=1e-7)


@pytest.mark.parametrize("model", [GModel.PROBIT, GModel.LOGIT])
def test_joint_quadrature_with_covariate_mean(model):
    sigma = semisynth_sigma()
    problem = CalibrationProblem.from_sigma(model, sigma, x_mean=1.0)
    assert problem.w_mean == 2.0
    joint = expected_gprime_joint(model, 1.5, sigma, kappa=0.0, w_mean=2.0)
    assert joint == pytest.approx(problem.expected_gprime(1.5), rel=1e-7)


def test_joint_quadrature_against_monte_carlo():
    sigma, kappa, alpha = semisynth_sigma(), 0.2, 1.5
    rng = np.random.default_rng(3)
    draws = rng.standard_normal((1_000_000, 4)) @ np.linalg.cholesky(sigma.covariance()).T
    x1, x2 = draws[:, 1], draws[:, 2]
    w = alpha * (draws[:, 0] + kappa * (x1 * x2 - sigma.rho_pair)) + x1 + x2
    p = special.expit(w)
    values = p * (1.0 - p)
    se = values.std(ddof=1) / 1000.0
    assert abs(expected_gprime_joint(GModel.LOGIT, alpha, sigma, kappa) - values.mean()) < 4.0 * se


@pytest.mark.parametrize("model", [GModel.PROBIT, GModel.EXPONENTIAL, GModel.LOGIT])
def test_semisynth_calibration_converges(model):
    problem = CalibrationProblem.from_sigma(model, semisynth_sigma(), kappa=0.2)
    result = calibrate_alpha(problem)
    assert result.alpha1 > 0
    assert abs(result.residual) < 1e-8
    assert abs(problem.residual(result.alpha1)) < 1e-8


@pytest.mark.parametrize("model", [GModel.PROBIT, GModel.EXPONENTIAL, GModel.LOGIT])
def test_model_defaults_calibrate(model):
    result = calibrate_alpha(problem_for_model(model))
    assert result.alpha1 > 0
    assert abs(result.residual) < 1e-8


def test_model_problem_overrides():
    assert problem_for_model(GModel.PROBIT).w_mean == 2.0
    assert problem_for_model(GModel.PROBIT, x_mean=0.0).w_mean == 0.0
    problem = problem_for_model(GModel.EXPONENTIAL, sigma=semisynth_sigma(), first_stage_interact=0.0)
    assert problem.sigma is None and problem.b == pytest.approx(2.2)
    assert calibrate_alpha(problem_for_model(GModel.LINEAR_IDENTITY)).alpha1 == 1.0


def test_invalid_bracket():
    with pytest.raises(pydantic.ValidationError):
        CalibrationProblem(model=GModel.PROBIT, bracket=(2.0, 1.0))
