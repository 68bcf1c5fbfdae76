import math

import numpy as np
import pydantic
import pytest

from conftest import cov_se, structural_noise
from ivforge import errors
from ivforge.basetypes import ExcludedColumn, LinearInteraction, ProductInstrument, TransformId, TransformInstrument
from ivforge.data_model import Dataset
from ivforge.dgp import simulate
from ivforge.instruments import (
    F_CAP,
    apply_transform,
    build_instrument,
    check_relevance,
    check_saturation,
)
from ivforge.numerics import add_intercept, residualize, sample_cov, sample_var


def _tiny(x, z=None):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    return Dataset(y=np.zeros(n), d=np.zeros(n), x=x, z=z)


def test_product_instrument():
    ds = _tiny([[2.0, 3.0], [1.0, 4.0]])
    np.testing.assert_array_equal(build_instrument(ProductInstrument(i=0, j=1), ds), [6.0, 4.0])


def test_excluded_column_verbatim():
    z = np.array([[1.0, 7.0], [2.0, 8.0]])
    ds = _tiny([[2.0, 3.0], [1.0, 4.0]], z=z)
    np.testing.assert_array_equal(build_instrument(ExcludedColumn(m=1), ds), [7.0, 8.0])


def test_log1p_transform_instrument():
    ds = _tiny([[0.0, 5.0], [math.e - 1.0, 5.0]])
    spec = TransformInstrument(h=TransformId.LOG1P, columns=[0])
    np.testing.assert_allclose(build_instrument(spec, ds), [0.0, 1.0], atol=1e-15)


def test_sum_combiner():
    ds = _tiny([[1.0, 2.0], [3.0, 4.0]])
    spec = TransformInstrument(h=TransformId.IDENTITY, columns=[0, 1], combiner="sum")
    np.testing.assert_array_equal(build_instrument(spec, ds), [3.0, 7.0])


def test_instrument_errors():
    ds = _tiny([[2.0, 3.0], [1.0, 4.0]])
    with pytest.raises(errors.MissingExcluded) as info:
        build_instrument(ExcludedColumn(m=0), ds)
    assert info.value.exit_code == 3
    with pytest.raises(errors.IndexOutOfRange):
        build_instrument(ProductInstrument(i=0, j=2), ds)
    with pytest.raises(errors.IndexOutOfRange):
        build_instrument(ExcludedColumn(m=2), _tiny([[1.0], [2.0]], z=np.ones((2, 1))))
    with pytest.raises(pydantic.ValidationError):
        ProductInstrument(i=1, j=1)


def test_identity_transform_is_exact():
    x = np.random.default_rng(0).standard_normal((30, 3))
    assert np.array_equal(apply_transform(TransformId.IDENTITY, x), x)


def test_tanh_ratio_values():
    out = apply_transform(TransformId.TANH_RATIO, np.array([[0.0], [1e6], [-1e6]]))
    assert out[0, 0] == 0.0
    assert np.all(np.isfinite(out))
    assert out[1, 0] == pytest.approx(0.0, abs=1e-12)


def test_centered_exp_of_constant_column():
    np.testing.assert_array_equal(apply_transform("centered_exp", np.zeros((3, 1))), np.ones((3, 1)))


def test_log1p_domain():
    x = np.array([[0.0, 1.0], [2.0, -1.0]])
    with pytest.raises(errors.DomainError) as info:
        apply_transform(TransformId.LOG1P, x)
    assert (info.value.row, info.value.col) == (1, 1)


def test_saturation_linear_instrument():
    x = np.random.default_rng(2).standard_normal((500, 2))
    assert check_saturation(2.0 * x[:, 0] - x[:, 1], x).degenerate


def test_saturation_constant_instrument():
    x = np.random.default_rng(2).standard_normal((100, 2))
    assert check_saturation(np.full(100, 3.0), x).degenerate


def test_saturation_product_never_degenerate():
    for seed in range(50):
        x = np.random.default_rng(seed).standard_normal((10_000, 2))
        result = check_saturation(x[:, 0] * x[:, 1], x)
        assert not result.degenerate
        assert result.var_fperp > 0.5


def test_saturation_group_dummies():
    rng = np.random.default_rng(4)
    group = rng.integers(0, 3, size=300)
    dummies = np.column_stack([group == 1, group == 2]).astype(float)
    f = np.array([0.3, -1.2, 4.0])[group]
    assert check_saturation(f, dummies).degenerate


def test_relevance_perfect():
    f_perp = residualize(np.random.default_rng(1).standard_normal(200) ** 2, np.ones((200, 1)))
    result = check_relevance(f_perp, f_perp)
    assert result.first_stage_f == F_CAP
    assert result.cov_dfperp == pytest.approx(sample_var(f_perp))


def test_relevance_null_distribution():
    small = 0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2000, 2))
        f_perp = residualize(x[:, 0] * x[:, 1], add_intercept(x))
        small += check_relevance(rng.standard_normal(2000), f_perp).first_stage_f < 10.0
    assert small >= 190


def test_relevance_moment():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((10_000, 2))
    f_perp = residualize(x[:, 0] * x[:, 1], add_intercept(x))
    noise = rng.standard_normal(10_000)
    result = check_relevance(0.5 * f_perp + noise, f_perp)
    assert abs(result.cov_dfperp - 0.5 * sample_var(f_perp)) < 4.0 * cov_se(noise, f_perp)
    assert result.first_stage_f > 100.0


def test_constructed_instrument_is_exogenous():
    spec = LinearInteraction()
    inside = 0
    for seed in range(100):
        ds = simulate(spec, 2000, seed=seed)
        eps = structural_noise(ds, spec)
        f = build_instrument(ProductInstrument(), ds)
        inside += abs(sample_cov(f, eps)) < 4.0 * cov_se(f, eps)
    assert inside >= 98
