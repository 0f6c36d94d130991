import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import hadamard

from twolayer import hypotest
from twolayer.core import center_and_wrap
from twolayer.simulate import ScenarioSpec, sample_panel


@pytest.fixture(scope="module")
def model_data():
    return sample_panel(ScenarioSpec("III", p=5, n=80, K=3, seed=1))[0]


def test_matrix_norms():
    M = np.array([[1.0, -2.0], [3.0, 0.0]])
    assert hypotest.matrix_norm(M, "fro") == pytest.approx(np.sqrt(14))
    assert hypotest.matrix_norm(M, "inf") == 3.0
    assert hypotest.matrix_norm(M, "l1") == 6.0
    with pytest.raises(ValueError):
        hypotest.matrix_norm(M, "nuclear")


def test_add_one_p_value():
    assert hypotest.add_one_p_value(5.0, [1, 2, 3]) == 0.25
    assert hypotest.add_one_p_value(0.0, [1, 2, 3]) == 1.0


def test_shared_statistic_zero_iff_orthogonal_blocks():
    H = hadamard(8).astype(float)[:, 1:]  # columns orthogonal to the ones vector
    values = np.hstack([H[:, 0:2], H[:, 2:4], H[:, 4:6]])
    data = center_and_wrap(values, 3, 2)
    assert hypotest.shared_statistic(hypotest._split(data.values, 3, 2), 8) == 0.0
    values[:, 2] = H[:, 0]
    data = center_and_wrap(values, 3, 2)
    assert hypotest.shared_statistic(hypotest._split(data.values, 3, 2), 8) > 0


@given(seed=st.integers(0, 10**6))
def test_statistics_nonnegative(seed):
    rng = np.random.default_rng(seed)
    data = center_and_wrap(rng.standard_normal((10, 9)), 3, 3)
    assert hypotest.shared_statistic(hypotest._split(data.values, 3, 3), 10) >= 0
    assert hypotest.spread_statistic(hypotest.cross_blocks(data.values, 3, 3)) >= 0


def test_spread_zero_for_identical_categories(rng):
    y = rng.standard_normal((20, 3))
    data = center_and_wrap(np.hstack([y, y, y]), 3, 3)
    assert hypotest.spread_statistic(hypotest.cross_blocks(data.values, 3, 3)) == pytest.approx(0.0, abs=1e-14)


def test_sigma0_result_contract(model_data):
    res = hypotest.test_sigma0_zero(model_data, n_perm=99, seed=4)
    stat, p, draws = res
    assert 0 < p <= 1 and len(draws) == 99
    assert res.as_dict()["n_resamples"] == 99
    again = hypotest.test_sigma0_zero(model_data, n_perm=99, seed=4)
    np.testing.assert_array_equal(again.null_draws, draws)
    assert again.p_value == p


def test_equal_blocks_result_contract(model_data):
    res = hypotest.test_equal_cross_blocks(model_data, n_boot=99, seed=2, norm="inf")
    assert 0 < res.p_value <= 1 and res.norm == "inf"
    assert res.flags == ()


def test_parallel_draws_match_serial(model_data):
    a = hypotest.test_sigma0_zero(model_data, n_perm=99, seed=8, jobs=1)
    b = hypotest.test_sigma0_zero(model_data, n_perm=99, seed=8, jobs=2)
    np.testing.assert_array_equal(a.null_draws, b.null_draws)


def test_two_categories_flagged():
    data, _ = sample_panel(ScenarioSpec("III", p=4, n=60, K=2, seed=3))
    res = hypotest.test_equal_cross_blocks(data, n_boot=99, seed=0)
    assert "single_block_pair" in res.flags


def test_poorly_conditioned_null_warns(rng):
    data = center_and_wrap(rng.standard_normal((5, 12)), 3, 4)
    with pytest.warns(RuntimeWarning):
        res = hypotest.test_equal_cross_blocks(data, n_boot=99, seed=0)
    assert "null_poorly_conditioned" in res.flags


def test_equal_blocks_null_is_pd_with_common_cross_block(model_data):
    sigma, shifted, root = hypotest.equal_blocks_null(model_data)
    np.testing.assert_allclose(root @ root.T, sigma, atol=1e-12)
    assert np.linalg.eigvalsh(sigma)[0] > 0
    p = model_data.p
    np.testing.assert_allclose(sigma[0:p, p:2 * p], sigma[p:2 * p, 2 * p:3 * p], atol=1e-10)
    assert shifted == 0.0


def test_validation(model_data):
    with pytest.raises(ValueError):
        hypotest.test_sigma0_zero(model_data, n_perm=50)
    with pytest.raises(ValueError):
        hypotest.test_equal_cross_blocks(model_data, norm="max")
    tiny = center_and_wrap(np.arange(12.0).reshape(2, 6) ** 2, 2, 3)
    with pytest.raises(ValueError):
        hypotest.test_sigma0_zero(tiny)
