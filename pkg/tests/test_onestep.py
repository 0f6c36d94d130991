import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twolayer.core import (
    BlockCovariance,
    PanelDataset,
    PenaltyPair,
    PrecisionStack,
    block_covariance,
    center_and_wrap,
)
from twolayer.glasso import GlassoSettings, kkt_residual
from twolayer.onestep import (
    onestep_fit,
    projected_covariances,
    psd_project,
    sigma0_moment,
    sigmak_moment,
)
from twolayer.simulate import ScenarioSpec, sample_from_stack, sample_panel

UNIT_VECTOR_COV = BlockCovariance.from_dense(np.outer([1, 0, 1, 0], [1, 0, 1, 0]).astype(float), 2, n=1)


def test_sigma0_unit_vector_case():
    np.testing.assert_array_equal(sigma0_moment(UNIT_VECTOR_COV), [[1, 0], [0, 0]])
    np.testing.assert_array_equal(sigmak_moment(UNIT_VECTOR_COV, sigma0_moment(UNIT_VECTOR_COV), 1), 0)


def test_sigma0_naive_sum(rng):
    cov = block_covariance(center_and_wrap(rng.standard_normal((15, 12)), 3, 4))
    naive = np.zeros((4, 4))
    for l in range(3):
        for m in range(3):
            if l != m:
                naive += cov.blocks[l, m]
    np.testing.assert_allclose(sigma0_moment(cov), naive / 6, atol=1e-14)


def test_sigma0_shrinks_for_independent_categories():
    rng = np.random.default_rng(3)
    n, p = 4000, 6
    cov = block_covariance(center_and_wrap(rng.standard_normal((n, 3 * p)), 3, p))
    assert np.max(np.abs(sigma0_moment(cov))) <= 4 * np.sqrt(np.log(p) / n)


def test_sigma0_needs_two_categories():
    cov = BlockCovariance(np.eye(2)[None, None])
    with pytest.raises(ValueError):
        sigma0_moment(cov)


def test_sigmak_with_zero_sigma0(rng):
    cov = block_covariance(center_and_wrap(rng.standard_normal((9, 6)), 2, 3))
    np.testing.assert_allclose(sigmak_moment(cov, np.zeros((3, 3)), 2), cov.block(2, 2))
    with pytest.raises(IndexError):
        sigmak_moment(cov, np.zeros((3, 3)), 3)


def test_moments_add_back_to_diagonal_blocks(rng):
    cov = block_covariance(center_and_wrap(rng.standard_normal((11, 12)), 3, 4))
    s0 = sigma0_moment(cov)
    for k in range(1, 4):
        np.testing.assert_allclose(s0 + sigmak_moment(cov, s0, k), cov.block(k, k), atol=1e-15)


def test_sigmak_monte_carlo():
    spec = ScenarioSpec("III", p=10, n=5000, K=3, seed=11)
    data, truth = sample_panel(spec)
    cov = block_covariance(data)
    s0 = sigma0_moment(cov)
    sig = truth.covariances()
    for k in range(1, 4):
        assert np.max(np.abs(sigmak_moment(cov, s0, k) - sig[k])) <= 0.15


# ---------------------------------------------------------------- projection

def test_psd_project_fixed_point():
    np.testing.assert_allclose(psd_project(np.eye(3)), np.eye(3), atol=1e-15)


def test_psd_project_clips_and_floors():
    np.testing.assert_allclose(psd_project(np.diag([1.0, -2.0])), np.diag([1.0, 1e-8]), atol=1e-15)


def test_psd_project_two_by_two():
    out = psd_project(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(out, 0.5 * np.ones((2, 2)), atol=1e-14)


def test_psd_project_rejects_asymmetric():
    with pytest.raises(ValueError):
        psd_project(np.array([[1.0, 0.5], [0.0, 1.0]]))


@given(seed=st.integers(0, 2**32 - 1), p=st.integers(1, 8))
def test_psd_project_idempotent_and_psd(seed, p):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((p, p))
    M = M + M.T
    once = psd_project(M)
    assert np.linalg.eigvalsh(once)[0] >= -1e-12
    assert np.all(np.diag(once) > 0)
    np.testing.assert_allclose(psd_project(once), once, atol=1e-10)


# ---------------------------------------------------------------- fit

def test_onestep_large_lambda_is_diagonal():
    om = np.stack([np.diag(np.linspace(1, 2, 5))] * 3)
    data = sample_from_stack(PrecisionStack(om), 300, seed=1)
    fit = onestep_fit(data, PenaltyPair(10.0, 10.0))
    assert fit.edge_count == 0
    assert fit.iterations == 1 and len(fit.objective_trace) == 1


def test_onestep_duplicated_blocks_degenerate():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((50, 3))
    data = center_and_wrap(np.hstack([y, y]), 2, 3)
    fit = onestep_fit(data, PenaltyPair(0.1, 0.1))
    covs = projected_covariances(block_covariance(data))
    assert np.max(np.abs(covs[1])) <= 1e-7
    assert np.min(np.diag(fit.estimate.omegas[1])) > 1e6


def test_onestep_layers_satisfy_kkt(rng):
    data, _ = sample_panel(ScenarioSpec("I", p=15, n=200, K=3, seed=4))
    pen = PenaltyPair(0.1, 0.05)
    fit = onestep_fit(data, pen, GlassoSettings())
    covs = projected_covariances(block_covariance(data))
    for k, (S, om) in enumerate(zip(covs, fit.estimate.omegas)):
        assert kkt_residual(S, om, np.linalg.inv(om), pen.for_layer(k)) <= 1e-5


def test_onestep_warm_start_same_estimate():
    data, _ = sample_panel(ScenarioSpec("II", p=12, n=150, K=3, seed=2))
    settings = GlassoSettings(dual_gap_tol=1e-9)
    cold = onestep_fit(data, PenaltyPair(0.08, 0.08), settings)
    warm = onestep_fit(data, PenaltyPair(0.08, 0.08), settings, warm=onestep_fit(data, PenaltyPair(0.2, 0.2)).estimate)
    np.testing.assert_allclose(warm.estimate.omegas, cold.estimate.omegas, atol=1e-6)


def test_onestep_rejects_uncentered():
    with pytest.raises(ValueError):
        onestep_fit(PanelDataset(np.ones((4, 4)), 2, 2, centered=False), PenaltyPair(0.1, 0.1))
