"""Moment-based one-step estimator.

Systemic covariance from the average cross-category block, category
covariances by subtraction, eigenvalue-clipping PSD projection, then one
glasso solve per layer.
"""
from __future__ import annotations

import time

import numpy as np

from .core import (
    BlockCovariance,
    FitReport,
    PanelDataset,
    PenaltyPair,
    PrecisionStack,
    block_covariance,
    penalized_log_likelihood,
)
from .glasso import GlassoSettings, glasso_solve

DIAG_FLOOR = 1e-8


def sigma0_moment(cov: BlockCovariance) -> np.ndarray:
    K = cov.k_categories
    if K < 2:
        raise ValueError("K >= 2 categories are required")
    total = cov.blocks.sum(axis=(0, 1)) - np.einsum("kkij->ij", cov.blocks)
    out = total / (K * (K - 1))
    return 0.5 * (out + out.T)


def sigmak_moment(cov: BlockCovariance, sigma0, k: int) -> np.ndarray:
    if not 1 <= k <= cov.k_categories:
        raise IndexError(f"category index {k} out of range 1..{cov.k_categories}")
    out = cov.block(k, k) - sigma0
    return 0.5 * (out + out.T)


def psd_project(M) -> np.ndarray:
    """Clip negative eigenvalues, then floor the diagonal so glasso stays feasible."""
    M = np.asarray(M, dtype=float)
    scale = max(1.0, float(np.max(np.abs(M), initial=0.0)))
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-10 * scale:
        raise ValueError("psd_project expects a symmetric matrix")
    evals, evecs = np.linalg.eigh(0.5 * (M + M.T))
    out = (evecs * np.maximum(evals, 0.0)) @ evecs.T
    out = 0.5 * (out + out.T)
    floor = max(DIAG_FLOOR * float(np.max(np.diag(M))), DIAG_FLOOR)
    d = np.diag(out)
    np.fill_diagonal(out, np.maximum(d, floor))
    return out


def projected_covariances(cov: BlockCovariance) -> np.ndarray:
    """``(K+1, p, p)`` PSD-projected moment estimates, systemic first."""
    s0 = sigma0_moment(cov)
    layers = [s0] + [sigmak_moment(cov, s0, k) for k in range(1, cov.k_categories + 1)]
    return np.stack([psd_project(m) for m in layers])


def fit_layers(covs, penalties: PenaltyPair, settings: GlassoSettings, warm=None):
    """One glasso per layer; returns (omegas, all_converged)."""
    omegas, ok = [], True
    for k, S in enumerate(covs):
        res = glasso_solve(
            S,
            settings.with_lambda(penalties.for_layer(k)),
            None if warm is None else warm[k],
        )
        ok &= res.converged
        omegas.append(res.omega)
    return np.stack(omegas), ok


def onestep_fit(
    data: PanelDataset,
    penalties: PenaltyPair,
    settings: GlassoSettings | None = None,
    cov: BlockCovariance | None = None,
    warm: PrecisionStack | None = None,
) -> FitReport:
    """Moment estimates plus one glasso per layer. ``warm`` only seeds the
    glasso iterations; the minimizer does not depend on it."""
    settings = settings or GlassoSettings()
    t0 = time.perf_counter()
    cov = cov if cov is not None else block_covariance(data)
    omegas, ok = fit_layers(
        projected_covariances(cov), penalties, settings, None if warm is None else warm.omegas
    )
    stack = PrecisionStack(omegas)
    obj = penalized_log_likelihood(cov, stack, data.n, penalties)
    return FitReport(
        estimate=stack,
        objective_trace=np.array([obj]),
        iterations=1,
        converged=ok,
        wall_time_seconds=time.perf_counter() - t0,
        method="onestep",
        penalties=penalties,
        flags=() if ok else ("glasso_not_converged",),
    )
