"""Single-matrix l1-penalized precision estimation (graphical lasso).

Solves ``min_{Omega > 0} tr(S Omega) - log det Omega + lam * sum_{i != j} |omega_ij|``
by block coordinate descent on the covariance ``W``, each column solved as a
lasso by cyclic coordinate descent. The diagonal is not penalized, so
``w_ii = s_ii`` at the optimum.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .core import NotPositiveDefiniteError, cholesky, inv_pd, l1_offdiag, logdet_pd

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GlassoSettings:
    lam: float = 0.0
    max_sweeps: int = 200
    dual_gap_tol: float = 1e-6
    inner_cd_tol: float = 1e-8
    max_inner: int = 1000

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lambda must be finite and >= 0")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.dual_gap_tol <= 0 or self.inner_cd_tol <= 0:
            raise ValueError("tolerances must be > 0")

    def with_lambda(self, lam: float) -> "GlassoSettings":
        return GlassoSettings(lam, self.max_sweeps, self.dual_gap_tol, self.inner_cd_tol, self.max_inner)


class GlassoResult(NamedTuple):
    omega: np.ndarray
    w: np.ndarray
    gap: float
    kkt: float
    converged: bool
    sweeps: int


class GlassoConvergenceWarning(RuntimeWarning):
    pass


def glasso_objective(S, omega, lam) -> float:
    """``tr(S Omega) - log det Omega + lam |Omega^-|_1`` (``inf`` if not PD)."""
    try:
        ld = logdet_pd(omega)
    except NotPositiveDefiniteError:
        return np.inf
    return float(np.sum(S * omega)) - ld + lam * l1_offdiag(omega)


def kkt_residual(S, omega, W, lam) -> float:
    """Largest violation of the glasso stationarity conditions at ``omega``.

    ``W`` must be ``omega^{-1}``. Off-diagonal zeros need
    ``|s_ij - w_ij| <= lam``; nonzeros need ``s_ij - w_ij + lam sign = 0``;
    the diagonal needs ``s_ii = w_ii``.
    """
    R = S - W
    off = ~np.eye(S.shape[0], dtype=bool)
    nz = (omega != 0) & off
    zero = (omega == 0) & off
    res = np.max(np.abs(np.diag(R)), initial=0.0)
    if nz.any():
        res = max(res, np.max(np.abs(R[nz] + lam * np.sign(omega[nz]))))
    if zero.any():
        res = max(res, np.max(np.abs(R[zero])) - lam)
    return float(max(res, 0.0))


def _precision_from_columns(W, B):
    """Precision implied by the column coefficients, or ``None`` when a
    column is not yet consistent with ``W`` (nonpositive Schur term)."""
    denom = np.diag(W) - np.einsum("ij,ij->j", W, B)
    if not np.all(denom > 0):
        return None
    wjj = 1.0 / denom
    omega = -B * wjj[None, :]
    np.fill_diagonal(omega, wjj)
    return 0.5 * (omega + omega.T)


def _initial_state(S, warm_start):
    p = S.shape[0]
    B = np.zeros((p, p))
    W = S.copy()
    if warm_start is None:
        return W, B
    warm = np.asarray(warm_start, dtype=float)
    d = np.diag(warm)
    B = -warm / d[None, :]
    np.fill_diagonal(B, 0.0)
    try:
        W0 = inv_pd(warm, "warm start")
        np.fill_diagonal(W0, np.diag(S))
        cholesky(W0)
        W = W0
    except NotPositiveDefiniteError:
        pass
    return np.ascontiguousarray(W), np.ascontiguousarray(B)


def _start_candidate(S, lam, warm_start):
    """The PD starting point as a fallback iterate: the warm start if given
    and PD, else ``diag(1/s_ii)``."""
    omega = np.diag(1.0 / np.diag(S))
    if warm_start is not None:
        try:
            cholesky(warm_start)
            omega = 0.5 * (np.asarray(warm_start, dtype=float) + np.asarray(warm_start).T)
        except NotPositiveDefiniteError:
            pass
    W = inv_pd(omega)
    return omega, W, kkt_residual(S, omega, W, lam), 0


def glasso_solve(S, settings: GlassoSettings, warm_start=None) -> GlassoResult:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("S must be square")
    scale = max(1.0, float(np.max(np.abs(S), initial=0.0)))
    if np.max(np.abs(S - S.T), initial=0.0) > 1e-10 * scale:
        raise ValueError("S must be symmetric")
    if np.any(np.diag(S) <= 0):
        raise ValueError("S must have a strictly positive diagonal")
    S = 0.5 * (S + S.T)
    lam = float(settings.lam)
    p = S.shape[0]
    if p == 1:
        om = 1.0 / S
        return GlassoResult(om, S.copy(), 0.0, 0.0, True, 0)

    W, B = _initial_state(S, warm_start)
    best = _start_candidate(S, lam, warm_start)
    for sweep in range(1, settings.max_sweeps + 1):
        _kernels.sweep(S, W, B, lam, settings.inner_cd_tol, settings.max_inner)
        omega = _precision_from_columns(W, B)
        if omega is None or not np.all(np.isfinite(omega)):
            continue
        try:
            W_exact = inv_pd(omega)
        except NotPositiveDefiniteError:
            continue
        kkt = kkt_residual(S, omega, W_exact, lam)
        if not np.isfinite(kkt):
            continue
        if best is None or kkt < best[2]:
            best = (omega, W_exact, kkt, sweep)
        if kkt <= settings.dual_gap_tol:
            break
    omega, W_exact, kkt, sweep = best
    gap = float(np.sum(S * omega)) + lam * l1_offdiag(omega) - p
    converged = kkt <= settings.dual_gap_tol
    if not converged:
        logger.warning("glasso did not converge in %d sweeps (kkt=%.3g)", settings.max_sweeps, kkt)
    return GlassoResult(omega, W_exact, gap, kkt, converged, sweep)
