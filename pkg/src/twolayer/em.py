"""Graphical EM for the two-layer model, with optional per-category systemic
intensities ``alpha_k``.

The E-step replaces the latent systemic vectors by their conditional moments
given the data; the M-step is then ``K + 1`` independent glasso problems.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BlockCovariance,
    FitReport,
    NotPositiveDefiniteError,
    PanelDataset,
    PenaltyPair,
    PrecisionStack,
    block_covariance,
    coupling_moment,
    inv_pd,
    penalized_log_likelihood,
)
from .glasso import GlassoSettings, glasso_objective, glasso_solve
from .onestep import fit_layers, projected_covariances

logger = logging.getLogger(__name__)

ALPHA_FLOOR = 1e-6


class EMError(RuntimeError):
    def __init__(self, iteration: int, message: str, trace=None):
        super().__init__(f"EM iteration {iteration}: {message}")
        self.iteration = iteration
        self.trace = None if trace is None else np.asarray(trace)


@dataclass(frozen=True)
class EmSettings:
    delta: float | None = None  # None -> 1e-4 * p
    max_iterations: int = 100
    glasso: GlassoSettings = field(default_factory=GlassoSettings)
    estimate_alphas: bool = False

    def __post_init__(self):
        if self.delta is not None and self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def threshold(self, p: int) -> float:
        return 1e-4 * p if self.delta is None else self.delta


def _sym(M):
    return 0.5 * (M + M.T)


def conditional_moments(cov: BlockCovariance, stack: PrecisionStack):
    """``(A^{-1}, U, E[z z^T])`` averaged over individuals.

    ``U[k] A^{-1}`` is the average of ``y_k E[z | y]^T``.
    """
    try:
        Ainv = inv_pd(stack.a_matrix(), "A")
    except NotPositiveDefiniteError as exc:
        raise np.linalg.LinAlgError("A is singular") from exc
    U, M = coupling_moment(cov, stack)
    ezz = _sym(Ainv + Ainv @ M @ Ainv)
    return Ainv, U, ezz


def estep(cov: BlockCovariance, stack: PrecisionStack) -> np.ndarray:
    """Expected layer covariances ``(K+1, p, p)``: systemic first, then
    ``E[(y_k - alpha_k z)(y_k - alpha_k z)^T]`` for each category."""
    Ainv, U, ezz = conditional_moments(cov, stack)
    out = [ezz]
    for k in range(stack.k_categories):
        a = stack.alphas[k]
        cross = U[k] @ Ainv
        out.append(_sym(cov.blocks[k, k] - a * (cross + cross.T) + a * a * ezz))
    return np.stack(out)


def alpha_update(cov: BlockCovariance, stack: PrecisionStack) -> np.ndarray:
    """Closed-form maximizer of the expected complete-data likelihood in
    ``alpha`` with the layers held fixed; moments taken at ``stack``."""
    Ainv, U, ezz = conditional_moments(cov, stack)
    alphas = np.empty(stack.k_categories)
    for k in range(stack.k_categories):
        om = stack.omegas[k + 1]
        num = float(np.sum(om * (U[k] @ Ainv).T))
        den = float(np.sum(om * ezz))
        alphas[k] = num / den
    return alphas


def _mstep(sig_dot, previous, penalties, gsettings, iteration):
    omegas = []
    for k, S in enumerate(sig_dot):
        lam = penalties.for_layer(k)
        try:
            res = glasso_solve(S, gsettings.with_lambda(lam), previous[k])
        except (ValueError, NotPositiveDefiniteError) as exc:
            raise EMError(iteration, f"glasso failed on layer {k}: {exc}") from exc
        # keep the previous layer unless the new one improves the subproblem,
        # so inexact inner solves cannot break ascent
        if glasso_objective(S, res.omega, lam) <= glasso_objective(S, previous[k], lam):
            omegas.append(res.omega)
        else:
            omegas.append(np.array(previous[k]))
    return np.stack(omegas)


def _run_em(data, penalties, settings, init, estimate_alphas, cov=None) -> FitReport:
    t0 = time.perf_counter()
    cov = cov if cov is not None else block_covariance(data)
    n, p = data.n, data.p
    delta = settings.threshold(p)
    flags = []

    if init is None:
        omegas, _ = fit_layers(projected_covariances(cov), penalties, settings.glasso)
        stack = PrecisionStack(omegas)
    else:
        if init.k_categories != data.k_categories or init.p != p:
            raise ValueError("init stack dimensions do not match the data")
        stack = init if estimate_alphas else PrecisionStack(init.omegas)
    trace = [penalized_log_likelihood(cov, stack, n, penalties)]
    iterations = 1 if init is None else 0
    converged = False

    while iterations < settings.max_iterations:
        iterations += 1
        try:
            sig_dot = estep(cov, stack)
            omegas = _mstep(sig_dot, stack.omegas, penalties, settings.glasso, iterations)
        except np.linalg.LinAlgError as exc:
            raise EMError(iterations, str(exc), trace) from exc
        except EMError as exc:
            exc.trace = np.asarray(trace)
            raise
        alphas = stack.alphas
        if estimate_alphas:
            alphas = alpha_update(cov, PrecisionStack(omegas, alphas, validate=False))
            if np.any(alphas < ALPHA_FLOOR):
                flags.append(f"alpha_collapse@{iterations}")
                alphas = np.maximum(alphas, ALPHA_FLOOR)
        stack = PrecisionStack(omegas, alphas)
        trace.append(penalized_log_likelihood(cov, stack, n, penalties))
        if abs(trace[-1] - trace[-2]) < delta:
            converged = True
            break

    if estimate_alphas:
        stack = normalize_alphas(stack)
    return FitReport(
        estimate=stack,
        objective_trace=np.asarray(trace),
        iterations=iterations,
        converged=converged,
        wall_time_seconds=time.perf_counter() - t0,
        method="alpha-em" if estimate_alphas else "em",
        penalties=penalties,
        flags=tuple(dict.fromkeys(flags)),
    )


def normalize_alphas(stack: PrecisionStack) -> PrecisionStack:
    """Rescale so the largest systemic variance is 1, keeping
    ``alpha_k^2 Sigma_0`` unchanged."""
    c = float(np.max(np.diag(inv_pd(stack.omegas[0], "layer 0"))))
    omegas = np.array(stack.omegas)
    omegas[0] = omegas[0] * c
    return PrecisionStack(omegas, stack.alphas * np.sqrt(c))


def em_fit(
    data: PanelDataset,
    penalties: PenaltyPair,
    settings: EmSettings | None = None,
    init: PrecisionStack | None = None,
    cov: BlockCovariance | None = None,
) -> FitReport:
    settings = settings or EmSettings()
    return _run_em(data, penalties, settings, init, estimate_alphas=False, cov=cov)


def alpha_em_fit(
    data: PanelDataset,
    penalties: PenaltyPair,
    settings: EmSettings | None = None,
    init: PrecisionStack | None = None,
    cov: BlockCovariance | None = None,
) -> FitReport:
    """EM over layers and systemic intensities.

    With ``settings.estimate_alphas`` false this is exactly :func:`em_fit`.
    """
    settings = settings or EmSettings(estimate_alphas=True)
    return _run_em(data, penalties, settings, init, settings.estimate_alphas, cov=cov)
