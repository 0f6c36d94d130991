"""Tuning-parameter selection over a (lambda1, lambda2) grid by extended BIC
or J-fold cross-validation."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .core import (
    BlockCovariance,
    FitReport,
    PanelDataset,
    PenaltyPair,
    block_covariance,
    dense_precision,
    edge_pairs,
    joint_log_likelihood,
    logdet_pd,
)
from .em import EmSettings, alpha_em_fit, em_fit
from .onestep import onestep_fit, projected_covariances

logger = logging.getLogger(__name__)

METHODS = ("onestep", "em", "alpha-em")


@dataclass(frozen=True)
class LambdaGrid:
    lambda1_values: tuple[float, ...]
    lambda2_values: tuple[float, ...] = ()
    tie_to_equal: bool = False

    def __post_init__(self):
        l1 = tuple(float(v) for v in self.lambda1_values)
        l2 = tuple(float(v) for v in self.lambda2_values) if not self.tie_to_equal else l1
        for vals in (l1, l2):
            if not vals:
                raise ValueError("grid values must be nonempty")
            if any(v <= 0 or not math.isfinite(v) for v in vals):
                raise ValueError("grid values must be positive")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError("grid values must be strictly increasing")
        object.__setattr__(self, "lambda1_values", l1)
        object.__setattr__(self, "lambda2_values", l2)

    def points(self) -> list[PenaltyPair]:
        if self.tie_to_equal:
            return [PenaltyPair(v, v) for v in self.lambda1_values]
        return [PenaltyPair(a, b) for a in self.lambda1_values for b in self.lambda2_values]

    def path(self) -> list[PenaltyPair]:
        """Points ordered from sparse to dense in a snake so that consecutive
        points differ in one coordinate (used for warm starts)."""
        if self.tie_to_equal:
            return [PenaltyPair(v, v) for v in reversed(self.lambda1_values)]
        out = []
        l2 = list(reversed(self.lambda2_values))
        for i, a in enumerate(reversed(self.lambda1_values)):
            for b in l2 if i % 2 == 0 else reversed(l2):
                out.append(PenaltyPair(a, b))
        return out


def lambda_anchor(p: int, n: int) -> float:
    return math.sqrt(math.log(p) / n)


def default_grid(
    p: int, n: int, size: int = 10, span: float = 4.0, scale1: float = 1.0, scale2: float = 1.0,
    tie_to_equal: bool = False,
) -> LambdaGrid:
    """``size`` log-spaced values from ``c/span`` to ``c*span`` around
    ``c = sqrt(log p / n)``, optionally multiplied by per-layer scales."""
    base = lambda_anchor(max(p, 2), n) * np.geomspace(1.0 / span, span, size)
    return LambdaGrid(tuple(base * scale1), tuple(base * scale2), tie_to_equal)


def scaled_default_grid(data: PanelDataset, size: int = 10, span: float = 4.0) -> LambdaGrid:
    """:func:`default_grid` with each layer family scaled by the mean diagonal
    of its moment covariance estimate.

    The glasso penalty acts on covariance entries, so a layer whose variance
    is a fraction of the others needs a proportionally smaller penalty.
    """
    covs = projected_covariances(block_covariance(data))
    s2 = float(np.mean(np.diag(covs[0])))
    s1 = float(np.mean([np.mean(np.diag(c)) for c in covs[1:]]))
    return default_grid(data.p, data.n, size, span, s1, s2)


def nonzero_pairs(fit: FitReport) -> int:
    return sum(len(edge_pairs(o)) for o in fit.estimate.omegas)


def log_binomial(N: int, k: int) -> float:
    return float(gammaln(N + 1) - gammaln(k + 1) - gammaln(N - k + 1))


def ebic_score(fit: FitReport, cov: BlockCovariance, n: int, gamma: float = 0.1) -> float:
    """``-2 loglik + nu log n + 2 gamma log C(K p (p-1) / 2, nu)``.

    ``nu`` counts unordered nonzero off-diagonal pairs over all layers. A
    model with ``nu`` beyond the model-space size scores ``inf``.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    ll = joint_log_likelihood(cov, fit.estimate, n)
    if not math.isfinite(ll):
        raise ValueError("non-finite log-likelihood")
    K, p = fit.estimate.k_categories, fit.estimate.p
    nu = nonzero_pairs(fit)
    space = K * p * (p - 1) // 2
    if nu > space:
        return math.inf
    return -2.0 * ll + nu * math.log(n) + 2.0 * gamma * log_binomial(space, nu)


def predictive_nll(sigma, omega) -> float:
    return float(np.sum(sigma * omega)) - logdet_pd(omega, "Omega_Y")


def _fit_one(method, data, penalties, settings, init=None, cov=None) -> FitReport:
    if method == "onestep":
        gs = settings.glasso if isinstance(settings, EmSettings) else settings
        return onestep_fit(data, penalties, gs, cov=cov, warm=init)
    settings = settings if isinstance(settings, EmSettings) else EmSettings()
    if method == "em":
        return em_fit(data, penalties, settings, init=init, cov=cov)
    if method == "alpha-em":
        s = EmSettings(settings.delta, settings.max_iterations, settings.glasso, True)
        return alpha_em_fit(data, penalties, s, init=init, cov=cov)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def fit_path(data, points, method, settings=None, warm_start=True, cov=None):
    """Fit along ``points`` in order; EM fits start from the previous estimate.

    Returns ``{PenaltyPair: FitReport or Exception}``.
    """
    cov = cov if cov is not None else block_covariance(data)
    out, prev = {}, None
    for pen in points:
        try:
            fit = _fit_one(method, data, pen, settings, init=prev if warm_start else None, cov=cov)
            prev = fit.estimate
            out[pen] = fit
        except Exception as exc:  # noqa: BLE001 - recorded per grid point
            logger.warning("fit failed at %s: %s", pen, exc)
            out[pen] = exc
    return out


def make_folds(n: int, J: int, seed: int = 0) -> list[np.ndarray]:
    if J < 2 or n < J:
        raise ValueError("need J >= 2 and n >= J")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, J)]


def _fold_scores(args):
    data, test_idx, points, method, settings, warm_start = args
    train_idx = np.setdiff1d(np.arange(data.n), test_idx)
    train = data.subset(train_idx)
    test = data.subset(test_idx)
    sigma = block_covariance(test).dense()
    fits = fit_path(train, points, method, settings, warm_start)
    scores = {}
    for pen, fit in fits.items():
        scores[pen] = math.nan if isinstance(fit, Exception) else predictive_nll(
            sigma, dense_precision(fit.estimate)
        )
    return scores


def _map(func, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(func, items))
    return [func(x) for x in items]


def cv_scores(
    data, points, J=5, method="em", settings=None, seed=0, folds=None, warm_start=True, jobs=1
) -> dict:
    """Summed held-out predictive negative log-likelihood per grid point."""
    folds = folds if folds is not None else make_folds(data.n, J, seed)
    for f in folds:
        if len(f) < 2:
            raise ValueError("every fold needs at least 2 individuals")
    per_fold = _map(_fold_scores, [(data, f, points, method, settings, warm_start) for f in folds], jobs)
    return {pen: float(sum(fs[pen] for fs in per_fold)) for pen in points}


def cv_score(data, penalties, J=5, method="em", settings=None, seed=0, folds=None) -> float:
    return cv_scores(data, [penalties], J, method, settings, seed, folds)[penalties]


@dataclass
class SelectionReport:
    chosen: PenaltyPair
    scores: dict
    criterion: str
    fits: dict = field(default_factory=dict, repr=False)
    failures: dict = field(default_factory=dict, repr=False)

    @property
    def chosen_fit(self) -> FitReport | None:
        return self.fits.get(self.chosen)


class SelectionError(RuntimeError):
    def __init__(self, failures: dict):
        super().__init__(
            "all grid points failed: " + "; ".join(f"{k}: {v}" for k, v in failures.items())
        )
        self.failures = failures


def argmin_with_tiebreak(scores: dict) -> PenaltyPair:
    """Minimum score; ties go to the larger ``lambda1 + lambda2``."""
    finite = {k: v for k, v in scores.items() if not math.isnan(v)}
    if not finite:
        raise ValueError("no finite scores")
    best = min(finite.values())
    tied = [k for k, v in finite.items() if v == best or math.isclose(v, best, rel_tol=1e-12)]
    return max(tied, key=lambda k: (k.lambda1 + k.lambda2, k.lambda1))


def select_lambda(
    data: PanelDataset,
    grid: LambdaGrid,
    criterion: str = "ebic",
    method: str = "em",
    settings=None,
    gamma: float = 0.1,
    J: int = 5,
    seed: int = 0,
    keep_fits: bool = True,
    jobs: int = 1,
) -> SelectionReport:
    points = grid.path()
    cov = block_covariance(data)
    fits = fit_path(data, points, method, settings, cov=cov)
    failures = {k: v for k, v in fits.items() if isinstance(v, Exception)}
    ok = {k: v for k, v in fits.items() if not isinstance(v, Exception)}
    if not ok:
        raise SelectionError(failures)
    if criterion == "ebic":
        raw = {k: ebic_score(v, cov, data.n, gamma) for k, v in ok.items()}
        label = f"ebic({gamma:g})"
    elif criterion == "cv":
        raw = cv_scores(data, points, J, method, settings, seed, jobs=jobs)
        raw = {k: s for k, s in raw.items() if k in ok}
        label = f"cv({J})"
    else:
        raise ValueError("criterion must be 'ebic' or 'cv'")
    # score map in grid order
    scores = {k: raw[k] for k in grid.points() if k in raw}
    chosen = argmin_with_tiebreak(scores)
    return SelectionReport(chosen, scores, label, ok if keep_fits else {chosen: ok[chosen]}, failures)


