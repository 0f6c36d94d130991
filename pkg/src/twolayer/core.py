"""Data model and likelihood algebra for the two-layer Gaussian graphical model.

Observations for individual ``i`` in category ``k`` decompose as
``y_{k,i} = x_{k,i} + alpha_k * z_i`` where ``z_i`` is the systemic vector
shared across categories. Layer index 0 of a :class:`PrecisionStack` is the
systemic precision; indices ``1..K`` are the category-specific precisions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

LOG_2PI = float(np.log(2.0 * np.pi))


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix that must be positive definite fails to factor."""


def _as_float_array(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def cholesky(M, name="matrix"):
    """Lower Cholesky factor; factorization failure is the PD-violation signal."""
    if not np.all(np.isfinite(M)):
        raise NotPositiveDefiniteError(f"{name} has non-finite entries")
    try:
        return linalg.cholesky(M, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{name} is not positive definite") from exc


def logdet_pd(M, name="matrix"):
    L = cholesky(M, name)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def inv_pd(M, name="matrix"):
    """Inverse of a symmetric PD matrix through its Cholesky factor, symmetrized."""
    L = cholesky(M, name)
    Linv = linalg.solve_triangular(L, np.eye(M.shape[0]), lower=True, check_finite=False)
    out = Linv.T @ Linv
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class PanelDataset:
    """``n`` individuals observed on ``p`` variables in each of ``K`` categories.

    ``values`` is ``n x (K*p)``; row ``i`` is ``(y_{1,i}, ..., y_{K,i})``.
    """

    values: np.ndarray
    k_categories: int
    p: int
    centered: bool = True

    def __post_init__(self):
        values = _as_float_array(self.values, "values")
        if values.ndim != 2:
            raise ValueError("values must be a 2-d array")
        if self.k_categories < 2:
            raise ValueError("K >= 2 categories are required for identifiability")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if values.shape[1] != self.k_categories * self.p:
            raise ValueError(
                f"expected {self.k_categories * self.p} columns (K*p), got {values.shape[1]}"
            )
        if self.centered:
            n = values.shape[0]
            if np.max(np.abs(values.sum(axis=0)), initial=0.0) > 1e-10 * max(n, 1) * max(
                1.0, float(np.max(np.abs(values), initial=0.0))
            ):
                raise ValueError("values flagged centered but column sums are not zero")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def category(self, k: int) -> np.ndarray:
        """``n x p`` block for category ``k`` (1-based, matching stack indices)."""
        if not 1 <= k <= self.k_categories:
            raise IndexError(f"category index {k} out of range 1..{self.k_categories}")
        return self.values[:, (k - 1) * self.p : k * self.p]

    def subset(self, rows) -> "PanelDataset":
        """Rows ``rows`` re-centered as a new dataset."""
        return center_and_wrap(self.values[rows], self.k_categories, self.p)


def center_and_wrap(raw, K: int, p: int) -> PanelDataset:
    raw = _as_float_array(raw, "raw")
    if raw.ndim != 2:
        raise ValueError("raw data must be a 2-d array")
    if raw.shape[0] < 2:
        raise ValueError("need at least 2 individuals")
    if K < 2:
        raise ValueError("K >= 2 categories are required for identifiability")
    if p < 1 or raw.shape[1] != K * p:
        raise ValueError(f"expected {K * p} columns (K*p), got {raw.shape[1]}")
    centered = raw - raw.mean(axis=0, keepdims=True)
    return PanelDataset(centered, K, p, centered=True)


@dataclass(frozen=True)
class BlockCovariance:
    """Sample covariance of the stacked observations, kept as ``K x K`` blocks.

    ``blocks[l, m]`` is the ``p x p`` cross covariance of categories ``l+1``
    and ``m+1`` (0-based storage).
    """

    blocks: np.ndarray
    n: int = 0

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=float)
        if b.ndim != 4 or b.shape[0] != b.shape[1] or b.shape[2] != b.shape[3]:
            raise ValueError("blocks must have shape (K, K, p, p)")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @property
    def k_categories(self) -> int:
        return self.blocks.shape[0]

    @property
    def p(self) -> int:
        return self.blocks.shape[2]

    def block(self, l: int, m: int) -> np.ndarray:
        """Block for categories ``l`` and ``m`` (1-based)."""
        return self.blocks[l - 1, m - 1]

    def dense(self) -> np.ndarray:
        K, p = self.k_categories, self.p
        return self.blocks.transpose(0, 2, 1, 3).reshape(K * p, K * p)

    @classmethod
    def from_dense(cls, S, K: int, n: int = 0) -> "BlockCovariance":
        S = np.asarray(S, dtype=float)
        p = S.shape[0] // K
        return cls(S.reshape(K, p, K, p).transpose(0, 2, 1, 3).copy(), n=n)


def block_covariance(data: PanelDataset) -> BlockCovariance:
    if not data.centered:
        raise ValueError("block covariance requires centered data")
    y = data.values
    S = (y.T @ y) / data.n
    S = 0.5 * (S + S.T)
    return BlockCovariance.from_dense(S, data.k_categories, n=data.n)


@dataclass(frozen=True)
class PenaltyPair:
    lambda1: float
    lambda2: float

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
            object.__setattr__(self, name, v)

    def for_layer(self, k: int) -> float:
        return self.lambda2 if k == 0 else self.lambda1


@dataclass(frozen=True)
class PrecisionStack:
    """Systemic precision (index 0) plus ``K`` category precisions.

    ``alphas`` scale the systemic contribution per category; ``None`` means
    all ones.
    """

    omegas: np.ndarray
    alphas: np.ndarray | None = None
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        om = np.array(self.omegas, dtype=float)
        if om.ndim != 3 or om.shape[1] != om.shape[2] or om.shape[0] < 3:
            raise ValueError("omegas must have shape (K+1, p, p) with K >= 2")
        alphas = (
            np.ones(om.shape[0] - 1)
            if self.alphas is None
            else np.array(self.alphas, dtype=float).reshape(-1)
        )
        if alphas.shape[0] != om.shape[0] - 1:
            raise ValueError("need one alpha per category")
        if np.any(alphas <= 0) or not np.all(np.isfinite(alphas)):
            raise ValueError("alphas must be positive and finite")
        if self.validate:
            for k in range(om.shape[0]):
                if np.max(np.abs(om[k] - om[k].T)) > 1e-12 * max(1.0, np.max(np.abs(om[k]))):
                    raise ValueError(f"layer {k} is not symmetric")
                cholesky(om[k], f"layer {k}")
            cholesky(_a_matrix(om, alphas), "A = Omega_0 + sum alpha_k^2 Omega_k")
        om.setflags(write=False)
        alphas.setflags(write=False)
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "alphas", alphas)

    @property
    def k_categories(self) -> int:
        return self.omegas.shape[0] - 1

    @property
    def p(self) -> int:
        return self.omegas.shape[1]

    @property
    def unit_alphas(self) -> bool:
        return bool(np.all(self.alphas == 1.0))

    def a_matrix(self) -> np.ndarray:
        return _a_matrix(self.omegas, self.alphas)

    def covariances(self) -> np.ndarray:
        return np.stack([inv_pd(o, f"layer {k}") for k, o in enumerate(self.omegas)])

    def edge_count(self) -> int:
        """Nonzero off-diagonal entries over all layers, both triangles counted."""
        return 2 * sum(len(edge_pairs(o)) for o in self.omegas)

    @classmethod
    def identity(cls, K: int, p: int) -> "PrecisionStack":
        return cls(np.broadcast_to(np.eye(p), (K + 1, p, p)).copy())


def _a_matrix(omegas, alphas):
    A = omegas[0].copy()
    for k in range(1, omegas.shape[0]):
        A += alphas[k - 1] ** 2 * omegas[k]
    return 0.5 * (A + A.T)


def edge_pairs(omega, tol: float = 0.0) -> list[tuple[int, int]]:
    """Unordered ``(i, j)``, ``i < j``, with a nonzero (or ``> tol``) entry."""
    iu, ju = np.triu_indices(omega.shape[0], k=1)
    mask = np.abs(omega[iu, ju]) > tol
    return list(zip(iu[mask].tolist(), ju[mask].tolist()))


@dataclass(frozen=True)
class FitReport:
    estimate: PrecisionStack
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    wall_time_seconds: float
    method: str = ""
    penalties: PenaltyPair | None = None
    flags: tuple[str, ...] = ()

    @property
    def edge_count(self) -> int:
        return self.estimate.edge_count()

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


def _check_dims(cov: BlockCovariance, stack: PrecisionStack):
    if cov.k_categories != stack.k_categories or cov.p != stack.p:
        raise ValueError(
            f"dimension mismatch: covariance (K={cov.k_categories}, p={cov.p}) vs "
            f"stack (K={stack.k_categories}, p={stack.p})"
        )


def _weighted_layers(stack: PrecisionStack) -> np.ndarray:
    """``alpha_k * Omega_k`` stacked as a ``(K*p) x p`` matrix."""
    G = stack.omegas[1:] * stack.alphas[:, None, None]
    return G.reshape(-1, stack.p)


def coupling_moment(cov: BlockCovariance, stack: PrecisionStack):
    """Return ``(U, M)`` with ``U_k = sum_l alpha_l S_{kl} Omega_l`` stacked
    ``(K, p, p)`` and ``M = sum_{l,m} alpha_l alpha_m Omega_l S_{lm} Omega_m``."""
    G = _weighted_layers(stack)
    U = cov.dense() @ G
    M = G.T @ U
    return U.reshape(stack.k_categories, stack.p, stack.p), 0.5 * (M + M.T)


def unpenalized_objective(cov: BlockCovariance, stack: PrecisionStack) -> float:
    """Per-sample likelihood kernel ``(2/n) * (L + npK/2 log 2pi)``.

    Equals ``log det Omega_Y - tr(S_Y Omega_Y)`` evaluated through the
    ``K + 1`` layer factorizations.
    """
    _check_dims(cov, stack)
    A = stack.a_matrix()
    LA = cholesky(A, "A")
    logdet = sum(logdet_pd(o, f"layer {k}") for k, o in enumerate(stack.omegas))
    logdet -= 2.0 * float(np.sum(np.log(np.diag(LA))))
    diag_trace = sum(
        float(np.sum(cov.blocks[k, k] * stack.omegas[k + 1])) for k in range(stack.k_categories)
    )
    _, M = coupling_moment(cov, stack)
    Ainv = linalg.cho_solve((LA, True), np.eye(stack.p), check_finite=False)
    return logdet - diag_trace + float(np.sum(M * Ainv))


def joint_log_likelihood(cov: BlockCovariance, stack: PrecisionStack, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    p, K = stack.p, stack.k_categories
    return -0.5 * n * p * K * LOG_2PI + 0.5 * n * unpenalized_objective(cov, stack)


def l1_offdiag(omega) -> float:
    return float(np.sum(np.abs(omega)) - np.sum(np.abs(np.diag(omega))))


def penalty_value(stack: PrecisionStack, penalties: PenaltyPair) -> float:
    return sum(penalties.for_layer(k) * l1_offdiag(o) for k, o in enumerate(stack.omegas))


def penalized_log_likelihood(
    cov: BlockCovariance, stack: PrecisionStack, n: int, penalties: PenaltyPair
) -> float:
    """Log-likelihood minus ``(n/2)`` times the off-diagonal l1 penalty.

    The ``n/2`` factor puts the penalty on the same per-sample scale as the
    layer-wise glasso subproblems, which is what makes EM ascent monotone.
    """
    return joint_log_likelihood(cov, stack, n) - 0.5 * n * penalty_value(stack, penalties)


def dense_precision(stack: PrecisionStack) -> np.ndarray:
    """``blockdiag(Omega_k) - {alpha_l alpha_m Omega_l A^{-1} Omega_m}`` (``Kp x Kp``)."""
    K, p = stack.k_categories, stack.p
    G = _weighted_layers(stack)
    Ainv = inv_pd(stack.a_matrix(), "A")
    out = -(G @ Ainv @ G.T)
    for k in range(K):
        out[k * p : (k + 1) * p, k * p : (k + 1) * p] += stack.omegas[k + 1]
    return 0.5 * (out + out.T)


def dense_covariance(stack: PrecisionStack) -> np.ndarray:
    """``blockdiag(Sigma_k) + (alpha alpha^T) kron Sigma_0``."""
    K, p = stack.k_categories, stack.p
    sig = stack.covariances()
    out = np.kron(np.outer(stack.alphas, stack.alphas), sig[0])
    for k in range(K):
        out[k * p : (k + 1) * p, k * p : (k + 1) * p] += sig[k + 1]
    return 0.5 * (out + out.T)


def logdet_identity_check(stack: PrecisionStack) -> float:
    """Residual between the layer-wise log-determinant and the dense one."""
    if not stack.unit_alphas:
        raise ValueError("identity check is defined for unit alphas")
    layered = sum(logdet_pd(o) for o in stack.omegas) - logdet_pd(stack.a_matrix(), "A")
    return abs(layered - logdet_pd(dense_precision(stack), "Omega_Y"))


def aggregate_precision(stack: PrecisionStack, k: int) -> np.ndarray:
    """Precision of the observed category-``k`` vector:
    ``(Omega_k^{-1} + alpha_k^2 Omega_0^{-1})^{-1}``."""
    if not 1 <= k <= stack.k_categories:
        raise IndexError(f"category index {k} out of range")
    sig = inv_pd(stack.omegas[k], f"layer {k}") + stack.alphas[k - 1] ** 2 * inv_pd(
        stack.omegas[0], "layer 0"
    )
    return inv_pd(sig, "aggregate covariance")
