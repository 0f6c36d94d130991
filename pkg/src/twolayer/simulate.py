"""Ground-truth network generators and panel-data sampling.

Random streams: every draw comes from a Philox (counter-based, 64-bit)
generator keyed by ``SeedSequence(seed, spawn_key=(layer, purpose))`` so the
layers, their perturbations and the data draw are independent, reproducible
streams. ``layer`` is the stack index (0 systemic, 1..K categories);
``purpose`` is one of STRUCTURE, PERTURB, SAMPLE.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree

from .core import PanelDataset, PrecisionStack, center_and_wrap, cholesky

STRUCTURE, PERTURB, SAMPLE = 0, 1, 2
ARCHITECTURES = {
    # (category topology, systemic topology)
    "I": ("chain", "nn"),
    "II": ("nn", "nn"),
    "III": ("chain", "chain"),
    "IV": ("nn", "chain"),
}
MIN_EIGENVALUE = 0.05
NN_SCALINGS = ("unit", "dominance")


def stream(seed: int, layer: int = 0, purpose: int = STRUCTURE) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(layer), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return stream(seed_or_rng)


def _edge_weights(rng, size):
    return rng.choice([-1.0, 1.0], size=size) * rng.uniform(0.5, 1.0, size=size)


def chain_from_gaps(gaps) -> np.ndarray:
    """Tridiagonal precision of ``Sigma_ij = exp(-|s_i - s_j| / 2)`` where
    ``s`` is the cumulative sum of ``gaps`` starting at 0."""
    s = np.concatenate([[0.0], np.cumsum(gaps)])
    sigma = np.exp(-np.abs(s[:, None] - s[None, :]) / 2.0)
    omega = np.linalg.inv(sigma)
    omega = 0.5 * (omega + omega.T)
    off = ~np.eye(len(s), dtype=bool)
    omega[off & (np.abs(omega) < 1e-10)] = 0.0
    return omega


def chain_precision(p: int, seed) -> np.ndarray:
    if p < 2:
        raise ValueError("chain network needs p >= 2")
    rng = _rng(seed)
    return chain_from_gaps(rng.uniform(0.5, 1.0, size=p - 1))


def nn_adjacency(points, m: int) -> np.ndarray:
    """Symmetrized m-nearest-neighbour adjacency of planar points."""
    p = points.shape[0]
    _, idx = cKDTree(points).query(points, k=m + 1)
    adj = np.zeros((p, p), dtype=bool)
    rows = np.repeat(np.arange(p), m)
    adj[rows, idx[:, 1:].ravel()] = True
    adj |= adj.T
    np.fill_diagonal(adj, False)
    return adj


def nn_precision(p: int, m: int, seed, scaling: str = "unit") -> np.ndarray:
    """Planar m-nearest-neighbour precision with weights in +-[0.5, 1].

    ``scaling="unit"`` divides each row by 1.5 times its absolute sum,
    symmetrizes and puts ones on the diagonal, so every variable has unit
    scale like the chain layers. ``scaling="dominance"`` keeps the raw
    weights and sets the diagonal to ``1.5 * row_abs_sum + 0.1``.
    """
    if not 1 <= m < p:
        raise ValueError("nearest-neighbour network needs 1 <= m < p")
    if scaling not in NN_SCALINGS:
        raise ValueError(f"scaling must be one of {NN_SCALINGS}")
    rng = _rng(seed)
    adj = nn_adjacency(rng.uniform(size=(p, 2)), m)
    iu, ju = np.nonzero(np.triu(adj, 1))
    omega = np.zeros((p, p))
    w = _edge_weights(rng, len(iu))
    omega[iu, ju] = w
    omega[ju, iu] = w
    rowabs = np.abs(omega).sum(axis=1)
    if scaling == "dominance":
        np.fill_diagonal(omega, 1.5 * rowabs + 0.1)
        return omega
    omega = omega / (1.5 * rowabs[:, None])
    omega = 0.5 * (omega + omega.T)
    np.fill_diagonal(omega, 1.0)
    return omega


def perturb(omega, rho: float, seed) -> np.ndarray:
    """Add ``round(rho * T)`` random edges (``T`` = current edge count) and
    shift the diagonal just enough to keep the smallest eigenvalue >= 0.05."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    omega = np.array(omega, dtype=float)
    if rho == 0:
        return omega
    rng = _rng(seed)
    p = omega.shape[0]
    iu, ju = np.triu_indices(p, 1)
    support = omega[iu, ju] != 0
    n_add = int(round(rho * int(support.sum())))
    free = np.flatnonzero(~support)
    if n_add > len(free):
        raise ValueError(f"cannot add {n_add} edges: only {len(free)} zero pairs remain")
    pick = rng.choice(free, size=n_add, replace=False)
    w = _edge_weights(rng, n_add)
    omega[iu[pick], ju[pick]] = w
    omega[ju[pick], iu[pick]] = w
    lo = float(np.linalg.eigvalsh(omega)[0])
    if lo < MIN_EIGENVALUE:
        omega[np.diag_indices(p)] += MIN_EIGENVALUE - lo
    return omega


@dataclass(frozen=True)
class NetworkSpec:
    topology: str  # "chain" | "nn"
    p: int
    m: int = 5
    rho: float = 0.0
    seed: int = 0
    scaling: str = "unit"

    def build(self, layer: int = 0) -> np.ndarray:
        base_rng = stream(self.seed, layer, STRUCTURE)
        if self.topology == "chain":
            base = chain_precision(self.p, base_rng)
        elif self.topology == "nn":
            base = nn_precision(self.p, self.m, base_rng, self.scaling)
        else:
            raise ValueError(f"unknown topology {self.topology!r}")
        return perturb(base, self.rho, stream(self.seed, layer, PERTURB))


@dataclass(frozen=True)
class ScenarioSpec:
    architecture: str = "I"
    p: int = 100
    n: int = 300
    K: int = 4
    m: int = 5
    rho: float = 0.0
    seed: int = 0
    alphas: tuple[float, ...] | None = None
    nn_scaling: str = "unit"

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {sorted(ARCHITECTURES)}")
        if self.K < 2:
            raise ValueError("K >= 2 categories are required for identifiability")
        if self.n < 2 or self.p < 2:
            raise ValueError("need n >= 2 and p >= 2")
        if self.nn_scaling not in NN_SCALINGS:
            raise ValueError(f"nn_scaling must be one of {NN_SCALINGS}")
        if self.alphas is not None and len(self.alphas) != self.K:
            raise ValueError("need one alpha per category")

    def truth(self) -> PrecisionStack:
        cat, sys_ = ARCHITECTURES[self.architecture]
        layers = [NetworkSpec(sys_, self.p, self.m, self.rho, self.seed, self.nn_scaling).build(0)]
        for k in range(1, self.K + 1):
            layers.append(NetworkSpec(cat, self.p, self.m, self.rho, self.seed, self.nn_scaling).build(k))
        return PrecisionStack(np.stack(layers), self.alphas)


def _gaussian_rows(omega, n, rng):
    """``n`` draws from ``N(0, omega^{-1})`` using the Cholesky factor of ``omega``."""
    L = cholesky(omega)
    e = rng.standard_normal((omega.shape[0], n))
    return linalg.solve_triangular(L.T, e, lower=False).T


def sample_from_stack(truth: PrecisionStack, n: int, seed: int) -> PanelDataset:
    K, p = truth.k_categories, truth.p
    z = _gaussian_rows(truth.omegas[0], n, stream(seed, 0, SAMPLE))
    blocks = [
        _gaussian_rows(truth.omegas[k], n, stream(seed, k, SAMPLE)) + truth.alphas[k - 1] * z
        for k in range(1, K + 1)
    ]
    return center_and_wrap(np.hstack(blocks), K, p)


def sample_panel(spec: ScenarioSpec) -> tuple[PanelDataset, PrecisionStack]:
    truth = spec.truth()
    return sample_from_stack(truth, spec.n, spec.seed), truth
