"""Loss and support-recovery metrics comparing estimated stacks to truth."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import PrecisionStack, inv_pd, logdet_pd


@dataclass(frozen=True)
class EdgeSet:
    p: int
    pairs: frozenset

    def __post_init__(self):
        for i, j in self.pairs:
            if not 0 <= i < j < self.p:
                raise ValueError(f"invalid pair {(i, j)} for p={self.p}")

    @classmethod
    def from_matrix(cls, omega) -> "EdgeSet":
        omega = np.asarray(omega)
        iu, ju = np.triu_indices(omega.shape[0], 1)
        mask = omega[iu, ju] != 0
        return cls(omega.shape[0], frozenset(zip(iu[mask].tolist(), ju[mask].tolist())))

    def __len__(self):
        return len(self.pairs)


@dataclass(frozen=True)
class SupportCounts:
    false_pos: int
    false_neg: int
    true_pos: int
    positives: int  # |T|
    negatives: int  # |T^c|

    @property
    def total(self) -> int:
        return self.positives + self.negatives

    @property
    def fp_rate(self) -> float:
        return self.false_pos / self.negatives if self.negatives else 0.0

    @property
    def fn_rate(self) -> float:
        return self.false_neg / self.positives if self.positives else 0.0

    @property
    def tp_rate(self) -> float:
        return self.true_pos / self.positives if self.positives else 0.0

    @property
    def hamming(self) -> float:
        return (self.false_pos + self.false_neg) / self.total if self.total else 0.0

    def __add__(self, other: "SupportCounts") -> "SupportCounts":
        return SupportCounts(
            self.false_pos + other.false_pos,
            self.false_neg + other.false_neg,
            self.true_pos + other.true_pos,
            self.positives + other.positives,
            self.negatives + other.negatives,
        )


@dataclass(frozen=True)
class MetricReport:
    entropy_loss: float
    frobenius_loss: float
    fp_rate: float
    fn_rate: float
    hamming: float
    per_layer: tuple = field(default=(), repr=False)
    flags: tuple[str, ...] = ()

    def as_row(self, percent: bool = True) -> dict:
        scale = 100.0 if percent else 1.0
        return {
            "EL": self.entropy_loss,
            "FL": self.frobenius_loss,
            "FP": scale * self.fp_rate,
            "FN": scale * self.fn_rate,
            "HD": scale * self.hamming,
        }


def _check(truth: PrecisionStack, est: PrecisionStack):
    if truth.omegas.shape != est.omegas.shape:
        raise ValueError("truth and estimate dimensions differ")


def entropy_loss(truth: PrecisionStack, est: PrecisionStack) -> float:
    """Average over layers of ``tr(S* O) - log det(S* O)``, minus ``p``."""
    _check(truth, est)
    total = 0.0
    for k in range(truth.omegas.shape[0]):
        sig = inv_pd(truth.omegas[k], f"truth layer {k}")
        total += float(np.sum(sig * est.omegas[k]))
        total -= logdet_pd(est.omegas[k], f"estimate layer {k}") - logdet_pd(truth.omegas[k])
    return total / truth.omegas.shape[0] - truth.p


def frobenius_loss(truth: PrecisionStack, est: PrecisionStack) -> float:
    _check(truth, est)
    diff = np.sum((truth.omegas - est.omegas) ** 2, axis=(1, 2))
    return float(np.mean(diff / np.sum(truth.omegas**2, axis=(1, 2))))


def layer_counts(truth_omega, est_omega) -> SupportCounts:
    p = truth_omega.shape[0]
    iu, ju = np.triu_indices(p, 1)
    t = truth_omega[iu, ju] != 0
    e = est_omega[iu, ju] != 0
    return SupportCounts(
        int(np.sum(e & ~t)), int(np.sum(t & ~e)), int(np.sum(t & e)), int(t.sum()), int((~t).sum())
    )


def pooled_counts(truth: PrecisionStack, est: PrecisionStack, layers=None) -> SupportCounts:
    _check(truth, est)
    layers = range(truth.omegas.shape[0]) if layers is None else layers
    out = SupportCounts(0, 0, 0, 0, 0)
    for k in layers:
        out = out + layer_counts(truth.omegas[k], est.omegas[k])
    return out


def support_metrics(truth: PrecisionStack, est: PrecisionStack):
    """Pooled ``(fp_rate, fn_rate, hamming)`` as fractions."""
    c = pooled_counts(truth, est)
    if c.positives == 0:
        warnings.warn("truth has no edges; false-negative rate reported as 0", RuntimeWarning)
    return c.fp_rate, c.fn_rate, c.hamming


def evaluate(truth: PrecisionStack, est: PrecisionStack) -> MetricReport:
    c = pooled_counts(truth, est)
    per_layer = tuple(layer_counts(truth.omegas[k], est.omegas[k]) for k in range(truth.omegas.shape[0]))
    return MetricReport(
        entropy_loss(truth, est),
        frobenius_loss(truth, est),
        c.fp_rate,
        c.fn_rate,
        c.hamming,
        per_layer=per_layer,
        flags=("empty_truth_support",) if c.positives == 0 else (),
    )


def auc(points) -> float:
    """Trapezoid area under ``(fpr, tpr)`` points, anchored at (0,0) and (1,1)."""
    pts = sorted({(float(f), float(t)) for f, t in points})
    pts = [(0.0, 0.0)] + pts + [(1.0, 1.0)]
    f = np.array([q[0] for q in pts])
    t = np.array([q[1] for q in pts])
    return float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2.0))


@dataclass(frozen=True)
class RocCurve:
    points: tuple  # (fpr, tpr) sorted by fpr
    lambdas: tuple
    skipped: int = 0

    @property
    def auc(self) -> float:
        return auc(self.points)


def roc_curve(data, truth: PrecisionStack, method: str = "em", grid=None, settings=None) -> RocCurve:
    """Pooled (FPR, TPR) along a ``lambda1 = lambda2`` grid.

    Fits run from the sparse end with warm starts. Failed fits are skipped
    and counted.
    """
    from .select import fit_path

    if grid is None or not grid.tie_to_equal:
        raise ValueError("roc_curve needs a grid with tie_to_equal=True")
    fits = fit_path(data, grid.path(), method, settings)
    rows, skipped = [], 0
    for pen, fit in fits.items():
        if isinstance(fit, Exception):
            skipped += 1
            continue
        c = pooled_counts(truth, fit.estimate)
        rows.append((c.fp_rate, c.tp_rate, pen.lambda1))
    if skipped:
        warnings.warn(f"{skipped} ROC grid points failed and were skipped", RuntimeWarning)
    rows.sort()
    return RocCurve(tuple((f, t) for f, t, _ in rows), tuple(lam for _, _, lam in rows), skipped)
