import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_stack
from twolayer import select as select_mod
from twolayer.core import PrecisionStack
from twolayer.evaluate import (
    EdgeSet,
    auc,
    entropy_loss,
    evaluate,
    frobenius_loss,
    roc_curve,
    support_metrics,
)
from twolayer.select import LambdaGrid
from twolayer.simulate import ScenarioSpec, sample_panel


def test_losses_zero_at_truth(rng):
    s = random_stack(rng, 2, 5)
    assert abs(entropy_loss(s, s)) <= 1e-12
    assert frobenius_loss(s, s) == 0.0


def test_entropy_loss_scalar_case():
    p, K = 4, 3
    truth = PrecisionStack.identity(K, p)
    est = PrecisionStack(2 * truth.omegas)
    assert entropy_loss(truth, est) == pytest.approx(p * (1 - np.log(2)), rel=1e-12)


def test_entropy_loss_dense_oracle(rng):
    truth, est = random_stack(rng, 2, 5), random_stack(rng, 2, 5)
    total = 0.0
    for k in range(3):
        M = np.linalg.inv(truth.omegas[k]) @ est.omegas[k]
        total += np.trace(M) - np.log(np.linalg.det(M))
    assert entropy_loss(truth, est) == pytest.approx(total / 3 - 5, rel=1e-10)


def test_frobenius_scaling_and_oracle(rng):
    truth = random_stack(rng, 2, 4)
    assert frobenius_loss(truth, PrecisionStack(2 * truth.omegas)) == pytest.approx(1.0)
    est = random_stack(rng, 2, 4)
    naive = np.mean([
        sum((truth.omegas[k][i, j] - est.omegas[k][i, j]) ** 2 for i in range(4) for j in range(4))
        / sum(truth.omegas[k][i, j] ** 2 for i in range(4) for j in range(4))
        for k in range(3)
    ])
    assert frobenius_loss(truth, est) == pytest.approx(naive, rel=1e-12)


def test_support_identity_and_dense():
    truth = ScenarioSpec("I", p=12, n=10, K=2, seed=1).truth()
    assert support_metrics(truth, truth) == (0.0, 0.0, 0.0)
    dense = PrecisionStack(np.stack([np.eye(12) + 0.01 * (np.ones((12, 12)) - np.eye(12))] * 3))
    q = sum(int(np.sum(np.triu(o, 1) != 0)) for o in truth.omegas)
    N = 3 * 66
    fp, fn, hd = support_metrics(truth, dense)
    assert (fp, fn) == (1.0, 0.0)
    assert hd == pytest.approx((N - q) / N)


def test_empty_truth_flagged():
    truth = PrecisionStack.identity(2, 3)
    with pytest.warns(RuntimeWarning):
        assert support_metrics(truth, truth)[1] == 0.0
    assert "empty_truth_support" in evaluate(truth, truth).flags


@given(seed=st.integers(0, 10**6))
def test_support_metrics_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    truth = ScenarioSpec("II", p=10, n=10, K=2, seed=seed % 100).truth()
    est = ScenarioSpec("II", p=10, n=10, K=2, seed=seed % 100 + 1).truth()
    perm = rng.permutation(10)
    pt = PrecisionStack(truth.omegas[:, perm][:, :, perm])
    pe = PrecisionStack(est.omegas[:, perm][:, :, perm])
    assert support_metrics(truth, est) == support_metrics(pt, pe)


def test_metric_report_row(rng):
    truth = ScenarioSpec("I", p=8, n=10, K=2, seed=2).truth()
    rep = evaluate(truth, truth)
    row = rep.as_row()
    assert set(row) == {"EL", "FL", "FP", "FN", "HD"}
    assert all(abs(v) <= 1e-12 for v in row.values())
    assert len(rep.per_layer) == 3
    for r in (rep.fp_rate, rep.fn_rate, rep.hamming):
        assert 0 <= r <= 1


def test_edge_set():
    om = np.eye(3)
    om[0, 2] = om[2, 0] = 0.3
    es = EdgeSet.from_matrix(om)
    assert es.pairs == frozenset({(0, 2)}) and len(es) == 1
    with pytest.raises(ValueError):
        EdgeSet(3, frozenset({(1, 1)}))


# ---------------------------------------------------------------- ROC

def test_auc_oracle_and_trapezoid():
    assert auc([(0.0, 1.0)]) == 1.0
    assert auc([]) == 0.5
    assert auc([(0.5, 0.5)]) == pytest.approx(0.5)
    assert auc([(0.2, 0.6)]) == pytest.approx(0.5 * 0.2 * 0.6 + 0.8 * 0.8)


def test_roc_extremes_and_monotone():
    data, truth = sample_panel(ScenarioSpec("I", p=15, n=150, K=2, seed=3))
    grid = LambdaGrid((1e-4, 0.01, 0.05, 0.2, 5.0), tie_to_equal=True)
    curve = roc_curve(data, truth, "onestep", grid)
    by_lam = dict(zip(curve.lambdas, curve.points))
    assert by_lam[5.0] == (0.0, 0.0)
    f, t = by_lam[1e-4]
    assert f > 0.9 and t > 0.9
    assert 0.5 < curve.auc <= 1.0
    lam_sorted = sorted(curve.lambdas)
    fprs = [by_lam[lam][0] for lam in lam_sorted]
    if any(b > a for a, b in zip(fprs, fprs[1:])):
        warnings.warn("FPR not monotone in lambda on this instance", UserWarning)


def test_roc_requires_tied_grid():
    data, truth = sample_panel(ScenarioSpec("I", p=6, n=50, K=2, seed=3))
    with pytest.raises(ValueError):
        roc_curve(data, truth, "em", LambdaGrid((0.1,), (0.2,)))


def test_roc_skips_failures(monkeypatch):
    data, truth = sample_panel(ScenarioSpec("I", p=6, n=50, K=2, seed=3))
    real = select_mod._fit_one

    def sometimes(method, d, pen, *args, **kwargs):
        if pen.lambda1 == 0.1:
            raise ValueError("fail")
        return real(method, d, pen, *args, **kwargs)

    monkeypatch.setattr(select_mod, "_fit_one", sometimes)
    with pytest.warns(RuntimeWarning):
        curve = roc_curve(data, truth, "onestep", LambdaGrid((0.05, 0.1, 0.3), tie_to_equal=True))
    assert curve.skipped == 1 and len(curve.points) == 2
