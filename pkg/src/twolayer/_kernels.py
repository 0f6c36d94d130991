"""Hot loops of the graphical-lasso block coordinate descent.

Two interchangeable implementations of one sweep over all columns:
``sweep_numba`` (compiled with ``numba.njit``) and ``sweep_numpy`` (plain
numpy, used when numba is missing or ``TWOLAYER_NO_NUMBA=1``). ``sweep``
is bound to the selected one at import time.

Both mutate ``W`` (covariance estimate) and ``B`` (column lasso
coefficients, ``B[j, j] == 0``) in place and return the largest absolute
change of an off-diagonal ``W`` entry.
"""
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("TWOLAYER_NO_NUMBA", "0") not in ("1", "true", "yes")


def _sweep_loops(S, W, B, lam, inner_tol, max_inner):
    # W is exactly symmetric, so rows stand in for columns (contiguous reads)
    p = S.shape[0]
    v = np.empty(p)
    beta = np.empty(p)
    max_dw = 0.0
    for j in range(p):
        for k in range(p):
            beta[k] = B[k, j]
        beta[j] = 0.0
        for r in range(p):
            acc = 0.0
            for k in range(p):
                acc += W[r, k] * beta[k]
            v[r] = acc
        full = True
        for _ in range(max_inner):
            dmax = 0.0
            for k in range(p):
                if k == j:
                    continue
                bk = beta[k]
                if not full and bk == 0.0:
                    continue
                wkk = W[k, k]
                c = S[k, j] - (v[k] - wkk * bk)
                if c > lam:
                    new = (c - lam) / wkk
                elif c < -lam:
                    new = (c + lam) / wkk
                else:
                    new = 0.0
                d = new - bk
                if d != 0.0:
                    beta[k] = new
                    for r in range(p):
                        v[r] += W[k, r] * d
                    ad = abs(d) * wkk
                    if ad > dmax:
                        dmax = ad
            if dmax < inner_tol:
                if full:
                    break
                full = True
            else:
                full = False
        for k in range(p):
            B[k, j] = beta[k]
            if k != j:
                dw = abs(W[k, j] - v[k])
                if dw > max_dw:
                    max_dw = dw
                W[k, j] = v[k]
                W[j, k] = v[k]
    return max_dw


def sweep_numpy(S, W, B, lam, inner_tol, max_inner):
    p = S.shape[0]
    max_dw = 0.0
    idx = np.arange(p)
    for j in range(p):
        others = idx[idx != j]
        beta = B[:, j]
        v = W[:, others] @ beta[others]
        full = True
        for _ in range(max_inner):
            dmax = 0.0
            cand = others if full else others[beta[others] != 0.0]
            for k in cand:
                bk = beta[k]
                wkk = W[k, k]
                c = S[k, j] - (v[k] - wkk * bk)
                new = np.sign(c) * max(abs(c) - lam, 0.0) / wkk
                d = new - bk
                if d != 0.0:
                    beta[k] = new
                    v += W[:, k] * d
                    dmax = max(dmax, abs(d) * wkk)
            if dmax < inner_tol:
                if full:
                    break
                full = True
            else:
                full = False
        dw = np.max(np.abs(W[others, j] - v[others]), initial=0.0)
        max_dw = max(max_dw, float(dw))
        W[others, j] = v[others]
        W[j, others] = v[others]
    return max_dw


if HAVE_NUMBA:
    sweep_numba = njit(cache=True)(_sweep_loops)
else:  # pragma: no cover
    sweep_numba = None

sweep = sweep_numba if USE_NUMBA else sweep_numpy
BACKEND = "numba" if USE_NUMBA else "numpy"
