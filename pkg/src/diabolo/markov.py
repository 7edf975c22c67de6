"""Subtraction-free linear algebra for continuous-time Markov generators.

Rates between magnetization pockets are many orders of magnitude slower than
relaxation inside a pocket, so naive ``solve`` calls on the generator lose
the slow rates to cancellation. Both routines below use Grassmann-Taksar-
Heyman style state reduction, in which every normalizer is a sum of
non-negative terms.

Rate matrices follow the column convention ``W[f, i]`` = rate from i to f.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import NumericalError


class ReducibleChainWarning(UserWarning):
    """The rate matrix has more than one closed communicating class."""


def _offdiag(W) -> np.ndarray:
    W = np.array(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("rate matrix must be square")
    if np.any(W < 0) or not np.all(np.isfinite(W)):
        raise ValueError("rates must be finite and non-negative")
    np.fill_diagonal(W, 0.0)
    return W


def _gth_stationary(W: np.ndarray) -> np.ndarray:
    n = W.shape[0]
    if n == 1:
        return np.ones(1)
    A = W.copy()
    # forward reduction: eliminate the last state each time
    for k in range(n - 1, 0, -1):
        out = A[:k, k].sum()
        if out <= 0:
            raise NumericalError(f"state {k} has no exit within its class")
        # route every i -> k -> j through k
        A[:k, :k] += np.outer(A[:k, k], A[k, :k]) / out
        np.fill_diagonal(A[:k, :k], 0.0)
    p = np.zeros(n)
    p[0] = 1.0
    for k in range(1, n):
        out = A[:k, k].sum()
        p[k] = p[:k] @ A[k, :k] / out
    return p / p.sum()


def stationary_distribution(W) -> np.ndarray:
    """Stationary populations of the generator built from ``W``.

    For reducible matrices each closed class gets its own stationary vector,
    the classes are weighted equally, and a warning is emitted.
    """
    W = _offdiag(W)
    n = W.shape[0]
    n_comp, comp = connected_components(W.T > 0, directed=True, connection="strong")
    if n_comp == 1:
        return _gth_stationary(W)
    closed = []
    for c in range(n_comp):
        members = np.flatnonzero(comp == c)
        outside = np.setdiff1d(np.arange(n), members)
        if not np.any(W[np.ix_(outside, members)] > 0):
            closed.append(members)
    warnings.warn(
        f"rate matrix is reducible: {len(closed)} closed class(es) among {n_comp} components",
        ReducibleChainWarning,
        stacklevel=2,
    )
    p = np.zeros(n)
    for members in closed:
        p[members] = _gth_stationary(W[np.ix_(members, members)]) / len(closed)
    return p


def mean_first_passage(W, start: int, targets) -> float:
    """Mean time to first reach any state in ``targets`` from ``start``.

    States are eliminated one by one while accumulating the expected holding
    time of the survivors.
    """
    W = _offdiag(W)
    n = W.shape[0]
    targets = np.unique(np.asarray(list(targets), dtype=int))
    if targets.size == 0:
        raise ValueError("target set is empty")
    if start in targets:
        return 0.0
    others = np.setdiff1d(np.arange(n), targets)
    m = len(others)
    # columns: transient states; rows: transient states + one absorbing row
    R = np.zeros((m + 1, m))
    R[:m, :] = W[np.ix_(others, others)]
    R[m, :] = W[np.ix_(targets, others)].sum(axis=0)
    out = R.sum(axis=0)
    if np.any(out <= 0):
        stuck = others[out <= 0]
        raise NumericalError(f"states {stuck.tolist()} have no exit; passage time is infinite")
    P = R / out
    h = 1.0 / out
    s = int(np.flatnonzero(others == start)[0])
    alive = np.ones(m, dtype=bool)
    for k in range(m):
        if k == s:
            continue
        alive[k] = False
        idx = np.flatnonzero(alive)
        pk = P[:, k].copy()
        pk[k] = 0.0
        weights = P[k, idx].copy()
        P[:, idx] += np.outer(pk, weights)
        h[idx] += weights * h[k]
        P[k, :] = 0.0
        P[:, k] = 0.0
        # self loops produced by i -> k -> i
        P[idx, idx] = 0.0
        norm = P[:, idx].sum(axis=0)
        if np.any(norm <= 0):
            raise NumericalError("absorbing set unreachable from part of the transient states")
        P[:, idx] /= norm
        h[idx] /= norm
    return float(h[s])
