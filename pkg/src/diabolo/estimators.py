"""scikit-learn style wrappers around the analysis steps.

Only the inverse problems fit the estimator shape: switch detection on a
trace, lifetime fitting on dwell lists and the current decomposition
regression. The forward physics (Hamiltonian, DP search, rate model) stays
functional.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from . import telegraph as tg
from .rates import current_decomposition_fit, current_decomposition_fit_multi


def _check_fitted(est, attr):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


def _as_trace(X, sample_rate):
    if isinstance(X, tg.TelegraphTrace):
        return X
    if sample_rate is None:
        raise ValueError("sample_rate is required for raw sample arrays")
    return tg.TelegraphTrace(samples=np.ravel(np.asarray(X, dtype=float)), sample_rate=sample_rate)


class SwitchDetector(BaseEstimator):
    """Schmitt-trigger switch detection.

    ``fit`` learns the two readout levels (and drift) of a trace;
    ``transform`` returns the dwell records.

    Parameters
    ----------
    hysteresis : float
        Trigger band as a fraction of the level separation.
    min_dwell : int
        Shorter runs (in samples) are merged into their neighbours.
    low_pocket : {"A", "B", None}
        Pocket shown on the low current level.
    median_window : int, optional
        Running-median width in samples; ``None`` chooses it from the noise.
    sample_rate : float, optional
        Needed only when raw arrays are passed instead of traces.
    """

    def __init__(self, hysteresis=0.5, min_dwell=2, low_pocket="A", detrend=True, median_window=None,
                 sample_rate=None):
        self.hysteresis = hysteresis
        self.min_dwell = min_dwell
        self.low_pocket = low_pocket
        self.detrend = detrend
        self.median_window = median_window
        self.sample_rate = sample_rate

    def fit(self, X, y=None):
        trace = _as_trace(X, self.sample_rate)
        self.levels_ = tg.detect_levels(trace, detrend=self.detrend)
        return self

    def transform(self, X) -> list:
        _check_fitted(self, "levels_")
        trace = _as_trace(X, self.sample_rate)
        return tg.detect_switches(trace, hysteresis=self.hysteresis, min_dwell=self.min_dwell,
                                  low_pocket=self.low_pocket, detrend=self.detrend,
                                  median_window=self.median_window)

    def fit_transform(self, X, y=None) -> list:
        return self.fit(X).transform(X)


class DwellTimeFitter(BaseEstimator):
    """Exponential lifetimes from dwell records.

    After ``fit``, ``lifetimes_`` maps each state to its
    :class:`~diabolo.telegraph.LifetimeEstimate` and ``T_avg_`` holds the
    combined lifetime ``1 / (1/T_1 + 1/T_2)``.
    """

    def __init__(self, states=("A", "B"), min_events=tg.MIN_EVENTS, censored=True):
        self.states = states
        self.min_events = min_events
        self.censored = censored

    def fit(self, X, y=None):
        self.lifetimes_ = {s: tg.fit_dwell_times(X, s, min_events=self.min_events, censored=self.censored)
                           for s in self.states}
        Ts = [e.T for e in self.lifetimes_.values()]
        self.T_avg_ = tg.average_lifetime(*Ts) if len(Ts) == 2 else None
        return self

    def ratio_energy(self, T_kelvin: float, high: Optional[str] = None) -> float:
        """Boltzmann energy (ueV) implied by the lifetime ratio."""
        _check_fitted(self, "lifetimes_")
        a, b = self.states
        high = high or a
        low = b if high == a else a
        return tg.lifetime_ratio_energy(self.lifetimes_[high].T, self.lifetimes_[low].T, T_kelvin)


class CurrentDecompositionRegressor(RegressorMixin, BaseEstimator):
    """``1 / T_avg = I (r_O + r_T) + I0 r_T`` fitted on current and field.

    ``X`` has columns ``(current_pA, field)``; ``y`` holds ``T_avg`` in
    seconds. With ``I0`` fixed every field is fitted separately; otherwise
    all fields share ``r_O`` and ``I0`` and are fitted jointly.
    ``predict`` returns lifetimes.
    """

    def __init__(self, I0=None):
        self.I0 = I0

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2 or X.shape[0] != y.size:
            raise ValueError("X must have shape (n, 2) [current, field] matching y")
        fields = np.unique(X[:, 1])
        currents = np.unique(X[:, 0])
        T = np.full((fields.size, currents.size), np.nan)
        for (c, b), t in zip(X, y):
            T[np.searchsorted(fields, b), np.searchsorted(currents, c)] = t
        if np.any(np.isnan(T)):
            raise ValueError("every field needs every current")
        if self.I0 is not None:
            fits = [current_decomposition_fit(currents, T[k], I0=self.I0) for k in range(fields.size)]
            self.r_O_ = np.array([f.r_O for f in fits])
            self.r_T_ = np.array([f.r_T for f in fits])
            self.I0_ = float(self.I0)
        else:
            r_O, r_T, I0, self.stderr_ = current_decomposition_fit_multi(currents, T)
            self.r_O_ = np.full(fields.size, r_O)
            self.r_T_ = r_T
            self.I0_ = I0
        self.fields_ = fields
        return self

    def predict(self, X) -> np.ndarray:
        _check_fitted(self, "fields_")
        X = np.asarray(X, dtype=float)
        k = np.searchsorted(self.fields_, X[:, 1])
        if np.any(k >= self.fields_.size) or np.any(self.fields_[np.minimum(k, self.fields_.size - 1)] != X[:, 1]):
            raise ValueError("predict only supports fields seen during fit")
        rate = X[:, 0] * (self.r_O_[k] + self.r_T_[k]) + self.I0_ * self.r_T_[k]
        return 1.0 / rate
