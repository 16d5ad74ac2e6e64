"""Empirical decay certificates for trajectory ensembles.

An ensemble passes at rate ``gamma`` when every path admits a finite
envelope ``|X(t)| <= C e^{-gamma t} |X(0)|``: the constant is finite on the
recorded horizon and the tail slope shows the path keeps decaying at least
as fast as ``gamma``, so the envelope does not degrade beyond it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ValidationError
from .model import OperatorModel

__all__ = [
    "DecayCertificate",
    "MeanSquareDecay",
    "fit_decay_rate",
    "fit_log_slope",
    "certify_decay",
    "mean_square_decay",
    "baseline_growth",
    "seeds_agree",
]

MIN_WINDOW_SAMPLES = 10
MIN_ENSEMBLE = 8


@dataclass(frozen=True)
class DecayCertificate:
    gamma: float
    gamma_hat: float
    C_hat: float
    paths: int
    fraction_satisfying: float
    window: float
    rates: np.ndarray = field(repr=False)
    envelopes: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.fraction_satisfying == 1.0

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"

    @property
    def mean_rate(self) -> float:
        return float(np.mean(self.rates))

    @property
    def rate_stderr(self) -> float:
        if self.paths < 2:
            return float("inf")
        return float(np.std(self.rates, ddof=1) / np.sqrt(self.paths))

    def as_dict(self):
        return {
            "gamma": self.gamma,
            "gamma_hat": self.gamma_hat,
            "C_hat": self.C_hat,
            "paths": self.paths,
            "fraction_satisfying": self.fraction_satisfying,
            "verdict": self.verdict,
        }


@dataclass(frozen=True)
class MeanSquareDecay:
    rate: float
    times: np.ndarray
    curve: np.ndarray


def _tail(times, window):
    if not 0 < window <= 1:
        raise ValidationError("window must lie in (0, 1]")
    t = np.asarray(times, dtype=float)
    start = t[0] + (1.0 - window) * (t[-1] - t[0])
    sel = t >= start - 1e-12 * max(1.0, abs(t[-1]))
    if np.count_nonzero(sel) < MIN_WINDOW_SAMPLES:
        raise ValidationError(f"need at least {MIN_WINDOW_SAMPLES} samples in the fitting window")
    return sel


def fit_log_slope(times, values, window: float = 0.5) -> float:
    """Decay rate ``-d log(values)/dt`` fitted over the final ``window`` of the horizon.

    Returns ``inf`` if any value in the window is exactly zero.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    sel = _tail(t, window)
    tv = v[sel]
    if np.any(tv == 0):
        return float("inf")
    if np.any(tv < 0) or not np.all(np.isfinite(tv)):
        raise ValidationError("norms must be positive and finite")
    slope = np.polyfit(t[sel], np.log(tv), 1)[0]
    return float(-slope)


def fit_decay_rate(traj, window: float = 0.5) -> float:
    """Fitted ``gamma_hat`` of ``|X(t)|``; positive means decay."""
    return fit_log_slope(traj.times, traj.norms, window)


def certify_decay(ensemble, gamma: float | None = None, window: float = 0.5) -> DecayCertificate:
    """Envelope certificate at ``gamma``; by default half the ensemble-minimum fitted rate."""
    ensemble = list(ensemble)
    if not ensemble:
        raise ValidationError("empty ensemble")
    rates = np.array([fit_decay_rate(tr, window) for tr in ensemble])
    gamma_hat = float(np.min(rates))
    if gamma is None:
        gamma = 0.5 * gamma_hat if np.isfinite(gamma_hat) else 1.0
    elif not gamma > 0:
        raise ValidationError("gamma must be positive")
    envelopes = np.empty(len(ensemble))
    for i, tr in enumerate(ensemble):
        n = np.asarray(tr.norms, dtype=float)
        t = np.asarray(tr.times, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            envelopes[i] = np.max(n * np.exp(gamma * t)) / n[0]
    ok = np.isfinite(envelopes) & (rates >= gamma) & (gamma > 0)
    return DecayCertificate(
        gamma=float(gamma),
        gamma_hat=gamma_hat,
        C_hat=float(np.max(envelopes)),
        paths=len(ensemble),
        fraction_satisfying=float(np.mean(ok)),
        window=float(window),
        rates=rates,
        envelopes=envelopes,
    )


def seeds_agree(first: DecayCertificate, second: DecayCertificate, z: float = 2.0) -> bool:
    """Mean fitted rates of two independent batches agree within ``z`` combined standard errors."""
    se = np.hypot(first.rate_stderr, second.rate_stderr)
    return bool(abs(first.mean_rate - second.mean_rate) <= z * se)


def mean_square_decay(ensemble, window: float = 0.5) -> MeanSquareDecay:
    """Rate of the ensemble mean of ``|X_s(t)|^2`` (falls back to ``|X|`` when no split is recorded)."""
    ensemble = list(ensemble)
    if len(ensemble) < MIN_ENSEMBLE:
        raise ValidationError(f"mean-square decay needs at least {MIN_ENSEMBLE} paths, got {len(ensemble)}")
    t = np.asarray(ensemble[0].times, dtype=float)
    curves = []
    for tr in ensemble:
        if not np.array_equal(np.asarray(tr.times), t):
            raise ValidationError("all paths must share one time grid")
        v = tr.norm_s if tr.norm_s is not None else tr.norms
        curves.append(np.asarray(v, dtype=float) ** 2)
    curve = np.mean(curves, axis=0)
    return MeanSquareDecay(rate=fit_log_slope(t, curve, window), times=t, curve=curve)


def baseline_growth(model: OperatorModel, x0, T: float = 60.0, samples: int = 601, window: float = 0.5) -> float:
    """Growth rate of the uncontrolled ``dX/dt = -A X``; positive means growth."""
    if not T > 0:
        raise ValidationError("T must be positive")
    times = np.linspace(0.0, T, samples)
    step = scipy.linalg.expm(-model.generator * (times[1] - times[0]))
    x = np.asarray(x0, dtype=complex if np.iscomplexobj(model.generator) else float).copy()
    logs = np.empty(samples)
    acc = 0.0
    for i in range(samples):
        if i:
            x = step @ x
        nx = float(model.norm(x))
        if nx == 0:
            raise ValidationError("initial state is zero")
        acc += np.log(nx)
        x /= nx
        logs[i] = acc
    sel = _tail(times, window)
    return float(np.polyfit(times[sel], logs[sel], 1)[0])
