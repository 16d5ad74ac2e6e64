"""Time integration of linear SDEs ``dX = D X dt + sum_k B_k X o dbeta_k``.

Three one-step schemes are available:

``heun``
    Stochastic Heun (explicit trapezoidal predictor-corrector); converges
    to the Stratonovich solution and is the deterministic trapezoidal rule
    when the noise is off.
``euler``
    Euler-Maruyama, for systems tagged Ito.
``split``
    Exact drift propagator ``expm(D dt)`` followed by an implicit-midpoint
    (Cayley) noise substep.  Stratonovich-consistent, unconditionally stable
    in the drift, and exactly norm preserving for skew noise.  Used for
    Lyapunov exponents and for the stiff closed loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import BlowUpError, ValidationError
from .model import norm as weighted_norm
from .rng import BLOCK, BrownianSource

__all__ = [
    "LowRankNoise",
    "SdeSystem",
    "Trajectory",
    "LyapunovEstimate",
    "LyapunovParams",
    "SimulationParams",
    "ito_correction",
    "stratonovich_correction",
    "default_step",
    "integrate",
    "integrate_ensemble",
    "wong_zakai",
    "estimate_lyapunov",
    "simulate_closed_loop",
    "simulate_wong_zakai",
    "ensemble_summary",
]

STRATONOVICH = "stratonovich"
ITO = "ito"


@dataclass(frozen=True)
class LowRankNoise:
    """Diffusion maps of the form ``B_k = U @ core[k] @ Vh``."""

    U: np.ndarray
    core: np.ndarray
    Vh: np.ndarray

    def dense(self):
        return np.einsum("ia,kab,bj->kij", self.U, self.core, self.Vh)

    @property
    def coupling(self):
        return self.Vh @ self.U


@dataclass(frozen=True)
class SdeSystem:
    drift: np.ndarray
    diffusions: np.ndarray
    interpretation: str = STRATONOVICH
    factor: LowRankNoise | None = None

    def __post_init__(self):
        d = np.asarray(self.drift)
        b = np.asarray(self.diffusions)
        if b.size == 0:
            b = np.zeros((0,) + d.shape, dtype=d.dtype)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValidationError("drift must be a square matrix")
        if b.ndim != 3 or b.shape[1:] != d.shape:
            raise ValidationError(f"diffusions must have shape (M, {d.shape[0]}, {d.shape[0]})")
        if self.interpretation not in (STRATONOVICH, ITO):
            raise ValidationError(f"unknown interpretation {self.interpretation!r}")
        object.__setattr__(self, "drift", d)
        object.__setattr__(self, "diffusions", b)

    @classmethod
    def from_factor(cls, drift, factor: LowRankNoise, interpretation=STRATONOVICH):
        return cls(np.asarray(drift), factor.dense(), interpretation, factor)

    @property
    def dim(self):
        return self.drift.shape[0]

    @property
    def channels(self):
        return self.diffusions.shape[0]

    @property
    def noise_intensity(self):
        """``sqrt(||sum_k B_k^H B_k||)`` on the modal core when factored."""
        if self.channels == 0:
            return 0.0
        mats = self.factor.core if self.factor is not None else self.diffusions
        s = np.einsum("kji,kjl->il", mats.conj(), mats)
        return float(np.sqrt(np.linalg.norm(s, 2)))


@dataclass
class Trajectory:
    """Recorded path.  ``norms`` is ``|X(t)|`` in the weighted norm.

    Closed-loop runs also fill ``norm_u`` (``|P_N X|``), ``norm_s``
    (``|X - P_N X|``), ``modal`` (sensor read-out of the full state) and
    ``modal_reduced`` (the directly integrated modal system).
    """

    times: np.ndarray
    norms: np.ndarray
    seed: int
    path: int
    dt: float
    states: np.ndarray | None = None
    norm_u: np.ndarray | None = None
    norm_s: np.ndarray | None = None
    modal: np.ndarray | None = None
    modal_reduced: np.ndarray | None = None


@dataclass(frozen=True)
class LyapunovEstimate:
    value: float
    stderr: float
    paths: int
    horizon: float
    renorm_interval: int
    dt: float
    per_path: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class LyapunovParams:
    paths: int = 64
    T: float = 50.0
    dt: float | None = None
    renorm_every: int = 100
    seed: int = 0
    path_offset: int = 0
    scheme: str = "split"
    x0: np.ndarray | None = None


@dataclass(frozen=True)
class SimulationParams:
    T: float = 60.0
    dt: float | None = None
    paths: int = 64
    seed: int = 0
    path_offset: int = 0
    record_dt: float = 0.1
    scheme: str = "split"
    noise_dt: float | None = None
    reduced: bool = True
    keep_states: bool = False


def ito_correction(system: SdeSystem) -> SdeSystem:
    """Ito form of a Stratonovich system: drift ``D + 1/2 sum_k B_k^2``."""
    if system.interpretation != STRATONOVICH:
        raise ValidationError("system is already in Ito form")
    corr = np.einsum("kij,kjl->il", system.diffusions, system.diffusions)
    return replace(system, drift=system.drift + 0.5 * corr, interpretation=ITO)


def stratonovich_correction(system: SdeSystem) -> SdeSystem:
    if system.interpretation != ITO:
        raise ValidationError("system is already in Stratonovich form")
    corr = np.einsum("kij,kjl->il", system.diffusions, system.diffusions)
    return replace(system, drift=system.drift - 0.5 * corr, interpretation=STRATONOVICH)


def default_step(system: SdeSystem, scheme: str = "heun", base: float = 1e-3) -> float:
    """``base`` reduced until ``sigma^2 dt <= 0.1`` and, for explicit drift, ``||D|| dt <= 0.1``."""
    dt = base
    s = system.noise_intensity
    if s > 0:
        dt = min(dt, 0.1 / s**2)
    if scheme != "split":
        dn = float(np.linalg.norm(system.drift, 2))
        if dn > 0:
            dt = min(dt, 0.1 / dn)
    return dt


def _fit_step(dt, T, record_dt=None):
    """Largest step <= ``dt`` dividing ``record_dt`` (if it divides ``T``) or else ``T``."""
    unit = T
    if record_dt is not None:
        r = T / record_dt
        if abs(r - round(r)) <= 1e-9 * r:
            unit = record_dt
    return unit / math.ceil(unit / dt - 1e-9)


def _resolve_scheme(system, scheme):
    if scheme is None:
        return "heun" if system.interpretation == STRATONOVICH else "euler"
    if scheme not in ("heun", "euler", "split"):
        raise ValidationError(f"unknown scheme {scheme!r}")
    if scheme == "euler" and system.interpretation != ITO:
        raise ValidationError("Euler-Maruyama needs an Ito system; apply ito_correction first")
    if scheme in ("heun", "split") and system.interpretation != STRATONOVICH:
        raise ValidationError(f"scheme {scheme!r} integrates Stratonovich systems only")
    return scheme


class _Stepper:
    """One-step map for a batch of states stored as columns of ``X``."""

    def __init__(self, system: SdeSystem, dt: float, scheme: str):
        self.system = system
        self.dt = dt
        self.scheme = scheme
        self.D = system.drift
        self.f = system.factor
        self.B = system.diffusions
        if scheme == "split":
            self.E = scipy.linalg.expm(system.drift * dt)
            if self.f is not None:
                self.S = self.f.coupling

    def noise(self, X, dW):
        # sum_k dW[p, k] B_k X[:, p]
        if self.system.channels == 0:
            return np.zeros_like(X)
        if self.f is not None:
            Y = self.f.Vh @ X
            Z = np.einsum("kab,bp,pk->ap", self.f.core, Y, dW)
            return self.f.U @ Z
        return np.einsum("kij,jp,pk->ip", self.B, X, dW)

    def step(self, X, dW):
        if self.scheme == "euler":
            return X + self.D @ X * self.dt + self.noise(X, dW)
        if self.scheme == "heun":
            k1 = self.D @ X * self.dt + self.noise(X, dW)
            Xp = X + k1
            k2 = self.D @ Xp * self.dt + self.noise(Xp, dW)
            return X + 0.5 * (k1 + k2)
        X = self.E @ X
        if self.system.channels == 0:
            return X
        if self.f is not None:
            # Cayley(U G Vh) = I + U G (I - S G / 2)^-1 Vh
            G = np.einsum("pk,kab->pab", dW, self.f.core)
            r = G.shape[-1]
            Y = (self.f.Vh @ X).T[..., None]
            Z = np.linalg.solve(np.eye(r) - 0.5 * self.S[None] @ G, Y)
            return X + self.f.U @ (G @ Z)[..., 0].T
        G = np.einsum("pk,kij->pij", dW, self.B)
        n = G.shape[-1]
        Y = X.T[..., None]
        rhs = Y + 0.5 * (G @ Y)
        return np.linalg.solve(np.eye(n) - 0.5 * G, rhs)[..., 0].T


def _check_times(dt, T):
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if not T >= dt:
        raise ValidationError("horizon T must be at least dt")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * T:
        raise ValidationError(f"T={T} is not a multiple of dt={dt}")
    return steps


def _ratio(coarse, fine, what):
    r = int(round(coarse / fine))
    if r < 1 or abs(r * fine - coarse) > 1e-9 * coarse:
        raise ValidationError(f"{what}: {coarse} is not a multiple of {fine}")
    return r


def _drive(steppers, states, steps, increments, record_every, record):
    """Advance every stepper with shared increments, calling ``record`` at sample times."""
    record(0, states)
    done = 0
    while done < steps:
        count = min(BLOCK, steps - done)
        dW = increments(done, count)
        for i in range(count):
            for j, st in enumerate(steppers):
                states[j] = st.step(states[j], dW[i])
            k = done + i + 1
            if not np.all(np.isfinite(states[0])):
                raise BlowUpError(f"non-finite state at step {k}", step=k)
            if k % record_every == 0 or k == steps:
                record(k, states)
        done += count


def _initial_batch(x0, P, dtype=None):
    x0 = np.asarray(x0)
    if x0.ndim != 1:
        raise ValidationError("x0 must be a vector")
    dt = np.result_type(x0, dtype) if dtype is not None else x0.dtype
    if dt.kind not in "fc":
        dt = np.float64
    return np.repeat(x0.astype(dt)[:, None], P, axis=1)


def integrate_ensemble(system: SdeSystem, x0, dt: float, T: float, seed: int = 0, paths: int = 1,
                       path_offset: int = 0, scheme=None, noise_dt=None, record_every: int = 1,
                       weights=None, increments=None, keep_states=True):
    """Integrate ``paths`` independent copies of ``system`` from ``x0``.

    Brownian increments are drawn on a grid of step ``noise_dt`` (default
    ``dt``) and summed up to ``dt``.  ``increments`` may override the noise
    entirely (a callable ``(start, count) -> (count, paths, M)``).
    """
    scheme = _resolve_scheme(system, scheme)
    steps = _check_times(dt, T)
    x0 = np.asarray(x0)
    if x0.shape != (system.dim,):
        raise ValidationError(f"x0 has shape {x0.shape}, expected ({system.dim},)")
    w = np.ones(system.dim) if weights is None else np.asarray(weights)
    ids = list(range(path_offset, path_offset + paths))
    if increments is None:
        ndt = dt if noise_dt is None else noise_dt
        ratio = _ratio(dt, ndt, "dt")
        src = BrownianSource(seed, system.channels, ndt)

        def increments(start, count):
            return src.increments(ids, start, count, ratio)

    dtype = np.result_type(system.drift, system.diffusions, x0, np.float64)
    X = _initial_batch(x0, paths, dtype)
    times, norms, snaps = [], [], []

    def record(k, states):
        times.append(k * dt)
        norms.append(weighted_norm(states[0], w))
        if keep_states:
            snaps.append(states[0].copy())

    _drive([_Stepper(system, dt, scheme)], [X], steps, increments, record_every, record)
    times = np.array(times)
    norms = np.array(norms)
    snaps = np.array(snaps) if keep_states else None
    return [
        Trajectory(
            times=times,
            norms=norms[:, p],
            seed=seed,
            path=ids[p],
            dt=dt,
            states=None if snaps is None else snaps[:, :, p],
        )
        for p in range(paths)
    ]


def integrate(system: SdeSystem, x0, dt: float, T: float, seed: int = 0, path: int = 0, scheme=None,
              noise_dt=None, record_every: int = 1, weights=None) -> Trajectory:
    """Single path; see ``integrate_ensemble``."""
    return integrate_ensemble(system, x0, dt, T, seed=seed, paths=1, path_offset=path, scheme=scheme,
                              noise_dt=noise_dt, record_every=record_every, weights=weights)[0]


def _smoothed(increments, q):
    """Piecewise-linear Brownian interpolation on a grid ``q`` steps wide.

    On each smoothing interval the derivative of the interpolant is constant,
    so every step inside it receives an equal share of the interval's
    increment.
    """

    def inner(start, count):
        if start % q or count % q:
            raise ValidationError("smoothing intervals must align with integration chunks")
        raw = increments(start, count)
        coarse = raw.reshape(count // q, q, *raw.shape[1:]).sum(axis=1) / q
        return np.repeat(coarse, q, axis=0)

    return inner


def wong_zakai(system: SdeSystem, x0, dt: float, T: float, smoothing_dt: float, seed: int = 0,
               paths: int = 1, path_offset: int = 0, scheme="heun", noise_dt=None, record_every=1,
               weights=None, keep_states=True):
    """Random-ODE solution driven by piecewise-linear interpolated Brownian paths.

    With ``scheme='heun'`` this is the deterministic Heun method applied to
    ``dX/dt = (D + sum_k B_k dbeta_k/dt) X``.
    """
    if system.interpretation != STRATONOVICH:
        raise ValidationError("smooth-noise limits are Stratonovich systems")
    steps = _check_times(dt, T)
    q = _ratio(smoothing_dt, dt, "smoothing_dt")
    if steps % q:
        raise ValidationError("T must be a multiple of smoothing_dt")
    if BLOCK % q:
        raise ValidationError(f"smoothing_dt / dt must divide {BLOCK}")
    ndt = dt if noise_dt is None else noise_dt
    ratio = _ratio(dt, ndt, "dt")
    src = BrownianSource(seed, system.channels, ndt)
    ids = list(range(path_offset, path_offset + paths))

    def raw(start, count):
        return src.increments(ids, start, count, ratio)

    return integrate_ensemble(system, x0, dt, T, seed=seed, paths=paths, path_offset=path_offset,
                              scheme=scheme, record_every=record_every, weights=weights,
                              increments=_smoothed(raw, q), keep_states=keep_states)


def estimate_lyapunov(system: SdeSystem, params: LyapunovParams = LyapunovParams()) -> LyapunovEstimate:
    """Top Lyapunov exponent from renormalized path integrations.

    Each path accumulates the logarithms of the rescaling factors applied
    every ``renorm_every`` steps; its exponent is the total divided by the
    horizon.  The estimate is the mean over paths with its standard error.
    """
    if params.paths < 8:
        raise ValidationError("at least 8 paths are needed for an error estimate")
    scheme = _resolve_scheme(system, params.scheme)
    dt = params.dt if params.dt is not None else default_step(system, scheme)
    steps = int(round(params.T / dt))
    if steps < 1:
        raise ValidationError("horizon shorter than one step")
    T = steps * dt
    n = system.dim
    x0 = np.ones(n) / np.sqrt(n) if params.x0 is None else np.asarray(params.x0)
    x0 = x0 / np.linalg.norm(x0)
    P = params.paths
    ids = list(range(params.path_offset, params.path_offset + P))
    src = BrownianSource(params.seed, system.channels, dt)
    stepper = _Stepper(system, dt, scheme)
    X = _initial_batch(x0, P, np.result_type(system.drift, system.diffusions))
    acc = np.zeros(P)
    renorm = max(1, int(params.renorm_every))
    done = 0
    while done < steps:
        count = min(BLOCK, steps - done)
        dW = src.increments(ids, done, count)
        for i in range(count):
            X = stepper.step(X, dW[i])
            k = done + i + 1
            if k % renorm == 0 or k == steps:
                r = np.linalg.norm(X, axis=0)
                if not np.all(np.isfinite(r)) or np.any(r == 0):
                    raise BlowUpError(
                        f"state left the floating-point range before renormalization at step {k}; "
                        "renormalize more often", step=k)
                acc += np.log(r)
                X = X / r
        done += count
    rates = acc / T
    return LyapunovEstimate(
        value=float(rates.mean()),
        stderr=float(rates.std(ddof=1) / math.sqrt(P)),
        paths=P,
        horizon=T,
        renorm_interval=renorm,
        dt=dt,
        per_path=rates,
    )


def closed_loop_system(model, law) -> SdeSystem:
    """``dX = -A X dt + sum_k B_k X o dbeta_k`` with the law's realized maps."""
    return SdeSystem.from_factor(-model.generator, law.factor())


def modal_system(law) -> SdeSystem:
    """Reduced system ``dy = -A_u y dt + sum_k C^k y o dbeta_k``."""
    return SdeSystem(-law.modal_generator, law.noise.matrices)


def _closed_loop_run(model, dec, law, x0, params: SimulationParams, increments_factory):
    system = closed_loop_system(model, law)
    scheme = _resolve_scheme(system, params.scheme)
    dt = params.dt if params.dt is not None else _fit_step(default_step(system, scheme), params.T, params.record_dt)
    steps = _check_times(dt, params.T)
    record_every = max(1, int(round(params.record_dt / dt)))
    P = params.paths
    ids = list(range(params.path_offset, params.path_offset + P))
    x0 = np.asarray(x0)
    if x0.shape != (model.dim,):
        raise ValidationError(f"x0 has shape {x0.shape}, expected ({model.dim},)")
    dtype = np.result_type(system.drift, system.diffusions, x0, np.float64)
    X = _initial_batch(x0, P, dtype)
    steppers = [_Stepper(system, dt, scheme)]
    states = [X]
    sensors_h = law.factor().Vh
    if params.reduced:
        red = modal_system(law)
        y0 = sensors_h @ x0.astype(dtype)
        steppers.append(_Stepper(red, dt, "heun"))
        states.append(_initial_batch(y0, P, np.result_type(red.drift, y0)))
    w = model.weights
    rec = {k: [] for k in ("t", "X", "u", "s", "y", "yr", "states")}

    def record(k, st):
        Xk = st[0]
        xu = dec.apply_projector(Xk)
        rec["t"].append(k * dt)
        rec["X"].append(weighted_norm(Xk, w))
        rec["u"].append(weighted_norm(xu, w))
        rec["s"].append(weighted_norm(Xk - xu, w))
        rec["y"].append(sensors_h @ Xk)
        if params.reduced:
            rec["yr"].append(st[1].copy())
        if params.keep_states:
            rec["states"].append(Xk.copy())

    increments = increments_factory(system.channels, dt, ids)
    _drive(steppers, states, steps, increments, record_every, record)
    t = np.array(rec["t"])
    arr = {k: np.array(v) for k, v in rec.items() if v}
    out = []
    for p in range(P):
        out.append(Trajectory(
            times=t,
            norms=arr["X"][:, p],
            seed=params.seed,
            path=ids[p],
            dt=dt,
            states=arr["states"][:, :, p] if params.keep_states else None,
            norm_u=arr["u"][:, p],
            norm_s=arr["s"][:, p],
            modal=arr["y"][:, :, p],
            modal_reduced=arr["yr"][:, :, p] if params.reduced else None,
        ))
    return out


def _brownian_factory(params):
    def factory(channels, dt, ids):
        ndt = dt if params.noise_dt is None else params.noise_dt
        ratio = _ratio(dt, ndt, "dt")
        src = BrownianSource(params.seed, channels, ndt)
        return lambda start, count: src.increments(ids, start, count, ratio)
    return factory


def simulate_closed_loop(model, dec, law, x0, params: SimulationParams = SimulationParams()):
    """Ensemble of closed-loop paths, with the reduced modal system alongside.

    The reduced system is integrated with stochastic Heun from the same
    Brownian increments, so ``modal`` and ``modal_reduced`` can be compared
    path by path.
    """
    return _closed_loop_run(model, dec, law, x0, params, _brownian_factory(params))


def simulate_wong_zakai(model, dec, law, x0, params: SimulationParams, smoothing_dt: float):
    """Closed loop driven by piecewise-linear smoothed Brownian paths."""
    base = _brownian_factory(params)

    def factory(channels, dt, ids):
        q = _ratio(smoothing_dt, dt, "smoothing_dt")
        if BLOCK % q:
            raise ValidationError(f"smoothing_dt / dt must divide {BLOCK}")
        return _smoothed(base(channels, dt, ids), q)

    _ratio(params.T, smoothing_dt, "T")
    params = replace(params, reduced=False)
    return _closed_loop_run(model, dec, law, x0, params, factory)


def ensemble_summary(trajectories):
    """Per-time mean, 10% and 90% quantiles of ``log |X(t)|`` across paths."""
    t = trajectories[0].times
    logs = np.log(np.array([tr.norms for tr in trajectories]))
    return {
        "t": t,
        "mean_log_norm": logs.mean(axis=0),
        "q10": np.quantile(logs, 0.1, axis=0),
        "q90": np.quantile(logs, 0.9, axis=0),
    }
