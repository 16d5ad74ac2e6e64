"""Noise feedback synthesis.

A feedback law has the rank-N form

    R_k(X) = sum_ij C^k_ij <X, s_j> a_i,   realized as  mask * R_k(X),

where ``s_j`` are sensors (dual eigenvectors) and ``a_i`` actuators chosen so
that ``<mask a_i, s_j> = delta_ij``.  Under that identity the modal
coordinates ``y_j = <X, s_j>`` obey ``dy = -A_u y dt + sum_k C^k y o dbeta_k``,
which the skew matrices ``C^k`` stabilize.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError, SingularGramError, SpectralError, TuningError, ValidationError
from .model import OperatorModel, norm
from .sde import LowRankNoise, LyapunovParams, SdeSystem, estimate_lyapunov
from .spectral import SpectralData, biorthonormalize

__all__ = [
    "NoiseDesign",
    "ActuatorSet",
    "FeedbackLaw",
    "RealBasis",
    "rotation_generators",
    "synthesize_noise_matrices",
    "trace_average_rate",
    "tune_noise_intensity",
    "estimate_design_rate",
    "actuator_system",
    "build_actuators",
    "build_feedback",
    "build_real_basis",
    "build_real_feedback",
]

MAX_GRAM_CONDITION = 1e12
IDENTITY_TOL = 1e-8
TUNING_PARAMS = LyapunovParams(paths=32, T=20.0)


@dataclass(frozen=True)
class NoiseDesign:
    matrices: np.ndarray
    sigma: float
    achieved_rate: float | None = None
    stderr: float | None = None
    certified: bool = False
    note: str = ""

    @property
    def M(self):
        return self.matrices.shape[0]

    @property
    def N(self):
        return self.matrices.shape[1]


@dataclass(frozen=True)
class ActuatorSet:
    gram: np.ndarray
    alpha: np.ndarray
    actuators: np.ndarray
    condition_number: float
    residual: float


@dataclass(frozen=True)
class RealBasis:
    """Orthonormal real basis of the unstable subspace and its dual.

    ``A_u_re[i, j] = <A psi_j, psi_i>`` is the matrix of the generator
    restricted to the subspace, acting on coordinates in this basis.
    """

    psi: np.ndarray
    dual: np.ndarray
    A_u_re: np.ndarray
    weights: np.ndarray

    @property
    def N(self):
        return self.psi.shape[1]


@dataclass(frozen=True)
class FeedbackLaw:
    kind: str
    noise: NoiseDesign
    sensors: np.ndarray
    actuators: ActuatorSet
    mask: np.ndarray
    weights: np.ndarray
    modal_generator: np.ndarray

    @property
    def N(self):
        return self.sensors.shape[1]

    def factor(self) -> LowRankNoise:
        U = self.mask[:, None] * self.actuators.actuators
        Vh = self.sensors.conj().T * self.weights[None, :]
        core = self.noise.matrices
        if self.kind == "real":
            U, Vh, core = U.real, Vh.real, core.real
        return LowRankNoise(U=U, core=core, Vh=Vh)

    def maps(self) -> np.ndarray:
        """Realized diffusion maps ``X -> mask * R_k(X)`` as dense ``(M, n, n)`` matrices."""
        return self.factor().dense()

    def apply(self, X, k):
        """``R_k(X)`` before masking."""
        y = (self.sensors.conj().T * self.weights[None, :]) @ X
        return self.actuators.actuators @ (self.noise.matrices[k] @ y)


def rotation_generators(N: int, sigma: float) -> np.ndarray:
    """``sigma (E_{k+1,k} - E_{k,k+1})`` for k = 1..N-1: plane rotations of adjacent coordinates."""
    C = np.zeros((max(N - 1, 0), N, N))
    for k in range(N - 1):
        C[k, k + 1, k] = sigma
        C[k, k, k + 1] = -sigma
    return C


def trace_average_rate(A_u) -> float:
    """Limit of the top Lyapunov exponent under strong mixing, ``-Re tr(A_u) / N``."""
    A_u = np.atleast_2d(np.asarray(A_u))
    return -float(np.trace(A_u).real) / A_u.shape[0]


def synthesize_noise_matrices(lambda_u, sigma: float) -> NoiseDesign:
    lam = np.atleast_1d(np.asarray(lambda_u, dtype=complex))
    N = lam.shape[0]
    if N == 0:
        raise ValidationError("no unstable modes: nothing to stabilize")
    if not sigma >= 0:
        raise ValidationError("sigma must be nonnegative")
    total = float(np.sum(lam.real))
    if N == 1:
        if total <= 0:
            raise ValidationError("a single mode with nonpositive real part cannot be stabilized by skew noise")
        return NoiseDesign(rotation_generators(1, sigma), float(sigma),
                           note="single mode: no skew noise channel exists; the drift alone is stable")
    if total <= 0:
        raise ValidationError("the real parts of the unstable block must sum to a positive number")
    return NoiseDesign(rotation_generators(N, sigma), float(sigma))


def estimate_design_rate(A_u, design: NoiseDesign, params: LyapunovParams = TUNING_PARAMS):
    system = SdeSystem(-np.asarray(A_u), design.matrices)
    return estimate_lyapunov(system, params)


def tune_noise_intensity(A_u, target_rate: float, params: LyapunovParams = TUNING_PARAMS,
                         sigma0: float | None = None, max_doublings: int = 6,
                         confidence: float = 2.0) -> NoiseDesign:
    """Double ``sigma`` until the estimated exponent is below ``target_rate``.

    Certification requires ``estimate + confidence * stderr <= target_rate``.
    A drift that is already stable enough is certified at ``sigma = 0``.
    """
    A_u = np.atleast_2d(np.asarray(A_u))
    N = A_u.shape[0]
    lam = np.linalg.eigvals(A_u)
    if not target_rate < 0:
        raise ValidationError("target_rate must be negative")
    if float(np.sum(lam.real)) <= 0:
        raise ValidationError("the real parts of the unstable block must sum to a positive number")
    bound = trace_average_rate(A_u)
    if N > 1 and target_rate <= bound:
        raise ValidationError(
            f"target rate {target_rate:g} is unreachable: skew noise cannot push the exponent "
            f"below the trace average {bound:.6g}")

    def attempt(sigma):
        design = synthesize_noise_matrices(lam, sigma)
        est = estimate_design_rate(A_u, design, params)
        ok = est.value + confidence * est.stderr <= target_rate
        return replace(design, achieved_rate=est.value, stderr=est.stderr, certified=bool(ok))

    best = None
    if np.all(lam.real > 0) or N == 1:
        d = attempt(0.0)
        if d.certified or N == 1:
            if not d.certified:
                raise TuningError(f"single-mode drift decays at {d.achieved_rate:.4g}, short of the target",
                                  best_rate=d.achieved_rate, best_sigma=0.0)
            return d
        best = d
    sigma = sigma0 if sigma0 is not None else 2.0 * float(np.max(np.abs(lam)))
    for _ in range(max_doublings + 1):
        d = attempt(sigma)
        if best is None or d.achieved_rate < best.achieved_rate:
            best = d
        if d.certified:
            return d
        sigma *= 2.0
    raise TuningError(
        f"no certified sigma up to {sigma / 2:g}; best rate {best.achieved_rate:.4g} at sigma={best.sigma:g}",
        best_rate=best.achieved_rate, best_sigma=best.sigma)


def actuator_system(duals, weights, mask, max_condition=MAX_GRAM_CONDITION) -> ActuatorSet:
    """Actuators ``a_i = sum_l alpha_il d_l`` with ``<mask a_i, d_j> = delta_ij``.

    ``gram[l, j] = <mask d_l, d_j>`` and ``alpha = gram^-1``.
    """
    d = np.asarray(duals)
    wm = np.asarray(weights) * np.asarray(mask)
    gram = (d.T * wm[None, :]) @ d.conj()
    cond = float(np.linalg.cond(gram)) if d.shape[1] else 1.0
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularGramError(
            f"actuator Gram matrix is numerically singular on the control subdomain "
            f"(condition number {cond:.3e}); enlarge the mask", condition_number=cond)
    alpha = np.linalg.solve(gram.T, np.eye(gram.shape[0])).T
    act = d @ alpha.T
    ident = (act.T * wm[None, :]) @ d.conj()
    residual = float(np.max(np.abs(ident - np.eye(d.shape[1])))) if d.shape[1] else 0.0
    if residual > IDENTITY_TOL:
        raise NumericalError(f"actuator identity residual {residual:.3e} exceeds {IDENTITY_TOL:g}")
    return ActuatorSet(gram=gram, alpha=alpha, actuators=act, condition_number=cond, residual=residual)


def build_actuators(spec: SpectralData, N: int, model: OperatorModel) -> ActuatorSet:
    if spec.biorthonormal < N:
        spec = biorthonormalize(spec, N)
    if spec.dim != model.dim:
        raise ValidationError("spectral data and model have different dimensions")
    return actuator_system(spec.left[:, :N], model.weights, model.mask)


def _mask_of(mask):
    if isinstance(mask, OperatorModel):
        return mask.mask
    return np.asarray(mask, dtype=float)


def build_feedback(noise: NoiseDesign, spec: SpectralData, actuators: ActuatorSet, mask) -> FeedbackLaw:
    N = noise.N
    m = _mask_of(mask)
    if actuators.actuators.shape != (spec.dim, N) or m.shape != (spec.dim,):
        raise ValidationError("noise design, actuators, spectrum and mask disagree in dimension")
    if spec.biorthonormal < N:
        spec = biorthonormalize(spec, N)
    return FeedbackLaw(
        kind="complex",
        noise=noise,
        sensors=spec.left[:, :N].copy(),
        actuators=actuators,
        mask=m,
        weights=spec.weights,
        modal_generator=np.diag(spec.eigenvalues[:N]),
    )


def build_real_basis(spec: SpectralData, N: int, tol: float = 1e-8) -> RealBasis:
    """Gram-Schmidt on ``{Re phi_j, Im phi_j}`` in the weighted product.

    The dual family ``psi*_j = sum_l <psi_j, phi_l> phi*_l`` satisfies
    ``<psi_i, psi*_j> = delta_ij`` and annihilates the stable subspace.
    """
    if not spec.is_real:
        raise ValidationError("a real basis needs a real generator")
    if spec.biorthonormal < N:
        spec = biorthonormalize(spec, N)
    if N < spec.dim and spec.partner[N - 1] >= N:
        raise ValidationError("leading block splits a conjugate pair")
    w = spec.weights
    phi = spec.right[:, :N]
    cands = []
    for j in range(N):
        cands.append(phi[:, j].real)
        cands.append(phi[:, j].imag)
    scale = max(float(norm(c, w)) for c in cands)
    basis = []
    for v in cands:
        v = v.copy()
        for _ in range(2):
            for q in basis:
                v -= np.sum(w * v * q) * q
        nv = float(norm(v, w))
        if nv > tol * scale:
            basis.append(v / nv)
    if len(basis) != N:
        raise SpectralError(f"Gram-Schmidt kept {len(basis)} vectors, expected {N}; conjugate pairing is broken")
    psi = np.column_stack(basis)
    a_psi = spec.generator @ psi
    A_re = (psi.T * w[None, :]) @ a_psi
    dual = spec.left[:, :N] @ ((phi.conj().T * w[None, :]) @ psi)
    if np.max(np.abs(dual.imag)) > 1e-8 * max(1.0, float(np.max(np.abs(dual)))):
        raise SpectralError("real dual basis has a significant imaginary part")
    return RealBasis(psi=psi, dual=dual.real.copy(), A_u_re=A_re, weights=np.array(w))


def build_real_feedback(basis: RealBasis, model: OperatorModel, mask=None, sigma: float | None = None,
                        target_rate: float | None = None,
                        params: LyapunovParams = TUNING_PARAMS) -> FeedbackLaw:
    """Real-valued law on the basis ``psi``; noise given by ``sigma`` or tuned to ``target_rate``."""
    m = model.mask if mask is None else _mask_of(mask)
    act = actuator_system(basis.dual, basis.weights, m)
    if sigma is not None:
        noise = synthesize_noise_matrices(np.linalg.eigvals(basis.A_u_re), sigma)
    elif target_rate is not None:
        noise = tune_noise_intensity(basis.A_u_re, target_rate, params)
    else:
        raise ValidationError("give either sigma or target_rate")
    return FeedbackLaw(
        kind="real",
        noise=noise,
        sensors=basis.dual,
        actuators=act,
        mask=m,
        weights=basis.weights,
        modal_generator=basis.A_u_re,
    )
