"""Eigenstructure of the generator and the unstable/stable splitting.

Everything here works in the model's weighted inner product.  Left
eigenvectors are the eigenvectors of the weighted adjoint
``A* = W^-1 A^H W`` with eigenvalue ``conj(lambda)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import SpectralError, ValidationError
from .model import OperatorModel, norm

__all__ = [
    "SpectralData",
    "UnstableDecomposition",
    "LyapunovWeight",
    "SemisimpleReport",
    "eigendecompose",
    "biorthonormalize",
    "unstable_count",
    "select_unstable_index",
    "check_semisimple",
    "project",
    "solve_lyapunov",
    "solve_lyapunov_block",
]

# eigenvalues closer than this (relative) are treated as one eigenvalue
CLUSTER_TOL = 1e-6


@dataclass(frozen=True)
class SpectralData:
    """Sorted eigensystem of a model.

    ``right[:, j]`` and ``left[:, j]`` belong to ``eigenvalues[j]``.
    ``partner[j]`` is the index of the conjugate eigenvalue for real
    generators (``j`` itself for real eigenvalues and for complex
    generators).  ``biorthonormal`` counts the leading columns for which
    ``<right_i, left_j> = delta_ij`` has been enforced.
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    partner: np.ndarray
    residuals: np.ndarray
    weights: np.ndarray
    generator: np.ndarray
    biorthonormal: int = 0

    @property
    def dim(self):
        return self.eigenvalues.shape[0]

    @property
    def is_real(self):
        return not np.iscomplexobj(self.generator)

    def cross_gram(self, count=None):
        """Matrix ``G[i, j] = <right_i, left_j>`` over the leading block."""
        k = self.dim if count is None else count
        return ((self.left[:, :k].conj().T * self.weights) @ self.right[:, :k]).T

    def biorthogonality_residual(self, count=None):
        k = self.dim if count is None else count
        g = self.cross_gram(k)
        return float(np.max(np.abs(g - np.eye(k)))) if k else 0.0


@dataclass(frozen=True)
class UnstableDecomposition:
    """Leading ``N`` modes, their duals, and the stable remainder rate.

    ``P_N x = sum_j <x, left_j> right_j`` for ``j < N``.
    """

    N: int
    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    weights: np.ndarray
    stable_rate: float

    @property
    def A_u(self):
        return np.diag(self.eigenvalues)

    @property
    def trace_sum(self):
        return float(np.sum(self.eigenvalues.real))

    def coordinates(self, x):
        """Modal coordinates ``y_j = <x, left_j>``; ``x`` may be ``(n,)`` or ``(n, P)``."""
        return (self.left.conj().T * self.weights) @ x

    def apply_projector(self, x):
        return self.right @ self.coordinates(x)


@dataclass(frozen=True)
class SemisimpleReport:
    semisimple: bool
    # (eigenvalue, algebraic multiplicity, numerical geometric multiplicity)
    defective: tuple = ()
    checked: tuple = ()

    def __bool__(self):
        return self.semisimple


@dataclass(frozen=True)
class LyapunovWeight:
    """Solution of ``A_s Q + Q A_s^H = gamma I`` on a truncated stable block.

    ``basis`` is the weighted-orthonormal basis in which ``A_s`` is written.
    ``coercivity`` is the best constant ``c`` with
    ``Re <A_s x, x>_Q >= c |x|_Q^2`` in the product ``<x, y>_Q = y^H Q^-1 x``;
    ``coercive`` records whether ``c >= gamma / 2``.
    """

    Q: np.ndarray
    gamma: float
    A_s: np.ndarray
    residual: float
    coercivity: float
    coercive: bool
    basis: np.ndarray = field(default=None, repr=False)


def _phase_normalize(v, weights):
    """Unit weighted norm with the largest-modulus entry real and positive."""
    nv = norm(v, weights)
    if np.any(nv == 0):
        raise SpectralError("eigensolver returned a zero vector")
    v = v / nv
    idx = np.argmax(np.abs(v) - 1e-12 * np.arange(v.shape[0])[:, None], axis=0)
    ph = v[idx, np.arange(v.shape[1])]
    return v * (np.abs(ph) / ph)


def _sort_order(lam):
    scale = max(1.0, float(np.max(np.abs(lam))))
    order = np.argsort(lam.real, kind="stable")
    re = lam.real[order]
    # snap real parts that agree to rounding so conjugates tie exactly
    groups = np.concatenate([[0], np.cumsum(np.diff(re) > 1e-12 * scale)])
    return order[np.lexsort((lam.imag[order], groups))]


def _clusters(lam, tol=CLUSTER_TOL):
    """Group indices of a sorted eigenvalue array into numerically equal sets."""
    out = []
    used = np.zeros(lam.shape[0], dtype=bool)
    for i in range(lam.shape[0]):
        if used[i]:
            continue
        close = np.abs(lam - lam[i]) <= tol * max(1.0, abs(lam[i]))
        close &= ~used
        idx = np.flatnonzero(close)
        used[idx] = True
        out.append(idx)
    return out


def eigendecompose(model: OperatorModel, tol: float = 1e-8) -> SpectralData:
    """Full eigensystem of the generator and its weighted adjoint.

    Eigenvalues are sorted by ascending real part, ties broken by ascending
    imaginary part.  Right and left vectors are scaled to unit weighted norm;
    ``biorthonormalize`` fixes the mutual scaling.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    a = model.generator
    w = model.weights
    try:
        lam, vl, vr = scipy.linalg.eig(a, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectralError(f"eigensolver failed: {exc}") from exc
    if not np.all(np.isfinite(lam)):
        raise SpectralError("eigensolver returned non-finite eigenvalues")
    order = _sort_order(lam)
    lam = lam[order].astype(complex)
    vr = vr[:, order].astype(complex)
    # vl^H A = lam vl^H  =>  (W^-1 vl) is an eigenvector of W^-1 A^H W
    vl = (vl[:, order] / w[:, None]).astype(complex)
    vr = _phase_normalize(vr, w)
    vl = _phase_normalize(vl, w)

    n = lam.shape[0]
    partner = np.arange(n)
    if model.is_real:
        scale = max(1.0, float(np.max(np.abs(lam))))
        j = 0
        while j < n:
            if abs(lam[j].imag) <= 1e-12 * scale:
                lam[j] = lam[j].real
                vr[:, j] = vr[:, j].real
                vl[:, j] = vl[:, j].real
                j += 1
                continue
            if j + 1 >= n or abs(lam[j + 1] - np.conj(lam[j])) > 1e-8 * scale:
                raise SpectralError(f"eigenvalue {lam[j]} has no adjacent conjugate partner")
            # LAPACK pairs conjugates exactly; enforce it after normalization
            lam[j + 1] = np.conj(lam[j])
            vr[:, j + 1] = np.conj(vr[:, j])
            vl[:, j + 1] = np.conj(vl[:, j])
            partner[j], partner[j + 1] = j + 1, j
            j += 2

    adj = model.adjoint()
    res_r = norm(a @ vr - vr * lam, w)
    res_l = norm(adj @ vl - vl * lam.conj(), w)
    residuals = np.maximum(res_r, res_l)
    scale = max(1.0, float(np.max(np.abs(lam))))
    worst = float(np.max(residuals))
    if worst > tol * scale:
        raise SpectralError(f"eigenpair residual {worst:.3e} exceeds {tol:g} x {scale:.3g}")
    return SpectralData(
        eigenvalues=lam,
        right=vr,
        left=vl,
        partner=partner,
        residuals=residuals,
        weights=np.array(w),
        generator=np.array(a),
    )


def biorthonormalize(spec: SpectralData, leading: int) -> SpectralData:
    """Rescale left vectors so that ``<right_i, left_j> = delta_ij`` for i, j < leading.

    Inside a numerically degenerate eigenvalue the left basis is replaced by
    the solution of the cross-Gram system, since eigensolvers return
    arbitrary bases of an eigenspace.
    """
    if not 0 <= leading <= spec.dim:
        raise ValidationError(f"leading must be in [0, {spec.dim}], got {leading}")
    lam = spec.eigenvalues
    if 0 < leading < spec.dim:
        tail = np.abs(lam[leading:] - lam[leading - 1]) <= CLUSTER_TOL * max(1.0, abs(lam[leading - 1]))
        if tail.any():
            raise ValidationError("leading block boundary splits a repeated eigenvalue")
    w = spec.weights
    left = spec.left.copy()
    for idx in _clusters(lam[:leading]):
        g = (left[:, idx].conj().T * w) @ spec.right[:, idx]  # g[b, a] = <right_a, left_b>
        g = g.T  # g[a, b] = <right_a, left_b>
        cond = np.linalg.cond(g)
        if not np.isfinite(cond) or cond > 1e12:
            raise SpectralError(
                f"singular cross-Gram block at eigenvalue {lam[idx[0]]:.6g} "
                f"(condition {cond:.3e}); the eigenvalue is not semisimple"
            )
        # want g @ conj(X) = I for left' = left @ X
        left[:, idx] = left[:, idx] @ np.conj(np.linalg.inv(g))
    if spec.is_real:
        # conjugate pairs stay conjugate
        for j in range(leading):
            k = spec.partner[j]
            if j < k < leading:
                left[:, k] = np.conj(left[:, j])
    return replace(spec, left=left, biorthonormal=leading)


def unstable_count(eigenvalues, partner=None, trace_condition=True) -> int:
    """Smallest block size satisfying the unstable-index rule.

    ``eigenvalues`` must be sorted by ascending real part.  The block
    contains every eigenvalue with nonpositive real part, keeps conjugate
    pairs together, and (with ``trace_condition``) is extended until the sum
    of its real parts is positive.  Returns 0 when nothing is unstable.
    """
    lam = np.asarray(eigenvalues, dtype=complex)
    n = lam.shape[0]
    if np.any(np.diff(lam.real) < -1e-12 * max(1.0, float(np.max(np.abs(lam), initial=0.0)))):
        raise ValidationError("eigenvalues must be sorted by ascending real part")
    if partner is None:
        partner = np.arange(n)
    partner = np.asarray(partner)

    def close_pairs(k):
        while k < n and k > 0 and partner[k - 1] >= k:
            k = partner[k - 1] + 1
        return k

    N = close_pairs(int(np.sum(lam.real <= 0)))
    if N == 0 or not trace_condition:
        return N
    while np.sum(lam[:N].real) <= 0:
        if N >= n:
            raise SpectralError(
                "spectrum exhausted before the real parts of the leading block summed "
                "to a positive number"
            )
        N = close_pairs(N + 1)
    return N


def select_unstable_index(spec: SpectralData) -> UnstableDecomposition:
    """Unstable block per the index rule, biorthonormalized if necessary."""
    N = unstable_count(spec.eigenvalues, spec.partner)
    if spec.biorthonormal < N:
        spec = biorthonormalize(spec, N)
    stable_rate = float(spec.eigenvalues[N].real) if N < spec.dim else math.inf
    return UnstableDecomposition(
        N=N,
        eigenvalues=spec.eigenvalues[:N].copy(),
        right=spec.right[:, :N].copy(),
        left=spec.left[:, :N].copy(),
        weights=spec.weights,
        stable_rate=stable_rate,
    )


def check_semisimple(spec: SpectralData, N: int, tol: float = 1e-8) -> SemisimpleReport:
    """Compare algebraic and numerical geometric multiplicity on the leading block.

    Geometric multiplicity is the numerical rank (relative to the largest
    singular value, threshold ``tol``) of the eigenvectors returned for a
    cluster of equal eigenvalues.
    """
    if not 0 <= N <= spec.dim:
        raise ValidationError(f"N must be in [0, {spec.dim}]")
    lam = spec.eigenvalues
    defective = []
    checked = []
    seen = set()
    for idx in _clusters(lam):
        if idx[0] >= N or idx[0] in seen:
            continue
        seen.update(idx.tolist())
        vecs = spec.right[:, idx] * np.sqrt(spec.weights)[:, None]
        s = np.linalg.svd(vecs, compute_uv=False)
        geometric = int(np.sum(s > tol * s[0]))
        algebraic = len(idx)
        checked.append((complex(lam[idx[0]]), algebraic, geometric))
        if geometric != algebraic:
            defective.append((complex(lam[idx[0]]), algebraic, geometric))
    return SemisimpleReport(not defective, tuple(defective), tuple(checked))


def project(dec: UnstableDecomposition, x):
    """Split ``x`` into modal coordinates of its unstable part and the remainder."""
    x = np.asarray(x)
    y = dec.coordinates(x)
    xs = x - dec.right @ y
    return y, xs


def solve_lyapunov_block(A_s, gamma: float) -> LyapunovWeight:
    """Solve ``A_s Q + Q A_s^H = gamma I`` for a matrix in an orthonormal basis."""
    A_s = np.asarray(A_s)
    m = A_s.shape[0]
    if A_s.ndim != 2 or A_s.shape != (m, m):
        raise ValidationError("A_s must be square")
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    q = scipy.linalg.solve_continuous_lyapunov(A_s, gamma * np.eye(m))
    if not np.all(np.isfinite(q)):
        raise SpectralError("singular Sylvester system")
    q = 0.5 * (q + q.conj().T)
    residual = float(np.max(np.abs(A_s @ q + q @ A_s.conj().T - gamma * np.eye(m))))
    evals = np.linalg.eigvalsh(q)
    if evals[0] <= 0:
        raise SpectralError(
            f"Lyapunov solution is not positive definite (min eigenvalue {evals[0]:.3e}); "
            "the block is not stable"
        )
    # Re<A x, x>_Q / |x|_Q^2 with <x,y>_Q = y^H Q^-1 x has minimum gamma / (2 max eig Q)
    coercivity = gamma / (2.0 * evals[-1])
    coercive = bool(coercivity >= 0.5 * gamma * (1 - 1e-12))
    return LyapunovWeight(
        Q=q, gamma=float(gamma), A_s=A_s, residual=residual, coercivity=coercivity, coercive=coercive
    )


def solve_lyapunov(dec: UnstableDecomposition, spec: SpectralData, gamma: float, trunc=None) -> LyapunovWeight:
    """Lyapunov re-norming of the first ``trunc`` stable modes.

    The stable block is written in a weighted-orthonormal basis of
    ``span{right_j : N <= j < N + trunc}`` so that its adjoint is the
    conjugate transpose.  ``trunc`` defaults to ``min(2N, dim - N)``.
    """
    N = dec.N
    avail = spec.dim - N
    if avail <= 0:
        raise ValidationError("no stable modes to re-norm")
    if trunc is None:
        trunc = min(max(2 * N, 1), avail)
    if not 1 <= trunc <= avail:
        raise ValidationError(f"trunc must be in [1, {avail}]")
    stop = N + trunc
    if spec.is_real and stop < spec.dim and spec.partner[stop - 1] == stop:
        stop += 1
    sw = np.sqrt(spec.weights)
    qmat, _ = np.linalg.qr(spec.right[:, N:stop] * sw[:, None])
    basis = qmat / sw[:, None]
    a_s = (basis.conj().T * spec.weights) @ spec.generator @ basis
    weight = solve_lyapunov_block(a_s, gamma)
    return replace(weight, basis=basis)
