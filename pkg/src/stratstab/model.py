"""Finite-dimensional linear generators with a weighted inner product.

The state equation is ``dX/dt + A X = 0``; a model carries the generator
``A``, the quadrature weights defining ``<x, y> = sum_i w_i x_i conj(y_i)``,
and a 0/1 mask marking the control subdomain.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ModelError

__all__ = [
    "OperatorModel",
    "AdvectionDiffusionSpec",
    "build_advection_diffusion",
    "build_from_matrix",
    "subdomain_mask",
    "inner",
    "norm",
]


def inner(x, y, weights):
    """Weighted inner product ``sum_i w_i x_i conj(y_i)`` along axis 0.

    Works for vectors and for stacks of column vectors (shape ``(n, P)``),
    in which case one value per column is returned.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    w = np.asarray(weights)
    if x.ndim > 1:
        w = w.reshape((-1,) + (1,) * (x.ndim - 1))
    return np.sum(w * x * np.conj(y), axis=0)


def norm(x, weights):
    x = np.asarray(x)
    w = np.asarray(weights)
    if x.ndim > 1:
        w = w.reshape((-1,) + (1,) * (x.ndim - 1))
    return np.sqrt(np.sum(w * np.abs(x) ** 2, axis=0))


@dataclass(frozen=True)
class OperatorModel:
    """Discretized generator with its inner product and control mask.

    ``grid`` holds the spatial coordinate of every unknown in (0, 1); it is
    what ``subdomain_mask`` selects on.  Matrix models get a uniform grid of
    interior nodes.
    """

    generator: np.ndarray
    weights: np.ndarray
    mask: np.ndarray
    grid: np.ndarray
    label: str = ""

    def __post_init__(self):
        for name in ("generator", "weights", "mask", "grid"):
            object.__setattr__(self, name, np.array(getattr(self, name)))
        a = self.generator
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ModelError(f"generator must be square, got shape {a.shape}")
        n = a.shape[0]
        if n == 0:
            raise ModelError("generator is empty")
        for name in ("weights", "mask", "grid"):
            v = getattr(self, name)
            if v.shape != (n,):
                raise ModelError(f"{name} has shape {v.shape}, expected ({n},)")
        if not np.all(np.isfinite(a)):
            raise ModelError("generator contains non-finite entries")
        if np.iscomplexobj(self.weights) or not np.all(self.weights > 0):
            raise ModelError("weights must be strictly positive")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise ModelError("mask entries must be exactly 0 or 1")
        if not np.any(self.mask == 1):
            raise ModelError("mask is identically zero")
        for v in (a, self.weights, self.mask, self.grid):
            v.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.generator.shape[0]

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.generator)

    def inner(self, x, y):
        return inner(x, y, self.weights)

    def norm(self, x):
        return norm(x, self.weights)

    def adjoint(self) -> np.ndarray:
        """Matrix of the adjoint in the weighted product, ``W^-1 A^H W``."""
        w = self.weights
        return (self.generator.conj().T * w[None, :]) / w[:, None]


@dataclass(frozen=True)
class AdvectionDiffusionSpec:
    """``-nu u'' + f u' + c u`` on (0, 1) with homogeneous Dirichlet data."""

    n: int
    nu: float
    f: float = 0.0
    c: float = 0.0
    label: str = field(default="")

    def validate(self):
        if int(self.n) != self.n or self.n < 8:
            raise ModelError(f"grid size n must be an integer >= 8, got {self.n}")
        if not self.nu > 0:
            raise ModelError(f"viscosity nu must be positive, got {self.nu}")
        if not (np.isfinite(self.f) and np.isfinite(self.c)):
            raise ModelError("advection and reaction coefficients must be finite")


def _interior_grid(n):
    return np.arange(1, n + 1) / (n + 1)


def build_advection_diffusion(spec: AdvectionDiffusionSpec) -> OperatorModel:
    """Central-difference discretization on a uniform grid, h = 1/(n+1)."""
    spec.validate()
    n = int(spec.n)
    h = 1.0 / (n + 1)
    diag = np.full(n, 2.0 * spec.nu / h**2 + spec.c)
    upper = np.full(n - 1, -spec.nu / h**2 + spec.f / (2 * h))
    lower = np.full(n - 1, -spec.nu / h**2 - spec.f / (2 * h))
    a = np.diag(diag) + np.diag(upper, 1) + np.diag(lower, -1)
    label = spec.label or f"advdiff(n={n}, nu={spec.nu:g}, f={spec.f:g}, c={spec.c:g})"
    return OperatorModel(
        generator=a,
        weights=np.full(n, h),
        mask=np.ones(n),
        grid=_interior_grid(n),
        label=label,
    )


def build_from_matrix(entries, weights=None, mask=None, label="matrix") -> OperatorModel:
    a = np.array(entries)
    if a.dtype.kind not in "fc":
        a = a.astype(float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ModelError(f"generator must be square, got shape {a.shape}")
    n = a.shape[0]
    w = np.ones(n) if weights is None else np.array(weights, dtype=float)
    m = np.ones(n) if mask is None else np.array(mask, dtype=float)
    return OperatorModel(generator=a, weights=w, mask=m, grid=_interior_grid(n), label=label)


def subdomain_mask(model: OperatorModel, lo: float, hi: float) -> OperatorModel:
    """Copy of ``model`` whose mask selects the grid points with lo < x < hi."""
    if not (0.0 <= lo < hi <= 1.0):
        raise ModelError(f"need 0 <= lo < hi <= 1, got lo={lo}, hi={hi}")
    mask = ((model.grid > lo) & (model.grid < hi)).astype(float)
    if not mask.any():
        raise ModelError(f"mask interval ({lo}, {hi}) contains no grid point")
    return replace(model, mask=mask)
