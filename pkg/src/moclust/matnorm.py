"""Matrix-variate normal distribution.

An ``r x c`` matrix ``X`` is matrix-normal with mean ``M``, row covariance
``U`` (r x r) and column covariance ``V`` (c x c) when ``vec(X)`` is
multivariate normal with mean ``vec(M)`` and covariance ``kron(V, U)``
(``vec`` stacks columns).

All determinants come from Cholesky factors and all quadratic forms from
triangular solves.  ``(U, V)`` is only identified up to ``(aU, V/a)``;
:func:`normalize_identifiability` fixes ``trace(U) = r``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionError, FactorizationError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ComponentParams:
    """Parameters of one matrix-normal component.

    Attributes
    ----------
    M : ndarray, shape (r, c)
    U : ndarray, shape (r, r)
        Row covariance.
    V : ndarray, shape (c, c)
        Column covariance.
    pi : float
        Mixing weight in (0, 1].
    """

    M: np.ndarray
    U: np.ndarray
    V: np.ndarray
    pi: float = 1.0

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        V = np.atleast_2d(np.asarray(self.V, dtype=float))
        r, c = M.shape
        if U.shape != (r, r) or V.shape != (c, c):
            raise DimensionError(f"M is {r}x{c} but U is {U.shape} and V is {V.shape}")
        if not 0.0 < self.pi <= 1.0:
            raise ValueError(f"mixing weight must lie in (0, 1], got {self.pi}")
        for a in (M, U, V):
            a.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "pi", float(self.pi))

    @property
    def shape(self) -> tuple[int, int]:
        return self.M.shape


def cholesky(A: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor; raises :class:`FactorizationError` if ``A`` is not PD."""
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"{name} is not positive-definite") from exc


def logdet_chol(L: np.ndarray) -> np.ndarray:
    """``log|A|`` from the Cholesky factor of ``A`` (works on stacks)."""
    return 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)


def _check_obs(X, p: ComponentParams) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and p.shape[0] == 1:
        X = X[None, :]
    if X.shape[-2:] != p.shape:
        raise DimensionError(f"observation shape {X.shape[-2:]} does not match mean shape {p.shape}")
    return X


def _whitened(X, p: ComponentParams):
    """Return ``L_U^{-1} (X - M) L_V^{-T}`` and both Cholesky factors."""
    X = _check_obs(X, p)
    LU = cholesky(p.U, "U")
    LV = cholesky(p.V, "V")
    D = X - p.M
    A = solve_triangular(LU, D, lower=True)
    W = solve_triangular(LV, A.T, lower=True).T
    return W, LU, LV


def mahalanobis(X, p: ComponentParams) -> float:
    """Matrix Mahalanobis distance ``tr{U^-1 (X-M) V^-1 (X-M)'}``."""
    W, _, _ = _whitened(X, p)
    return float(np.sum(W * W))


def log_density(X, p: ComponentParams) -> float:
    """Log of the matrix-normal density of ``X`` under ``p`` (weight ignored)."""
    W, LU, LV = _whitened(X, p)
    r, c = p.shape
    return float(
        -0.5 * r * c * LOG_2PI
        - 0.5 * r * logdet_chol(LV)
        - 0.5 * c * logdet_chol(LU)
        - 0.5 * np.sum(W * W)
    )


def sample(p: ComponentParams, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw ``M + L_U Z L_V'`` with ``Z`` iid standard normal.

    Returns one ``(r, c)`` matrix, or ``(size, r, c)`` when ``size`` is given.
    """
    LU = cholesky(p.U, "U")
    LV = cholesky(p.V, "V")
    r, c = p.shape
    Z = rng.standard_normal((1 if size is None else size, r, c))
    out = p.M + LU @ Z @ LV.T
    return out[0] if size is None else out


def normalize_identifiability(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale ``(U, V) -> (aU, V/a)`` with ``a = r / trace(U)``."""
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    a = U.shape[-1] / np.trace(U, axis1=-2, axis2=-1)
    a = np.asarray(a)[..., None, None]
    return U * a, V / a


def component_logpdf(X: np.ndarray, p: ComponentParams) -> np.ndarray:
    """Vectorized :func:`log_density` over a stack ``X`` of shape (n, r, c)."""
    X = _check_obs(X, p)
    LU = cholesky(p.U, "U")
    LV = cholesky(p.V, "V")
    r, c = p.shape
    LUi = solve_triangular(LU, np.eye(r), lower=True)
    LVi = solve_triangular(LV, np.eye(c), lower=True)
    W = LUi @ (X - p.M) @ LVi.T
    maha = np.sum(W * W, axis=(-2, -1))
    return -0.5 * (r * c * LOG_2PI + r * logdet_chol(LV) + c * logdet_chol(LU) + maha)
