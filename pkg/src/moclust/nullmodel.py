"""Leave-one-out log-likelihood differences and their shifted-gamma null.

For a fitted mixture, ``y_j = loglik(data without j) - loglik(data)``.  Under
matrix normality each ``y_j`` is approximately ``k_g + Gamma(rc/2, 1)`` for
the component ``g`` that generated ``X_j``, with shift

    k_g = -log pi_g + (rc/2) log(2 pi) + (c/2) log|U_g| + (r/2) log|V_g|.

The observed ``y`` values are compared with the mixture of these shifted
gammas through a histogram KL divergence.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, gammaln

from .data import DataSet
from .em import (
    _OK,
    FitConfig,
    FitResult,
    MixtureModel,
    _run_em_threaded,
    component_log_densities,
    log_mixture_density,
)
from .errors import InsufficientDataError, SubsetFailureError
from .matnorm import LOG_2PI, ComponentParams, cholesky, logdet_chol

log = logging.getLogger(__name__)

#: Leave-one-out refit protocols.
REFIT_MODES = ("warm", "full", "frozen")
WARM_MAX_ITERS = 50
MAX_FAILURE_FRACTION = 0.05
MIN_KL_POINTS = 20
Q_FLOOR = 1e-12


@dataclass(frozen=True)
class SubsetLogliks:
    """``ys[j]`` is NaN when the refit without observation ``j`` failed."""

    ys: np.ndarray
    subset_labels: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.ys)

    @property
    def n_failed(self) -> int:
        return int(np.sum(~self.valid))


@dataclass(frozen=True)
class NullGammaMixture:
    weights: np.ndarray
    shifts: np.ndarray
    shape: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        k = np.asarray(self.shifts, dtype=float)
        if w.shape != k.shape or abs(w.sum() - 1.0) > 1e-10 or np.any(w < 0):
            raise ValueError("weights must be non-negative, match shifts, and sum to 1")
        if not self.shape > 0 or not np.all(np.isfinite(k)):
            raise ValueError("shape must be positive and shifts finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "shifts", k)
        object.__setattr__(self, "shape", float(self.shape))

    @classmethod
    def from_model(cls, model: MixtureModel) -> "NullGammaMixture":
        shifts = [gamma_shift(p, model.r, model.c) for p in model.components]
        return cls(model.pi, np.array(shifts), model.r * model.c / 2.0)

    def cdf(self, y) -> np.ndarray:
        t = np.subtract.outer(np.asarray(y, dtype=float), self.shifts)
        return gammainc(self.shape, np.maximum(t, 0.0)) @ self.weights


@dataclass(frozen=True)
class KlEstimate:
    value: float
    n_bins: int
    bin_edges: np.ndarray


def gamma_shift(comp: ComponentParams, r: int, c: int) -> float:
    """Location of the null gamma for one component."""
    if comp.shape != (r, c):
        raise ValueError(f"component is {comp.shape}, expected {(r, c)}")
    ldU = logdet_chol(cholesky(comp.U, "U"))
    ldV = logdet_chol(cholesky(comp.V, "V"))
    return float(-np.log(comp.pi) + 0.5 * r * c * LOG_2PI + 0.5 * c * ldU + 0.5 * r * ldV)


def null_density(y, null: NullGammaMixture):
    """Mixture of shifted Gamma(shape, rate 1) densities; zero left of each shift."""
    y = np.asarray(y, dtype=float)
    t = np.subtract.outer(y, null.shifts)
    a = null.shape
    with np.errstate(divide="ignore", invalid="ignore"):
        logpdf = (a - 1.0) * np.log(np.where(t > 0, t, 1.0)) - t - gammaln(a)
    pdf = np.where(t > 0, np.exp(logpdf), 0.0)
    if a == 1.0:
        pdf = np.where(t == 0, 1.0, pdf)
    elif a < 1.0:
        pdf = np.where(t == 0, np.inf, pdf)
    out = pdf @ null.weights
    return float(out) if out.ndim == 0 else out


def subset_logliks(
    data: DataSet,
    G: int,
    cfg: FitConfig,
    full: FitResult,
    mode: str = "warm",
    simplified: bool = False,
) -> SubsetLogliks:
    """Leave-one-out log-likelihood differences ``y_j``.

    ``mode`` selects how the model for the data without ``X_j`` is obtained:

    * ``"warm"``: EM started from ``full.model``, at most 50 iterations.
    * ``"full"``: the same warm start run to convergence (``cfg.max_iters``).
    * ``"frozen"``: no refit; the full-data parameters are reused.  With
      ``simplified=True`` the classification log-likelihood is used, which
      makes ``y_j = k_h + mahalanobis_j / 2`` for the component ``h`` that
      ``X_j`` is hard-assigned to.
    """
    if mode not in REFIT_MODES:
        raise ValueError(f"mode must be one of {REFIT_MODES}")
    model = full.model
    if model.G != G:
        raise ValueError(f"full fit has {model.G} components, expected {G}")
    n = data.n
    labels = np.asarray(full.hard_labels)
    if mode == "frozen":
        if simplified:
            g = labels - 1
            own = np.log(model.pi[g]) + component_log_densities(data, model)[np.arange(n), g]
            return SubsetLogliks(-own, labels)
        return SubsetLogliks(-log_mixture_density(data, model), labels)

    mask = 1.0 - np.eye(n)
    rep = lambda a: np.broadcast_to(a, (n,) + a.shape)
    res = _run_em_threaded(
        data.X, mask, rep(model.pi), rep(model.M), rep(model.U), rep(model.V),
        threads=cfg.threads, chunk=_chunk_size(data, G, cfg.threads),
        max_iters=WARM_MAX_ITERS if mode == "warm" else cfg.max_iters,
        rel_tol=cfg.rel_tol, sweeps=cfg.inner_uv_sweeps,
    )
    ys = np.where(res.code == _OK, res.loglik - full.loglik, np.nan)
    failed = int(np.sum(~np.isfinite(ys)))
    if failed:
        log.warning("%d of %d leave-one-out refits failed; excluded from KL", failed, n)
    if failed > MAX_FAILURE_FRACTION * n:
        raise SubsetFailureError(f"{failed} of {n} leave-one-out refits failed")
    return SubsetLogliks(ys, labels)


def _chunk_size(data: DataSet, G: int, threads: int) -> int:
    # keep the (chunk, G, n, r, c) work arrays around a few MB
    per = G * data.n * data.r * data.c
    size = max(1, int(2_000_000 // per))
    if threads > 1:
        size = min(size, -(-data.n // threads))
    return size


def kl_divergence(ys, null: NullGammaMixture) -> KlEstimate:
    """Histogram KL divergence of the observed ``y`` values from ``null``.

    Sturges bins over ``[min y, max y]``; ``p_b`` are relative frequencies,
    ``q_b`` null probabilities of each bin (floored at 1e-12); empty bins
    contribute nothing.
    """
    y = np.asarray(ys.ys if isinstance(ys, SubsetLogliks) else ys, dtype=float)
    y = y[np.isfinite(y)]
    n = y.size
    if n < MIN_KL_POINTS:
        raise InsufficientDataError(f"KL needs at least {MIN_KL_POINTS} values, got {n}")
    n_bins = math.ceil(math.log2(n) + 1)
    counts, edges = np.histogram(y, bins=n_bins, range=(y.min(), y.max()))
    p = counts / n
    q = np.maximum(np.diff(null.cdf(edges)), Q_FLOOR)
    occupied = p > 0
    kl = float(np.sum(p[occupied] * np.log(p[occupied] / q[occupied])))
    return KlEstimate(max(kl, 0.0), n_bins, edges)
