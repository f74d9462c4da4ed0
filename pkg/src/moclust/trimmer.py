"""Iterative outlier trimming driven by the shifted-gamma null.

At each iteration ``f`` the current data are clustered, every observation's
leave-one-out log-likelihood difference is computed, the divergence of
those differences from the null mixture is recorded, and the observation
whose removal raises the log-likelihood most is dropped.  After ``F``
iterations the iteration with the smallest divergence is selected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import chi2

from .data import DataSet
from .em import FitConfig, FitResult, fit
from .errors import InsufficientDataError, MoclustError
from .matnorm import mahalanobis
from .nullmodel import KlEstimate, NullGammaMixture, SubsetLogliks, kl_divergence, subset_logliks

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrimIteration:
    """One trimming step.

    ``removed_id`` is the observation whose removal produced this step's
    data (``None`` for the first step); ``model_ref`` indexes
    :attr:`OclustResult.fits` when models are kept.
    """

    f: int
    removed_id: Optional[str]
    kl: KlEstimate
    loglik: float
    n_remaining: int
    model_ref: Optional[int] = None


@dataclass
class OclustResult:
    trace: list
    f_star: int
    outlier_ids: list
    final_fit: FitResult
    retained: DataSet
    gross_ids: list = field(default_factory=list)
    truncated: bool = False
    warning: Optional[str] = None
    fits: list = field(default_factory=list)

    @property
    def kl_values(self) -> np.ndarray:
        return np.array([it.kl.value for it in self.trace])


def candidate_outlier(ys) -> int:
    """0-based index of the largest valid ``y`` (first one on ties)."""
    y = np.asarray(ys.ys if isinstance(ys, SubsetLogliks) else ys, dtype=float)
    if not np.any(np.isfinite(y)):
        raise ValueError("no valid leave-one-out values")
    return int(np.argmax(np.where(np.isfinite(y), y, -np.inf)))


def gross_outlier_filter(data: DataSet, G: int, cfg: FitConfig, quantile: Optional[float]) -> set:
    """Ids whose Mahalanobis distance to their assigned component exceeds the chi2(rc) quantile.

    ``quantile=None`` disables the filter.
    """
    if quantile is None:
        return set()
    if not 0.5 < quantile < 1.0:
        raise ValueError("gross-outlier quantile must lie in (0.5, 1)")
    res = fit(data, G, cfg)
    comps = res.model.components
    cut = chi2.ppf(quantile, data.r * data.c)
    return {
        data.ids[i]
        for i in range(data.n)
        if mahalanobis(data.X[i], comps[res.hard_labels[i] - 1]) > cut
    }


def select_iteration(kl_values) -> int:
    """Position of the smallest KL; the earliest wins ties."""
    return int(np.argmin(np.asarray(kl_values)))


def run_oclust(
    data: DataSet,
    G: int,
    F: int,
    cfg: FitConfig = FitConfig(),
    gross_quantile: Optional[float] = None,
    keep_models: bool = True,
    mode: str = "warm",
) -> OclustResult:
    """Trim up to ``F`` outliers and return the model with the smallest KL.

    If clustering fails at some iteration the trace stops at the previous
    one and ``truncated``/``warning`` are set.
    """
    if F < 0:
        raise ValueError("F must be non-negative")
    if F >= data.n - G * (max(data.r, data.c) + 1):
        raise InsufficientDataError(f"F={F} leaves too few observations for G={G}")
    gross = sorted(gross_outlier_filter(data, G, cfg, gross_quantile), key=data.index_of)
    B = len(gross)
    if B > F:
        raise InsufficientDataError(f"gross-outlier filter removed {B} > F={F} observations")
    current = data.drop_ids(gross)
    removed = list(gross)
    trace: list[TrimIteration] = []
    fits: list[FitResult] = []
    truncated, warning = False, None
    for f in range(B, F + 1):
        try:
            res = fit(current, G, cfg)
            ys = subset_logliks(current, G, cfg, res, mode=mode)
            kl = kl_divergence(ys, NullGammaMixture.from_model(res.model))
        except MoclustError as exc:
            if not trace:
                raise
            truncated, warning = True, f"stopped at f={f}: {exc}"
            log.warning(warning)
            break
        trace.append(
            TrimIteration(
                f, removed[-1] if f > 0 and removed else None, kl, res.loglik, current.n,
                len(fits) if keep_models else None,
            )
        )
        if keep_models:
            fits.append(res)
        log.info("f=%d kl=%.6g loglik=%.4f", f, kl.value, res.loglik)
        if f == F:
            break
        m = candidate_outlier(ys)
        removed.append(current.ids[m])
        current = current.subset(np.delete(np.arange(current.n), m))

    best = select_iteration([it.kl.value for it in trace])
    f_star = trace[best].f
    outliers = removed[:f_star]
    retained = data.drop_ids(outliers)
    final = fits[best] if keep_models else fit(retained, G, cfg)
    return OclustResult(trace, f_star, outliers, final, retained, gross, truncated, warning, fits)
