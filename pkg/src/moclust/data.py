"""Containers for three-way data: an ordered stack of r x c observation matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, NumericError


@dataclass(frozen=True)
class DataSet:
    """Ordered collection of ``n`` matrices sharing shape ``(r, c)``.

    Parameters
    ----------
    X : ndarray, shape (n, r, c)
    ids : sequence of str
        Stable, unique observation ids.
    labels : ndarray of int, optional
        Ground-truth cluster labels (1-based), if known.
    is_outlier : ndarray of bool, optional
        Ground-truth outlier flags, if known.
    """

    X: np.ndarray
    ids: tuple = field(default=())
    labels: Optional[np.ndarray] = None
    is_outlier: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[1] < 1 or X.shape[2] < 1:
            raise DimensionError(f"expected (n, r, c) array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise NumericError("observations must be finite")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        n = X.shape[0]
        ids = tuple(str(i) for i in self.ids) if len(self.ids) else tuple(f"obs{i:04d}" for i in range(n))
        if len(ids) != n:
            raise DimensionError(f"{len(ids)} ids for {n} observations")
        if len(set(ids)) != n:
            raise ValueError("observation ids must be unique")
        object.__setattr__(self, "ids", ids)
        for name in ("labels", "is_outlier"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=bool if name == "is_outlier" else int)
                if v.shape != (n,):
                    raise DimensionError(f"{name} must have length {n}")
                v.setflags(write=False)
                object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def r(self) -> int:
        return self.X.shape[1]

    @property
    def c(self) -> int:
        return self.X.shape[2]

    def __len__(self):
        return self.n

    def subset(self, keep: Sequence[int] | np.ndarray) -> "DataSet":
        """Return the observations at positions ``keep`` (order preserved)."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        return DataSet(
            self.X[keep],
            tuple(self.ids[i] for i in keep),
            None if self.labels is None else self.labels[keep],
            None if self.is_outlier is None else self.is_outlier[keep],
        )

    def drop_ids(self, ids) -> "DataSet":
        ids = set(ids)
        return self.subset([i for i, k in enumerate(self.ids) if k not in ids])

    def index_of(self, obs_id: str) -> int:
        return self.ids.index(obs_id)
