"""Seeded generators for the three simulation families.

* ``viroli``: 300 matrices, 3 x 5, three groups with sparse means and random
  correlation covariances; 15 matrices get their entries shuffled.
* ``tomarchio``: 200 matrices, 2 x 4, two fixed groups; 10 matrices get one
  column overwritten with Uniform(-15, 15) noise.
* ``clean``: the tomarchio draws before contamination.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import DataSet
from .matnorm import ComponentParams, sample

FAMILIES = ("viroli", "tomarchio", "clean")


@dataclass(frozen=True)
class SimConfig:
    family: str
    seed: int = 0
    n_override: Optional[int] = None
    contamination_override: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        for name in ("n_override", "contamination_override"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")


def rand_corr(dim: int, rng: np.random.Generator, eta: float = 1.0) -> np.ndarray:
    """Random correlation matrix by the C-vine method.

    Partial correlations on tree level ``k`` (1-based) are drawn from
    ``Beta(b, b)`` with ``b = eta + (dim - 1 - k) / 2`` and mapped to (-1, 1);
    ``eta = 1`` gives the uniform distribution over correlation matrices.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    P = np.zeros((dim, dim))
    S = np.eye(dim)
    for k in range(dim - 1):
        b = eta + (dim - 2 - k) / 2.0
        for i in range(k + 1, dim):
            P[k, i] = 2.0 * rng.beta(b, b) - 1.0
            rho = P[k, i]
            # partial -> raw correlation, peeling off earlier levels
            for m in range(k - 1, -1, -1):
                rho = rho * np.sqrt((1.0 - P[m, i] ** 2) * (1.0 - P[m, k] ** 2)) + P[m, i] * P[m, k]
            S[k, i] = S[i, k] = rho
    return S


@dataclass(frozen=True)
class LabeledDataSet:
    """A simulated dataset with its generating truth."""

    data: DataSet
    true_cluster: np.ndarray
    is_outlier: np.ndarray
    components: tuple = ()

    @property
    def outlier_ids(self) -> set:
        return {self.data.ids[i] for i in np.flatnonzero(self.is_outlier)}


def _draw(components, n, rng):
    pis = np.array([p.pi for p in components])
    labels = rng.choice(len(components), size=n, p=pis / pis.sum())
    r, c = components[0].shape
    X = np.empty((n, r, c))
    for g, p in enumerate(components):
        idx = np.flatnonzero(labels == g)
        if idx.size:
            X[idx] = sample(p, rng, size=idx.size)
    return X, labels + 1


def viroli_components(rng: np.random.Generator) -> tuple[ComponentParams, ...]:
    comps = []
    for pi, (a, b) in zip((0.3, 0.4, 0.3), ((0.5, 0.5), (0.0, 0.0), (-0.5, 0.5))):
        M = np.zeros((3, 5))
        M[0, 0], M[1, 0] = a, b
        comps.append(ComponentParams(M, rand_corr(3, rng), rand_corr(5, rng), pi))
    return tuple(comps)


def viroli_base(cfg: SimConfig):
    """Uncontaminated Viroli-style draws: ``(X, labels, components)``."""
    base, _ = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(base)
    comps = viroli_components(rng)
    X, labels = _draw(comps, cfg.n_override or 300, rng)
    return X, labels, comps


def gen_viroli(cfg: SimConfig) -> LabeledDataSet:
    """Viroli-style data with permuted-entry outliers."""
    if cfg.family != "viroli":
        raise ValueError("gen_viroli needs family='viroli'")
    X, labels, comps = viroli_base(cfg)
    n = X.shape[0]
    crng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    n_out = min(cfg.contamination_override or 15, n)
    chosen = crng.choice(n, size=n_out, replace=False)
    outlier = np.zeros(n, dtype=bool)
    outlier[chosen] = True
    size = X.shape[1] * X.shape[2]
    for i in chosen:
        perm = crng.permutation(size)
        while np.array_equal(perm, np.arange(size)):
            perm = crng.permutation(size)
        X[i] = X[i].ravel()[perm].reshape(X.shape[1:])
    data = DataSet(X, labels=labels, is_outlier=outlier)
    return LabeledDataSet(data, data.labels, data.is_outlier, comps)


def tomarchio_components() -> tuple[ComponentParams, ...]:
    M1 = np.array([[-2.60, -1.10, -0.50, -0.20], [1.30, 0.60, 0.30, 0.10]])
    M2 = np.array([[1.50, 1.70, 1.90, 2.20], [-3.70, -2.70, -2.00, -1.50]])
    U1 = np.array([[2.00, 0.00], [0.00, 1.00]])
    U2 = np.array([[1.70, 0.50], [0.50, 1.30]])
    V = np.array(
        [
            [1.00, 0.50, 0.25, 0.13],
            [0.50, 1.00, 0.50, 0.25],
            [0.25, 0.50, 1.00, 0.50],
            [0.13, 0.25, 0.50, 1.00],
        ]
    )
    return (ComponentParams(M1, U1, V, 0.5), ComponentParams(M2, U2, V, 0.5))


def gen_tomarchio(cfg: SimConfig) -> LabeledDataSet:
    """Tomarchio-style data; ``family='clean'`` skips the column replacement.

    Both families share the base draws for a given seed, so a clean dataset
    equals its contaminated sibling everywhere except the replaced columns.
    """
    if cfg.family not in ("tomarchio", "clean"):
        raise ValueError("gen_tomarchio needs family 'tomarchio' or 'clean'")
    base, contam = np.random.SeedSequence(cfg.seed).spawn(2)
    comps = tomarchio_components()
    n = cfg.n_override or 200
    X, labels = _draw(comps, n, np.random.default_rng(base))
    outlier = np.zeros(n, dtype=bool)
    if cfg.family == "tomarchio":
        crng = np.random.default_rng(contam)
        n_out = min(cfg.contamination_override or 10, n)
        chosen = crng.choice(n, size=n_out, replace=False)
        outlier[chosen] = True
        r, c = X.shape[1:]
        for i in chosen:
            col = crng.integers(c)
            X[i, :, col] = crng.uniform(-15.0, 15.0, size=r)
    data = DataSet(X, labels=labels, is_outlier=outlier)
    return LabeledDataSet(data, data.labels, data.is_outlier, comps)


def generate(cfg: SimConfig) -> LabeledDataSet:
    if cfg.family == "viroli":
        return gen_viroli(cfg)
    return gen_tomarchio(cfg)
