"""EM for finite mixtures of matrix-variate normal distributions.

The numerical core works on *batches* of independent problems that share
one data stack ``X`` of shape (n, r, c) but differ in which observations
they include (a 0/1 ``mask`` of shape (B, n)) and in their parameters
(leading batch axis B).  A plain fit is a batch of ``n_inits`` random
starts; the leave-one-out refits in :mod:`moclust.nullmodel` are a batch of
``n`` problems, each with one observation masked out.  Batch elements never
interact, so every element gets exactly the arithmetic it would get alone.

M-step covariance updates are the flip-flop estimators::

    U_g = sum_i z_ig (X_i - M_g) V_g^-1 (X_i - M_g)' / (c * N_g)
    V_g = sum_i z_ig (X_i - M_g)' U_g^-1 (X_i - M_g) / (r * N_g)

run ``inner_uv_sweeps`` times starting from the previous ``V_g``, followed by
rescaling to ``trace(U_g) = r``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .data import DataSet
from .errors import (
    DegenerateComponentError,
    DegenerateDataError,
    DimensionError,
    FactorizationError,
    FitError,
    InsufficientDataError,
    NumericError,
)
from .matnorm import LOG_2PI, ComponentParams, logdet_chol, normalize_identifiability
from .simgen import rand_corr

log = logging.getLogger(__name__)

_OK, _DEGENERATE, _SINGULAR, _NUMERIC = 0, 1, 2, 3
_REASONS = {_DEGENERATE: "degenerate component", _SINGULAR: "singular covariance", _NUMERIC: "non-finite log-likelihood"}


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 1000
    rel_tol: float = 1e-8
    n_inits: int = 5
    inner_uv_sweeps: int = 1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.max_iters < 1 or self.rel_tol <= 0 or self.n_inits < 1 or self.inner_uv_sweeps < 1:
            raise ValueError(f"invalid FitConfig {self}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class MixtureModel:
    """G-component matrix-normal mixture, parameters stacked along axis 0.

    Attributes
    ----------
    pi : ndarray, shape (G,)
    M : ndarray, shape (G, r, c)
    U : ndarray, shape (G, r, r)
    V : ndarray, shape (G, c, c)
    """

    pi: np.ndarray
    M: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        pi = np.atleast_1d(np.asarray(self.pi, dtype=float))
        M = np.asarray(self.M, dtype=float)
        U = np.asarray(self.U, dtype=float)
        V = np.asarray(self.V, dtype=float)
        G = pi.shape[0]
        if M.ndim != 3 or M.shape[0] != G:
            raise DimensionError(f"M must have shape (G, r, c) with G={G}, got {M.shape}")
        _, r, c = M.shape
        if U.shape != (G, r, r) or V.shape != (G, c, c):
            raise DimensionError(f"U {U.shape} / V {V.shape} inconsistent with M {M.shape}")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-10:
            raise ValueError(f"mixing weights must be positive and sum to 1, got {pi}")
        for a in (pi, M, U, V):
            a.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @classmethod
    def from_components(cls, components, normalize: bool = True) -> "MixtureModel":
        comps = list(components)
        pi = np.array([p.pi for p in comps])
        U = np.stack([p.U for p in comps])
        V = np.stack([p.V for p in comps])
        if normalize:
            U, V = normalize_identifiability(U, V)
        return cls(pi / pi.sum(), np.stack([p.M for p in comps]), U, V)

    @property
    def G(self) -> int:
        return self.pi.shape[0]

    @property
    def r(self) -> int:
        return self.M.shape[1]

    @property
    def c(self) -> int:
        return self.M.shape[2]

    @property
    def components(self) -> tuple[ComponentParams, ...]:
        return tuple(ComponentParams(self.M[g], self.U[g], self.V[g], self.pi[g]) for g in range(self.G))

    def normalized(self) -> "MixtureModel":
        U, V = normalize_identifiability(self.U, self.V)
        return MixtureModel(self.pi, self.M, U, V)


@dataclass(frozen=True)
class FitResult:
    model: MixtureModel
    zhat: np.ndarray
    hard_labels: np.ndarray
    loglik: float
    n_iters: int
    converged: bool
    history: tuple = ()
    start: int = 0
    diagnostics: tuple = field(default=())


# ---------------------------------------------------------------------------
# batched numerical core


def _chol(A):
    """Batched Cholesky returning (L, ok).  Failed elements get an identity factor."""
    try:
        return np.linalg.cholesky(A), np.ones(A.shape[:-2], dtype=bool)
    except np.linalg.LinAlgError:
        pass
    flat = A.reshape((-1,) + A.shape[-2:])
    L = np.empty_like(flat)
    ok = np.ones(flat.shape[0], dtype=bool)
    eye = np.eye(A.shape[-1])
    for i, a in enumerate(flat):
        try:
            L[i] = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            L[i], ok[i] = eye, False
    return L.reshape(A.shape), ok.reshape(A.shape[:-2])


def _tri_inv(L):
    # inverse of a lower-triangular factor via a solve against the identity
    return np.linalg.solve(L, np.broadcast_to(np.eye(L.shape[-1]), L.shape))


def _component_logdens(X, M, U, V):
    """Component log-densities; params shaped (B, G, ...) -> (B, n, G), plus ok flags (B,)."""
    r, c = X.shape[1:]
    LU, okU = _chol(U)
    LV, okV = _chol(V)
    D = X[None, None] - M[:, :, None]
    W = _tri_inv(LU)[:, :, None] @ D @ np.swapaxes(_tri_inv(LV), -1, -2)[:, :, None]
    maha = np.einsum("bgnrc,bgnrc->bgn", W, W)
    const = r * c * LOG_2PI + r * logdet_chol(LV) + c * logdet_chol(LU)
    out = -0.5 * (const[..., None] + maha)
    return np.swapaxes(out, 1, 2), (okU & okV).all(axis=1)


def _estep(X, mask, pi, M, U, V):
    """Return (z, loglik, per-observation log mixture density, ok)."""
    logdens, ok = _component_logdens(X, M, U, V)
    with np.errstate(divide="ignore"):
        joint = logdens + np.log(pi)[:, None, :]
    lse = logsumexp(joint, axis=2)
    z = np.exp(joint - lse[..., None]) * mask[..., None]
    ll = np.sum(np.where(mask > 0, lse, 0.0), axis=1)
    ok &= np.isfinite(ll)
    return z, ll, lse, ok


def _mstep(X, z, V_prev, sweeps):
    """Batched M-step.  Returns (pi, M, U, V, code) with a failure code per element."""
    B, n, G = z.shape
    r, c = X.shape[1:]
    code = np.zeros(B, dtype=int)
    Nk = z.sum(axis=1)
    code[(Nk < max(r, c) + 1).any(axis=1)] = _DEGENERATE
    Nsafe = np.where(Nk > 0, Nk, 1.0)
    pi = Nk / Nk.sum(axis=1, keepdims=True)
    M = np.einsum("bng,nrc->bgrc", z, X) / Nsafe[..., None, None]
    D = X[None, None] - M[:, :, None]  # (B, G, n, r, c)
    zt = np.swapaxes(z, 1, 2)[..., None, None]
    V = V_prev
    U = None
    for _ in range(sweeps):
        LV, okV = _chol(V)
        E = D @ np.swapaxes(_tri_inv(LV), -1, -2)[:, :, None]
        Et = np.moveaxis(E, 3, 2).reshape(B, G, r, n * c)
        Ewt = np.moveaxis(E * zt, 3, 2).reshape(B, G, r, n * c)
        U = Ewt @ np.swapaxes(Et, -1, -2) / (c * Nsafe)[..., None, None]
        U = 0.5 * (U + np.swapaxes(U, -1, -2))
        LU, okU = _chol(U)
        Fr = (_tri_inv(LU)[:, :, None] @ D).reshape(B, G, n * r, c)
        Fw = (Fr.reshape(B, G, n, r, c) * zt).reshape(B, G, n * r, c)
        V = np.swapaxes(Fw, -1, -2) @ Fr / (r * Nsafe)[..., None, None]
        V = 0.5 * (V + np.swapaxes(V, -1, -2))
        bad = ~(okV.all(axis=1) & okU.all(axis=1))
        code[bad & (code == _OK)] = _SINGULAR
    _, okV = _chol(V)
    code[~okV.all(axis=1) & (code == _OK)] = _SINGULAR
    with np.errstate(divide="ignore", invalid="ignore"):
        U, V = normalize_identifiability(U, V)
    return pi, M, U, V, code


@dataclass
class _BatchResult:
    pi: np.ndarray
    M: np.ndarray
    U: np.ndarray
    V: np.ndarray
    z: np.ndarray
    loglik: np.ndarray
    n_iters: np.ndarray
    converged: np.ndarray
    code: np.ndarray
    history: list


def _run_em(X, mask, pi, M, U, V, *, z0=None, max_iters=1000, rel_tol=1e-8, sweeps=1):
    """Run EM on every batch element until convergence, failure or ``max_iters``.

    With ``z0`` the run starts with an M-step from those responsibilities
    (``V`` then only seeds the flip-flop); otherwise it starts with an E-step
    at the given parameters.
    """
    B, n = mask.shape
    pi, M, U, V = (np.array(a, dtype=float, copy=True) for a in (pi, M, U, V))
    G = pi.shape[1]
    code = np.zeros(B, dtype=int)
    if z0 is not None:
        pi, M, U, V, code = _mstep(X, z0 * mask[..., None], V, sweeps)
    z = np.zeros((B, n, G))
    ll = np.full(B, np.nan)
    n_iters = np.zeros(B, dtype=int)
    converged = np.zeros(B, dtype=bool)
    history = [[] for _ in range(B)]
    running = code == _OK
    for t in range(max_iters + 1):
        idx = np.flatnonzero(running)
        if idx.size == 0:
            break
        zi, lli, _, ok = _estep(X, mask[idx], pi[idx], M[idx], U[idx], V[idx])
        code[idx[~ok]] = _NUMERIC
        z[idx], prev, ll[idx] = zi, ll[idx], lli
        for b, v in zip(idx, lli):
            history[b].append(float(v))
        if t > 0:
            done = np.abs(lli - prev) / (1.0 + np.abs(lli)) < rel_tol
            converged[idx[done & ok]] = True
        running[idx[converged[idx] | ~ok]] = False
        if t == max_iters:
            break
        idx = np.flatnonzero(running)
        if idx.size == 0:
            break
        res = _mstep(X, z[idx], V[idx], sweeps)
        step_ok = res[4] == _OK
        keep = idx[step_ok]
        for arr, new in zip((pi, M, U, V), res[:4]):
            arr[keep] = new[step_ok]
        code[idx[~step_ok]] = res[4][~step_ok]
        running[idx[~step_ok]] = False
        n_iters[keep] += 1
    return _BatchResult(pi, M, U, V, z, ll, n_iters, converged, code, history)


def _run_em_threaded(X, mask, pi, M, U, V, *, threads=1, chunk=None, **kw):
    """Split the batch axis into chunks and run them (optionally on a thread pool)."""
    B = mask.shape[0]
    if chunk is None:
        chunk = max(1, -(-B // threads))
    bounds = [(s, min(B, s + chunk)) for s in range(0, B, chunk)]
    z0 = kw.pop("z0", None)

    def work(bound):
        s, e = bound
        return _run_em(X, mask[s:e], pi[s:e], M[s:e], U[s:e], V[s:e], z0=None if z0 is None else z0[s:e], **kw)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    if len(parts) == 1:
        return parts[0]
    cat = {k: np.concatenate([getattr(p, k) for p in parts]) for k in ("pi", "M", "U", "V", "z", "loglik", "n_iters", "converged", "code")}
    return _BatchResult(history=[h for p in parts for h in p.history], **cat)


# ---------------------------------------------------------------------------
# public single-problem API


def _check_model(data: DataSet, model: MixtureModel):
    if (data.r, data.c) != (model.r, model.c):
        raise DimensionError(f"data is {data.r}x{data.c} but model is {model.r}x{model.c}")


def _one(model: MixtureModel):
    return model.pi[None], model.M[None], model.U[None], model.V[None]


def log_mixture_density(data: DataSet, model: MixtureModel) -> np.ndarray:
    """Per-observation ``log sum_g pi_g phi(X_i | theta_g)``."""
    _check_model(data, model)
    _, _, lse, ok = _estep(data.X, np.ones((1, data.n)), *_one(model))
    if not ok[0] or not np.all(np.isfinite(lse)):
        raise NumericError("non-finite mixture density")
    return lse[0]


def component_log_densities(data: DataSet, model: MixtureModel) -> np.ndarray:
    """``log phi(X_i | theta_g)`` for every observation and component, shape (n, G)."""
    _check_model(data, model)
    logdens, ok = _component_logdens(data.X, *_one(model)[1:])
    if not ok[0]:
        raise FactorizationError("model covariance is not positive-definite")
    return logdens[0]


def e_step(data: DataSet, model: MixtureModel) -> np.ndarray:
    """Posterior membership probabilities, shape (n, G); computed in log space."""
    _check_model(data, model)
    z, _, _, ok = _estep(data.X, np.ones((1, data.n)), *_one(model))
    if not ok[0] or not np.all(np.isfinite(z)):
        raise NumericError("NaN in component densities")
    return z[0]


def m_step(data: DataSet, zhat: np.ndarray, prev: MixtureModel, sweeps: int = 1) -> MixtureModel:
    """Maximize the expected complete-data log-likelihood given ``zhat``.

    Raises
    ------
    DegenerateComponentError
        If some component has effective size below ``max(r, c) + 1``.
    FactorizationError
        If an updated covariance is singular.
    """
    _check_model(data, prev)
    zhat = np.asarray(zhat, dtype=float)
    if zhat.shape != (data.n, prev.G):
        raise DimensionError(f"zhat must have shape {(data.n, prev.G)}, got {zhat.shape}")
    pi, M, U, V, code = _mstep(data.X, zhat[None], prev.V[None], sweeps)
    if code[0] == _DEGENERATE:
        raise DegenerateComponentError(
            f"component sizes {zhat.sum(axis=0)} below the minimum {max(data.r, data.c) + 1}"
        )
    if code[0] != _OK:
        raise FactorizationError("singular covariance estimate in M-step")
    return MixtureModel(pi[0], M[0], U[0], V[0])


def loglik(data: DataSet, model: MixtureModel) -> float:
    """Mixture log-likelihood ``sum_i log sum_g pi_g phi(X_i | theta_g)``."""
    return float(np.sum(log_mixture_density(data, model)))


def simplified_loglik(data: DataSet, model: MixtureModel, labels) -> float:
    """Classification log-likelihood: each observation scored only by its own component.

    ``labels`` are 1-based component indices.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (data.n,):
        raise DimensionError("one label per observation required")
    if labels.min() < 1 or labels.max() > model.G:
        raise ValueError(f"labels must lie in [1, {model.G}]")
    logdens = component_log_densities(data, model)
    g = labels - 1
    return float(np.sum(np.log(model.pi[g]) + logdens[np.arange(data.n), g]))


def kmeans_init(data: DataSet, G: int, rng: np.random.Generator, max_attempts: int = 10, max_iter: int = 300) -> np.ndarray:
    """k-means++ seeded Lloyd iterations on row-major vectorized matrices.

    Returns 1-based labels with every cluster non-empty.
    """
    n = data.n
    if n < G:
        raise InsufficientDataError(f"need at least G={G} observations, got {n}")
    Y = data.X.reshape(n, -1)
    for _ in range(max_attempts):
        centers = _kmeanspp(Y, G, rng)
        if centers is None:
            continue
        labels = None
        for _ in range(max_iter):
            d2 = ((Y[:, None, :] - centers[None]) ** 2).sum(axis=2)
            new = d2.argmin(axis=1)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            counts = np.bincount(labels, minlength=G)
            if np.any(counts == 0):
                break
            centers = np.stack([Y[labels == g].mean(axis=0) for g in range(G)])
        if np.all(np.bincount(labels, minlength=G) > 0):
            return labels + 1
    raise DegenerateDataError(f"k-means left an empty cluster in {max_attempts} attempts")


def _kmeanspp(Y, G, rng):
    n = Y.shape[0]
    centers = [Y[rng.integers(n)]]
    d2 = ((Y - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, G):
        total = d2.sum()
        if not total > 0:
            return None
        nxt = Y[rng.choice(n, p=d2 / total)]
        centers.append(nxt)
        d2 = np.minimum(d2, ((Y - nxt) ** 2).sum(axis=1))
    return np.stack(centers)


def _result_from_batch(res: _BatchResult, b: int, diagnostics=()) -> FitResult:
    model = MixtureModel(res.pi[b], res.M[b], res.U[b], res.V[b])
    z = res.z[b]
    return FitResult(
        model=model,
        zhat=z,
        hard_labels=z.argmax(axis=1) + 1,
        loglik=float(res.loglik[b]),
        n_iters=int(res.n_iters[b]),
        converged=bool(res.converged[b]),
        history=tuple(res.history[b]),
        start=b,
        diagnostics=tuple(diagnostics),
    )


def fit(data: DataSet, G: int, cfg: FitConfig = FitConfig()) -> FitResult:
    """Fit a G-component mixture by EM from ``cfg.n_inits`` k-means starts.

    Start ``s`` draws from ``default_rng(cfg.seed + s)``: k-means++ seeding
    and random correlation matrices for the initial column covariances.
    The start with the highest final log-likelihood wins (lowest index on ties).
    """
    r, c = data.r, data.c
    if G < 1:
        raise ValueError("G must be >= 1")
    if data.n <= G * (max(r, c) + 1):
        raise InsufficientDataError(f"n={data.n} too small for G={G} components of size {r}x{c}")
    S = cfg.n_inits
    z0 = np.zeros((S, data.n, G))
    V0 = np.empty((S, G, c, c))
    diag = [""] * S
    usable = np.ones(S, dtype=bool)
    for s in range(S):
        rng = np.random.default_rng(cfg.seed + s)
        try:
            labels = kmeans_init(data, G, rng)
        except DegenerateDataError as exc:
            usable[s], diag[s] = False, f"start {s}: {exc}"
            labels = np.ones(data.n, dtype=int)
        z0[s, np.arange(data.n), labels - 1] = 1.0
        V0[s] = np.stack([rand_corr(c, rng) for _ in range(G)])
    pi0 = np.full((S, G), 1.0 / G)
    M0 = np.zeros((S, G, r, c))
    U0 = np.broadcast_to(np.eye(r), (S, G, r, r))
    res = _run_em_threaded(
        data.X, np.ones((S, data.n)), pi0, M0, U0, V0, z0=z0, threads=cfg.threads,
        max_iters=cfg.max_iters, rel_tol=cfg.rel_tol, sweeps=cfg.inner_uv_sweeps,
    )
    ok = usable & (res.code == _OK)
    for s in range(S):
        if usable[s]:
            diag[s] = f"start {s}: " + (
                _REASONS[res.code[s]] if res.code[s] != _OK
                else f"loglik={res.loglik[s]:.6f} iters={res.n_iters[s]} converged={bool(res.converged[s])}"
            )
    if not ok.any():
        raise FitError("all EM starts failed", diag)
    score = np.where(ok, res.loglik, -np.inf)
    best = int(np.argmax(score))
    log.debug("fit G=%d: best start %d of %d, loglik %.6f", G, best, S, res.loglik[best])
    return _result_from_batch(res, best, diag)


def refit(data: DataSet, start: MixtureModel, cfg: FitConfig = FitConfig(), max_iters: int | None = None) -> FitResult:
    """Continue EM from ``start`` on ``data`` (warm start; no random restarts)."""
    _check_model(data, start)
    res = _run_em(
        data.X, np.ones((1, data.n)), *_one(start),
        max_iters=cfg.max_iters if max_iters is None else max_iters,
        rel_tol=cfg.rel_tol, sweeps=cfg.inner_uv_sweeps,
    )
    if res.code[0] != _OK:
        raise FitError("warm-started EM failed", [_REASONS[res.code[0]]])
    return _result_from_batch(res, 0)
