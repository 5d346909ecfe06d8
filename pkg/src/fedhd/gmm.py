"""Gaussian mixtures with fixed uniform weights, fit by EM.

Only means and covariances are re-estimated; the mixing weights stay at
``1/M`` throughout. Covariances are either full ``(M, d, d)`` or diagonal
``(M, d)`` arrays of per-dimension variances.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .numeric import RngStream

LOG_2PI = np.log(2.0 * np.pi)

DEFAULT_EPS_REG = 1e-6
DIAGONAL_ABOVE_DIM = 128


def default_cov_mode(d: int) -> str:
    return "diagonal" if d > DIAGONAL_ABOVE_DIM else "full"


@dataclass
class GaussianComponent:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class GmmModel:
    means: np.ndarray          # (M, d)
    covs: np.ndarray           # (M, d, d) full or (M, d) diagonal
    cov_mode: str = "full"
    eps_reg: float = DEFAULT_EPS_REG
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.covs = np.asarray(self.covs, dtype=np.float64)
        if self.cov_mode not in ("full", "diagonal"):
            raise ValueError(f"unknown cov_mode {self.cov_mode!r}")
        if self.weights is None:
            self.weights = np.full(self.n_components, 1.0 / self.n_components)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(self.means[m], self.covs[m]) for m in range(self.n_components)]


def _check_points(points, dim=None) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"points must be a 2-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in points")
    if dim is not None and x.shape[1] != dim:
        raise ValueError(f"dimension mismatch: model has d={dim}, points have d={x.shape[1]}")
    return x


def _component_log_density(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """(K, M) matrix of log N(x_k; mu_m, Sigma_m)."""
    K, d = x.shape
    out = np.empty((K, model.n_components))
    for m in range(model.n_components):
        diff = x - model.means[m]
        if model.cov_mode == "diagonal":
            var = model.covs[m]
            maha = np.sum(diff * diff / var, axis=1)
            logdet = np.sum(np.log(var))
        else:
            chol = linalg.cholesky(model.covs[m], lower=True)
            sol = linalg.solve_triangular(chol, diff.T, lower=True)
            maha = np.sum(sol * sol, axis=0)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, m] = -0.5 * (d * LOG_2PI + logdet + maha)
    return out


def _weighted_log_density(model, x):
    return _component_log_density(model, x) + np.log(model.weights)


def responsibilities(model: GmmModel, points) -> np.ndarray:
    """Posterior component probabilities, one row per point."""
    x = _check_points(points, model.dim)
    logp = _weighted_log_density(model, x)
    return np.exp(logp - special.logsumexp(logp, axis=1, keepdims=True))


def log_likelihood(model: GmmModel, points) -> float:
    x = _check_points(points, model.dim)
    return float(np.sum(special.logsumexp(_weighted_log_density(model, x), axis=1)))


def component_moments(model: GmmModel) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-component ``(mean, cov)`` pairs consumed by the alignment loss."""
    return [(model.means[m].copy(), model.covs[m].copy()) for m in range(model.n_components)]


def _population_cov(x, w, mean, cov_mode, eps_reg):
    """Weighted population covariance with an eigenvalue floor of ``eps_reg``.

    Flooring (rather than adding ``eps_reg * I``) is the exact maximizer over
    the floored set, which keeps EM monotone in the log-likelihood.
    """
    diff = x - mean
    total = w.sum()
    if cov_mode == "diagonal":
        return np.maximum((w @ (diff * diff)) / total, eps_reg)
    cov = (diff * w[:, None]).T @ diff / total
    return _floor_eigenvalues(0.5 * (cov + cov.T), eps_reg)


def _floor_eigenvalues(cov, eps_reg):
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() >= eps_reg:
        return cov
    out = (vecs * np.maximum(vals, eps_reg)) @ vecs.T
    return 0.5 * (out + out.T)


def _kmeanspp_means(x, M, gen):
    """Greedy k-means++ seeding on the rows of ``x``."""
    K = x.shape[0]
    trials = 2 + int(np.log(M))
    chosen = [int(gen.integers(K))]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, M):
        total = d2.sum()
        if total <= 0:
            # every point coincides with a seed already
            chosen.append(int(gen.integers(K)))
            continue
        cands = gen.choice(K, size=trials, p=d2 / total)
        best, best_pot, best_d2 = None, np.inf, None
        for c in cands:
            nd2 = np.minimum(d2, np.sum((x - x[c]) ** 2, axis=1))
            if nd2.sum() < best_pot:
                best, best_pot, best_d2 = int(c), nd2.sum(), nd2
        chosen.append(best)
        d2 = best_d2
    return x[chosen].copy()


def effective_components(K: int, M: int) -> int:
    if K < 2 * M:
        return max(1, K // 2)
    return M


def fit_gmm(points, M: int, cov_mode: str | None = None, eps_reg: float = DEFAULT_EPS_REG,
            max_iter: int = 100, tol: float = 1e-6, rng: RngStream | None = None,
            return_trace: bool = False):
    """Fit a uniform-weight mixture to ``points`` by EM.

    Returns ``(model, resp)``; with ``return_trace=True`` also the list of
    log-likelihoods evaluated after each E-step.
    """
    x = _check_points(points)
    K, d = x.shape
    if K < 2:
        raise ValueError(f"insufficient patches: need at least 2, got {K}")
    if M < 1:
        raise ValueError("M must be >= 1")
    if eps_reg <= 0:
        raise ValueError("eps_reg must be positive")
    cov_mode = cov_mode or default_cov_mode(d)
    M = effective_components(K, M)
    gen = (rng or RngStream(0, 0)).generator()

    ones = np.ones(K)
    global_mean = x.mean(axis=0)
    global_cov = _population_cov(x, ones, global_mean, cov_mode, 0.0)
    if cov_mode == "diagonal":
        global_cov = global_cov + eps_reg
    else:
        global_cov = global_cov + eps_reg * np.eye(d)

    # seeding runs on a canonical row order so the fit ignores input order
    canon = x[np.lexsort(x.T[::-1])]
    means = _kmeanspp_means(canon, M, gen) if M > 1 else global_mean[None, :].copy()
    covs = np.repeat(global_cov[None], M, axis=0)
    model = GmmModel(means, covs, cov_mode=cov_mode, eps_reg=eps_reg)

    trace = []
    prev = None
    for _ in range(max_iter):
        logp = _weighted_log_density(model, x)
        norm = special.logsumexp(logp, axis=1, keepdims=True)
        ll = float(norm.sum())
        trace.append(ll)
        if prev is not None and abs(ll - prev) <= tol * max(abs(prev), 1.0):
            break
        prev = ll
        resp = np.exp(logp - norm)
        for m in range(M):
            w = resp[:, m]
            if w.sum() < 1e-12:
                # empty component keeps its parameters
                continue
            mean = (w @ x) / w.sum()
            model.means[m] = mean
            model.covs[m] = _population_cov(x, w, mean, cov_mode, eps_reg)

    resp = responsibilities(model, x)
    if return_trace:
        return model, resp, trace
    return model, resp
