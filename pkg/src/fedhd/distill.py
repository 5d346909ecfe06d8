"""Per-slide synthetic feature distillation by mixture moment matching.

Each real slide gets its own synthetic slide of ``T`` embeddings. The
embeddings are split across the slide's fitted mixture components at
initialization (assignments never change) and optimized so that every
group's population mean and covariance match the fitted component.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import gmm
from .numeric import Adam, RngStream, spawn_stream

FLOAT_BYTES = 4


@dataclass
class RealSlide:
    slide_id: str
    label: int
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 2:
            raise ValueError(f"slide {self.slide_id}: need a K x d matrix with K >= 2")


@dataclass
class SyntheticSlide:
    slide_id: str
    source_slide_id: str
    label: int
    features: np.ndarray
    assignment: np.ndarray
    origin: str = ""

    @property
    def n_components(self) -> int:
        return int(self.assignment.max()) + 1


@dataclass
class DistillConfig:
    T: int = 1000
    M: int = 16
    iterations: int = 1000
    learning_rate: float = 0.01
    init_strategy: str = "component-sample"
    cov_mode: str | None = None
    eps_reg: float = gmm.DEFAULT_EPS_REG
    beta1: float = 0.9
    beta2: float = 0.999
    em_max_iter: int = 100
    em_tol: float = 1e-6
    gma: bool = True            # False: single-component (global) matching
    o2o: bool = True            # False: `slides_per_class` slides per class
    slides_per_class: int = 10
    mean_only: bool = False

    def __post_init__(self):
        if self.T < 2 * self.M:
            raise ValueError(f"insufficient synthetic budget: T={self.T} < 2M={2 * self.M}")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.init_strategy not in ("component-sample", "random-normal"):
            raise ValueError(f"unknown init_strategy {self.init_strategy!r}")

    @property
    def effective_M(self) -> int:
        return self.M if self.gma else 1


def allocate(T: int, M: int) -> np.ndarray:
    """Uniform allocation of T embeddings to M components, remainder round-robin."""
    if T < 2 * M:
        raise ValueError(f"insufficient synthetic budget: T={T} < 2M={2 * M}")
    counts = np.full(M, T // M)
    counts[: T % M] += 1
    return np.repeat(np.arange(M), counts)


def init_synthetic(model: gmm.GmmModel, label: int, T: int,
                   init_strategy: str = "component-sample", rng: RngStream | None = None,
                   slide_id: str = "", source_slide_id: str = "") -> SyntheticSlide:
    assignment = allocate(T, model.n_components)
    gen = (rng or RngStream(0, 0)).generator()
    d = model.dim
    if init_strategy == "random-normal":
        feats = gen.standard_normal((T, d))
    elif init_strategy == "component-sample":
        feats = np.empty((T, d))
        for m in range(model.n_components):
            rows = np.flatnonzero(assignment == m)
            z = gen.standard_normal((rows.size, d))
            cov = model.covs[m]
            if model.cov_mode == "diagonal":
                feats[rows] = model.means[m] + z * np.sqrt(cov)
            else:
                feats[rows] = model.means[m] + z @ np.linalg.cholesky(cov).T
    else:
        raise ValueError(f"unknown init_strategy {init_strategy!r}")
    return SyntheticSlide(slide_id, source_slide_id, int(label), feats, assignment)


def _groups(assignment, M):
    groups = [np.flatnonzero(assignment == m) for m in range(M)]
    for m, g in enumerate(groups):
        if g.size < 2:
            raise ValueError(f"component {m} has {g.size} synthetic members; need >= 2")
    return groups


def _group_moments(p, diagonal):
    mu = p.mean(axis=0)
    diff = p - mu
    if diagonal:
        return mu, diff, np.mean(diff * diff, axis=0)
    return mu, diff, diff.T @ diff / p.shape[0]


def align_loss(real_moments, syn: SyntheticSlide, mean_only: bool = False) -> float:
    """Sum over components of squared mean distance plus squared Frobenius
    distance between real and synthetic population covariances."""
    value, _ = _loss_and_grad(real_moments, syn.features, syn.assignment, mean_only, want_grad=False)
    return value


def align_loss_grad(real_moments, syn: SyntheticSlide, mean_only: bool = False) -> np.ndarray:
    """Analytic gradient of :func:`align_loss` w.r.t. the synthetic embeddings."""
    _, grad = _loss_and_grad(real_moments, syn.features, syn.assignment, mean_only, want_grad=True)
    return grad


def _loss_and_grad(real_moments, feats, assignment, mean_only, want_grad=True):
    M = len(real_moments)
    groups = _groups(assignment, M)
    total = 0.0
    grad = np.zeros_like(feats) if want_grad else None
    for (mu, cov), rows in zip(real_moments, groups):
        p = feats[rows]
        n = rows.size
        diagonal = np.ndim(cov) == 1
        mu_hat, diff, cov_hat = _group_moments(p, diagonal)
        dmu = mu_hat - mu
        total += float(dmu @ dmu)
        if not mean_only:
            dcov = cov_hat - cov
            total += float(np.sum(dcov * dcov))
        if want_grad:
            g = np.broadcast_to(2.0 * dmu / n, p.shape).copy()
            if not mean_only:
                if diagonal:
                    g += (4.0 / n) * diff * dcov
                else:
                    g += (4.0 / n) * diff @ dcov
            grad[rows] = g
    return total, grad


def distill_slide(real: RealSlide, cfg: DistillConfig, rng: RngStream,
                  slide_id: str | None = None):
    """Fit the slide's mixture and optimize one synthetic slide against it.

    Returns ``(synthetic, loss_trace)``. ``loss_trace[i]`` is the loss before
    update ``i`` (so ``loss_trace[0]`` is the initialization loss); the
    returned slide is the best state seen, including after the final update.
    """
    model, _ = gmm.fit_gmm(real.features, cfg.effective_M, cov_mode=cfg.cov_mode,
                           eps_reg=cfg.eps_reg, max_iter=cfg.em_max_iter,
                           tol=cfg.em_tol, rng=rng.child(0))
    return _optimize(model, real.label, cfg, rng.child(1),
                     slide_id or f"{real.slide_id}-syn", real.slide_id)


def _optimize(model, label, cfg, rng, slide_id, source_id):
    moments = gmm.component_moments(model)
    syn = init_synthetic(model, label, cfg.T, cfg.init_strategy, rng,
                         slide_id=slide_id, source_slide_id=source_id)
    trace = []
    if cfg.iterations == 0:
        return syn, np.array(trace)
    params = {"p": syn.features.copy()}
    opt = Adam(params, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2)
    best_loss, best = np.inf, params["p"].copy()
    for _ in range(cfg.iterations):
        loss, grad = _loss_and_grad(moments, params["p"], syn.assignment, cfg.mean_only)
        trace.append(loss)
        if loss < best_loss:
            best_loss, best = loss, params["p"].copy()
        opt.step(params, {"p": grad})
    final, _ = _loss_and_grad(moments, params["p"], syn.assignment, cfg.mean_only, want_grad=False)
    if final < best_loss:
        best = params["p"]
    syn.features = best
    return syn, np.array(trace)


def distill_client(slides: list[RealSlide], cfg: DistillConfig, master_seed: int,
                   client_id: str = "", threads: int = 1, return_traces: bool = False):
    """Distill a client's slides.

    With ``cfg.o2o`` each real slide yields one synthetic slide, using the
    stream ``(master_seed, slide index)``. Otherwise ``cfg.slides_per_class``
    slides are produced per class from a mixture fit on the pooled class
    features.
    """
    if not slides:
        raise ValueError("no slides to distill")
    prefix = f"{client_id}-" if client_id else ""

    if cfg.o2o:
        def job(i):
            s = slides[i]
            try:
                return distill_slide(s, cfg, spawn_stream(master_seed, i),
                                     slide_id=f"{prefix}syn-{s.slide_id}")
            except ValueError as exc:
                raise ValueError(f"slide {s.slide_id}: {exc}") from exc
        indices = range(len(slides))
    else:
        labels = sorted({s.label for s in slides})
        pooled = {y: RealSlide(f"pooled-class-{y}", y,
                               np.vstack([s.features for s in slides if s.label == y]))
                  for y in labels}
        fits = {}
        for y in labels:
            fits[y], _ = gmm.fit_gmm(pooled[y].features, cfg.effective_M, cov_mode=cfg.cov_mode,
                                     eps_reg=cfg.eps_reg, max_iter=cfg.em_max_iter,
                                     tol=cfg.em_tol, rng=spawn_stream(master_seed, 1_000_000 + y))
        tasks = [(y, j) for y in labels for j in range(cfg.slides_per_class)]

        def job(i):
            y, j = tasks[i]
            return _optimize(fits[y], y, cfg, spawn_stream(master_seed, 2_000_000 + i),
                             f"{prefix}syn-class{y}-{j}", f"pooled-class-{y}")
        indices = range(len(tasks))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, indices))
    else:
        results = [job(i) for i in indices]
    for syn, _ in results:
        syn.origin = client_id
    out = [syn for syn, _ in results]
    if return_traces:
        return out, [trace for _, trace in results]
    return out


def payload_floats(slides: list[SyntheticSlide]) -> int:
    """Number of feature floats uploaded (sum of T*d over slides)."""
    return int(sum(s.features.size for s in slides))


def payload_bytes(n_slides: int, T: int, d: int, float_bytes: int = FLOAT_BYTES) -> int:
    return n_slides * T * d * float_bytes


def payload_report(slides: list[SyntheticSlide]) -> dict:
    n_floats = payload_floats(slides)
    return {
        "slides": len(slides),
        "floats": n_floats,
        "labels": len(slides),
        "bytes": n_floats * FLOAT_BYTES,
        "mib": n_floats * FLOAT_BYTES / 2 ** 20,
    }
