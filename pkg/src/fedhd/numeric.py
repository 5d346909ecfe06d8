"""Shared numerics: stable reductions, seeded streams, a finite-difference
gradient oracle and a small Adam optimizer.

All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special


def logsumexp(v) -> float:
    """Return ``log(sum(exp(v)))`` for a 1-D vector without overflow."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite entry in logsumexp input")
    return float(special.logsumexp(v))


def finite_diff_grad(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at flat vector ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at index {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    """Max-norm relative error ``|a-b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream addressed by ``(master_seed, stream_id)``.

    Child streams extend the address path, so per-slide or per-epoch streams
    can be derived anywhere without shared state.
    """

    master_seed: int
    stream_id: int
    path: tuple = ()

    def generator(self) -> np.random.Generator:
        key = (self.stream_id,) + tuple(self.path)
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=key)
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id, self.path + tuple(int(i) for i in ids))


def spawn_stream(master_seed: int, stream_id: int) -> RngStream:
    return RngStream(int(master_seed), int(stream_id))


class Adam:
    """Adam with bias correction over a dict of named arrays (updated in place)."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, scale: float = 1.0) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            if scale != 1.0:
                g = g * scale
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
