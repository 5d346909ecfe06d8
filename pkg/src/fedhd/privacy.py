"""Membership inference against released synthetic embeddings.

The attacker sees the released pool and a candidate real slide. Each patch
of the candidate is scored by its highest cosine similarity to any released
embedding, and patch scores are aggregated (mean or max) into a slide score.
Members are slides whose features were used to build the release.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .distill import DistillConfig, RealSlide, distill_client
from .numeric import spawn_stream

MIN_PER_SPLIT = 5


@dataclass
class MiaConfig:
    member_fraction: float = 0.8
    aggregation: str = "mean"
    seeds: int = 10

    def __post_init__(self):
        if not 0.0 < self.member_fraction < 1.0:
            raise ValueError(f"member_fraction must lie in (0, 1), got {self.member_fraction}")
        if self.aggregation not in ("mean", "max"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")


@dataclass
class MiaResult:
    aucs: list

    @property
    def max_auc(self) -> float:
        return float(np.max(self.aucs))

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.aucs))


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cosine similarity undefined for a zero vector")
    return x / norms


def slide_score(features, released_unit, aggregation: str = "mean") -> float:
    best = np.max(_unit_rows(features) @ released_unit.T, axis=1)
    return float(best.mean() if aggregation == "mean" else best.max())


def attack_auc(members, non_members, released, aggregation: str = "mean") -> float:
    """AUC of member-vs-non-member discrimination given released embeddings."""
    rel = _unit_rows(np.asarray(released, dtype=np.float64))
    scores = [slide_score(s.features, rel, aggregation) for s in list(members) + list(non_members)]
    labels = [1] * len(members) + [0] * len(non_members)
    return metrics.auc(scores, labels)


def release_distilled(members, cfg: DistillConfig, seed: int) -> np.ndarray:
    syn = distill_client(members, cfg, master_seed=seed)
    return np.vstack([s.features for s in syn])


def release_copies(members, cfg: DistillConfig, seed: int) -> np.ndarray:
    """Verbatim subsample of ``cfg.T`` real patches per member slide."""
    gen = spawn_stream(seed, 0).generator()
    out = []
    for s in members:
        k = s.features.shape[0]
        idx = gen.choice(k, size=min(cfg.T, k), replace=False)
        out.append(s.features[idx])
    return np.vstack(out)


def split_members(n: int, member_fraction: float, gen) -> tuple[np.ndarray, np.ndarray]:
    n_mem = int(round(n * member_fraction))
    if n_mem < MIN_PER_SPLIT or n - n_mem < MIN_PER_SPLIT:
        raise ValueError(f"too few slides for a membership split: {n} slides give "
                         f"{n_mem} members / {n - n_mem} non-members, need >= {MIN_PER_SPLIT} each")
    perm = gen.permutation(n)
    return perm[:n_mem], perm[n_mem:]


def mia_attack(slides: list[RealSlide], distill_cfg: DistillConfig, mia_cfg: MiaConfig,
               master_seed: int, release=release_distilled) -> MiaResult:
    """Repeat the member/non-member partition ``mia_cfg.seeds`` times.

    ``release(members, distill_cfg, seed)`` returns the embeddings the attacker
    observes; the default distills the member slides.
    """
    aucs = []
    for r in range(mia_cfg.seeds):
        gen = spawn_stream(master_seed, r).generator()
        mem_idx, non_idx = split_members(len(slides), mia_cfg.member_fraction, gen)
        members = [slides[i] for i in mem_idx]
        non_members = [slides[i] for i in non_idx]
        released = release(members, distill_cfg, int(gen.integers(2 ** 62)))
        aucs.append(attack_auc(members, non_members, released, mia_cfg.aggregation))
    return MiaResult(aucs)
