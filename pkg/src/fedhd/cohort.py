"""Synthetic multi-client cohorts with known generative structure, plus the
on-disk bag format and manifest CSV.

Generative model for one slide of class ``y`` at client ``c``::

    offset  ~ N(0, slide_jitter^2 I)                    per slide
    weights ~ Dirichlet(concentration * 1)              per slide
    b_k     = mean[y, j_k] + shift[c] + offset + N(0, var I),  j_k ~ weights

Class component means lie on a sphere of radius ``radius``; the first
``shared_components`` of them are common to every class (background
tissue), the rest are class specific.
"""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distill import RealSlide, SyntheticSlide
from .federation import ClientState
from .numeric import spawn_stream

BAG_MAGIC = b"FBAG"
BAG_VERSION = 1
BAG_HEADER = struct.Struct("<4sHHIII")
MANIFEST_FIELDS = ["slide_id", "client_id", "label", "split", "source_slide_id", "path"]


@dataclass
class CohortSpec:
    client_count: int = 3
    class_count: int = 2
    dim: int = 32
    components_per_class: int = 3
    shared_components: int = 0
    radius: float = 3.0
    component_var: float = 1.0
    concentration: float = 0.0          # <= 0: uniform component weights
    slide_jitter: float = 0.0
    shift_norm: float = 1.0
    slides_per_client: list = field(default_factory=lambda: [40, 40, 40])
    class_priors: list | None = None    # one prior vector per client
    k_min: int = 150
    k_max: int = 250
    test_fraction: float = 0.3
    label_noise: list = field(default_factory=lambda: [0.0])   # per client, train split only
    mil_variants: list = field(default_factory=lambda: ["meanpool"])
    hidden_dims: list = field(default_factory=lambda: [64])

    def __post_init__(self):
        if len(self.slides_per_client) == 1 and self.client_count > 1:
            self.slides_per_client = list(self.slides_per_client) * self.client_count
        if len(self.slides_per_client) != self.client_count:
            raise ValueError("slides_per_client must list one count per client")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.k_min < 2 * self.components_per_class or self.k_max < self.k_min:
            raise ValueError(f"invalid patch-count range [{self.k_min}, {self.k_max}]: "
                             f"need k_min >= 2 * components_per_class")
        if self.shift_norm > 1.0:
            raise ValueError("shift_norm must be <= 1")
        if any(not 0.0 <= r < 1.0 for r in self.label_noise):
            raise ValueError("label_noise rates must lie in [0, 1)")
        if not 0 <= self.shared_components < self.components_per_class:
            raise ValueError("shared_components must be < components_per_class")

    def priors(self) -> np.ndarray:
        if self.class_priors is None:
            return np.full((self.client_count, self.class_count), 1.0 / self.class_count)
        pri = np.asarray(self.class_priors, dtype=np.float64)
        if pri.shape != (self.client_count, self.class_count):
            raise ValueError("class_priors must be client_count x class_count")
        if not np.allclose(pri.sum(axis=1), 1.0):
            raise ValueError("class priors must sum to 1 per client")
        return pri

    def variant_of(self, c: int) -> tuple[str, int]:
        return (self.mil_variants[c % len(self.mil_variants)],
                int(self.hidden_dims[c % len(self.hidden_dims)]))


def class_counts(n: int, prior) -> np.ndarray:
    """Largest-remainder allocation of ``n`` slides to classes."""
    raw = n * np.asarray(prior, dtype=np.float64)
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _sphere(gen, n, d, radius):
    v = gen.standard_normal((n, d))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def class_means(spec: CohortSpec, seed: int) -> np.ndarray:
    """(class_count, components_per_class, d) ground-truth component means."""
    gen = spawn_stream(seed, 0).generator()
    S = spec.shared_components
    shared = _sphere(gen, S, spec.dim, spec.radius)
    own = _sphere(gen, spec.class_count * (spec.components_per_class - S),
                  spec.dim, spec.radius)
    own = own.reshape(spec.class_count, spec.components_per_class - S, spec.dim)
    return np.concatenate([np.broadcast_to(shared, (spec.class_count, S, spec.dim)), own], axis=1)


def client_shifts(spec: CohortSpec, seed: int) -> np.ndarray:
    gen = spawn_stream(seed, 1).generator()
    return _sphere(gen, spec.client_count, spec.dim, 1.0) * spec.shift_norm


def sample_slide(spec, means_y, shift, gen) -> np.ndarray:
    K = int(gen.integers(spec.k_min, spec.k_max + 1))
    J = means_y.shape[0]
    if spec.concentration > 0:
        w = gen.dirichlet(np.full(J, spec.concentration))
    else:
        w = np.full(J, 1.0 / J)
    offset = gen.standard_normal(spec.dim) * spec.slide_jitter
    comp = gen.choice(J, size=K, p=w)
    noise = gen.standard_normal((K, spec.dim)) * np.sqrt(spec.component_var)
    return means_y[comp] + shift + offset + noise


def generate_cohort(spec: CohortSpec, seed: int) -> list[ClientState]:
    """Clients with stratified train/test splits; a pure function of ``(spec, seed)``."""
    means = class_means(spec, seed)
    shifts = client_shifts(spec, seed)
    priors = spec.priors()
    clients = []
    for c in range(spec.client_count):
        counts = class_counts(spec.slides_per_client[c], priors[c])
        if np.any(counts < 2):
            bad = int(np.argmin(counts))
            raise ValueError(f"class unrepresentable: client {c} gets {counts[bad]} "
                             f"slides of class {bad}; need >= 2 for a stratified split")
        labels = np.repeat(np.arange(spec.class_count), counts)
        gen = spawn_stream(seed, 100 + c).generator()
        labels = labels[gen.permutation(labels.size)]
        slides = []
        for i, y in enumerate(labels):
            sg = spawn_stream(seed, 10_000 * (c + 1) + i).generator()
            slides.append(RealSlide(f"c{c}-s{i:03d}", int(y),
                                    sample_slide(spec, means[y], shifts[c], sg)))
        train, test = stratified_split(slides, spec.test_fraction, gen)
        train = flip_labels(train, spec.label_noise[c % len(spec.label_noise)],
                            spec.class_count, gen)
        variant, hidden = spec.variant_of(c)
        clients.append(ClientState(f"c{c}", train, test, variant=variant, hidden_dim=hidden,
                                   class_count=spec.class_count))
    return clients


def stratified_split(slides, test_fraction, gen):
    """Per-class split keeping at least one slide of each class on both sides."""
    by_class: dict[int, list] = {}
    for s in slides:
        by_class.setdefault(s.label, []).append(s)
    train_ids, test_ids = set(), set()
    for y, group in sorted(by_class.items()):
        n = len(group)
        n_test = min(max(1, int(round(n * test_fraction))), n - 1)
        perm = gen.permutation(n)
        test_ids.update(group[i].slide_id for i in perm[:n_test])
        train_ids.update(group[i].slide_id for i in perm[n_test:])
    return ([s for s in slides if s.slide_id in train_ids],
            [s for s in slides if s.slide_id in test_ids])


def flip_labels(slides, rate, class_count, gen):
    """Relabel ``round(rate * n)`` slides to a different class (annotation noise)."""
    n_flip = int(round(rate * len(slides)))
    if n_flip == 0:
        return slides
    out = list(slides)
    for i in gen.choice(len(out), size=n_flip, replace=False):
        s = out[i]
        new = (s.label + 1 + int(gen.integers(class_count - 1))) % class_count
        out[i] = RealSlide(s.slide_id, new, s.features)
    return out


# -- bag files ---------------------------------------------------------------

def write_bag(path, features, label: int, flags: int = 0) -> None:
    """``FBAG`` | u16 version | u16 flags | u32 K | u32 d | u32 label | f32 data."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("bag features must be a K x d matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{path}: non-finite feature values")
    K, d = x.shape
    with open(path, "wb") as fh:
        fh.write(BAG_HEADER.pack(BAG_MAGIC, BAG_VERSION, flags, K, d, int(label)))
        fh.write(x.astype("<f4").tobytes())


def read_bag(path) -> tuple[np.ndarray, int]:
    """Return ``(features as float64 K x d, label)``."""
    data = Path(path).read_bytes()
    if len(data) < BAG_HEADER.size:
        raise ValueError(f"{path}: truncated header: expected {BAG_HEADER.size} bytes, "
                         f"got {len(data)}")
    magic, version, _flags, K, d, label = BAG_HEADER.unpack_from(data)
    if magic != BAG_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {BAG_MAGIC!r}")
    if version != BAG_VERSION:
        raise ValueError(f"{path}: unsupported bag version {version}")
    expected = BAG_HEADER.size + 4 * K * d
    if len(data) != expected:
        raise ValueError(f"{path}: truncated or oversized file: expected {expected} bytes, "
                         f"got {len(data)}")
    x = np.frombuffer(data, dtype="<f4", offset=BAG_HEADER.size).reshape(K, d)
    return x.astype(np.float64), int(label)


def bag_size(K: int, d: int) -> int:
    return BAG_HEADER.size + 4 * K * d


# -- manifests ---------------------------------------------------------------

@dataclass
class ManifestEntry:
    slide_id: str
    client_id: str
    label: int
    split: str
    path: str
    source_slide_id: str = ""


def write_manifest(path, entries: list[ManifestEntry]) -> None:
    seen = set()
    for e in entries:
        if e.slide_id in seen:
            raise ValueError(f"duplicate slide_id {e.slide_id!r}")
        seen.add(e.slide_id)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        for e in entries:
            writer.writerow({"slide_id": e.slide_id, "client_id": e.client_id,
                             "label": e.label, "split": e.split,
                             "source_slide_id": e.source_slide_id, "path": e.path})


def read_manifest(path, check_files: bool = True) -> list[ManifestEntry]:
    """Parse a manifest; relative bag paths resolve against its directory."""
    base = Path(path).parent
    entries, seen = [], set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise ValueError(f"{path}: header must be {','.join(MANIFEST_FIELDS)}")
        for row_no, row in enumerate(reader, start=2):
            if row["slide_id"] in seen:
                raise ValueError(f"{path}:{row_no}: duplicate slide_id {row['slide_id']!r}")
            seen.add(row["slide_id"])
            if check_files and not (base / row["path"]).is_file():
                raise FileNotFoundError(f"{path}:{row_no}: slide {row['slide_id']!r} "
                                        f"references missing file {row['path']!r}")
            entries.append(ManifestEntry(row["slide_id"], row["client_id"], int(row["label"]),
                                         row["split"], row["path"], row["source_slide_id"]))
    return entries


def write_cohort(out_dir, clients: list[ClientState]) -> list[ManifestEntry]:
    """Write every real slide as a bag file plus ``manifest.csv``."""
    out = Path(out_dir)
    (out / "bags").mkdir(parents=True, exist_ok=True)
    entries = []
    for cl in clients:
        for split, slides in (("train", cl.train), ("test", cl.test)):
            for s in slides:
                rel = os.path.join("bags", f"{s.slide_id}.fbag")
                write_bag(out / rel, s.features, s.label)
                entries.append(ManifestEntry(s.slide_id, cl.client_id, s.label, split, rel))
    write_manifest(out / "manifest.csv", entries)
    return entries


def write_synthetic(out_dir, slides: list[SyntheticSlide], split: str = "synthetic"):
    out = Path(out_dir)
    (out / "bags").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in slides:
        rel = os.path.join("bags", f"{s.slide_id}.fbag")
        write_bag(out / rel, s.features, s.label)
        entries.append(ManifestEntry(s.slide_id, s.origin, s.label, split, rel, s.source_slide_id))
    write_manifest(out / "manifest.csv", entries)
    return entries


def load_clients(manifest_path, class_count: int | None = None,
                 variants=("meanpool",), hidden_dims=(64,)) -> list[ClientState]:
    """Rebuild client states from a manifest of real slides."""
    entries = read_manifest(manifest_path)
    base = Path(manifest_path).parent
    order, grouped = [], {}
    for e in entries:
        if e.client_id not in grouped:
            order.append(e.client_id)
            grouped[e.client_id] = {"train": [], "test": []}
        try:
            x, label = read_bag(base / e.path)
        except ValueError as exc:
            raise ValueError(f"slide {e.slide_id}: {exc}") from exc
        grouped[e.client_id].setdefault(e.split, []).append(RealSlide(e.slide_id, label, x))
    if class_count is None:
        class_count = max(e.label for e in entries) + 1
    clients = []
    for i, cid in enumerate(order):
        g = grouped[cid]
        clients.append(ClientState(cid, g["train"], g["test"],
                                   variant=variants[i % len(variants)],
                                   hidden_dim=int(hidden_dims[i % len(hidden_dims)]),
                                   class_count=class_count))
    return clients
