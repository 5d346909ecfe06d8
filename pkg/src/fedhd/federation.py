"""Single-round federation: exchange synthetic slides once, then train each
client locally on real data with cross-client synthetic data phased in.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import metrics, mil
from .distill import DistillConfig, RealSlide, SyntheticSlide, distill_client, payload_report
from .numeric import Adam, RngStream, spawn_stream

log = logging.getLogger(__name__)

ARMS = ("local", "naive", "fedhd")


@dataclass
class ClientState:
    client_id: str
    train: list
    test: list
    variant: str = "meanpool"
    hidden_dim: int = 64
    class_count: int = 2
    synthetic: list = field(default_factory=list)

    def __post_init__(self):
        overlap = {s.slide_id for s in self.train} & {s.slide_id for s in self.test}
        if overlap:
            raise ValueError(f"client {self.client_id}: train/test share slides {sorted(overlap)[:3]}")

    @property
    def dim(self) -> int:
        return self.train[0].features.shape[1]


@dataclass
class GlobalPool:
    client_id: str
    slides: list

    def origins(self) -> set:
        return {s.origin for s in self.slides}


@dataclass
class CurriculumConfig:
    t0: int = 30
    q: float = 0.7
    trigger: str = "fixed"           # "fixed" | "plateau"
    patience: int = 5
    min_delta: float = 0.001
    synthetic_weight: float = 1.0
    class_balance: bool = False

    def __post_init__(self):
        if self.t0 < 0:
            raise ValueError("t0 must be >= 0")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if self.trigger not in ("fixed", "plateau"):
            raise ValueError(f"unknown curriculum trigger {self.trigger!r}")


@dataclass
class ProtocolConfig:
    seed: int = 0
    epochs: int = 50
    distill: DistillConfig = field(default_factory=DistillConfig)
    train: mil.TrainConfig = field(default_factory=mil.TrainConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    arms: tuple = ARMS
    threads: int = 1
    cbf: bool = True   # False: the fedhd arm falls back to naive concatenation


def aggregate_and_redistribute(clients: list[ClientState]) -> dict[str, GlobalPool]:
    """Pool for client c = synthetic slides of every other client."""
    for cl in clients:
        if not cl.synthetic:
            msg = f"client {cl.client_id} contributed no synthetic slides"
            log.warning(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    pools = {}
    for cl in clients:
        slides = [s for other in clients if other.client_id != cl.client_id
                  for s in other.synthetic]
        pools[cl.client_id] = GlobalPool(cl.client_id, slides)
    return pools


def check_exclusion(pools: dict[str, GlobalPool]) -> None:
    for cid, pool in pools.items():
        bad = [s.slide_id for s in pool.slides if s.origin == cid]
        if bad:
            raise AssertionError(f"pool of {cid} contains its own slides: {bad[:3]}")


def _bags(slides):
    return [s.features for s in slides], [s.label for s in slides]


def _synthetic_weights(pool_slides, class_count, balance):
    n = len(pool_slides)
    if not balance or n == 0:
        return np.ones(n)
    labels = np.array([s.label for s in pool_slides])
    freq = np.bincount(labels, minlength=class_count).astype(float)
    present = freq > 0
    w = np.zeros(class_count)
    w[present] = n / (present.sum() * freq[present])
    return w[labels]


def train_local(client: ClientState, synthetic: list, epochs: int, rng: RngStream,
                train_cfg: mil.TrainConfig | None = None, start_epoch: int | None = 0,
                synthetic_loss: str = "gce", q: float = 0.7, synthetic_weight: float = 1.0,
                plateau: tuple | None = None, class_balance: bool = False,
                record_params: bool = False):
    """Shared local-training loop behind every arm.

    Real bags always use cross-entropy. Synthetic bags join from epoch
    ``start_epoch`` (``None``: never, unless ``plateau=(patience, min_delta)``
    fires on real training accuracy). Epoch ``t`` shuffles real bags with
    ``rng.child(1, t)`` before activation and the union with ``rng.child(2, t)``
    after, so runs agree bit-for-bit until synthetic data enters.
    """
    train_cfg = train_cfg or mil.TrainConfig(epochs=max(epochs, 1))
    model = mil.init_model(client.variant, client.dim, client.class_count,
                           client.hidden_dim, rng.child(0))
    opt = Adam(model.params, lr=train_cfg.learning_rate)
    real_x, real_y = _bags(client.train)
    syn_x, syn_y = _bags(synthetic)
    syn_w = _synthetic_weights(synthetic, client.class_count, class_balance) * synthetic_weight
    n_real = len(real_x)
    if n_real == 0:
        raise ValueError(f"client {client.client_id} has no training slides")

    hist = {"loss": [], "accuracy": [], "active": [], "activation_epoch": None, "params": []}
    active = False
    best_acc, stale = -np.inf, 0
    for t in range(epochs):
        if not active and synthetic and start_epoch is not None and t >= start_epoch:
            active = True
        if active and hist["activation_epoch"] is None:
            hist["activation_epoch"] = t
        if active:
            order = rng.child(2, t).generator().permutation(n_real + len(syn_x))
        else:
            order = rng.child(1, t).generator().permutation(n_real)
        losses = []
        for i in order:
            if i < n_real:
                loss, grads = mil.backward(model, real_x[i], real_y[i], "ce", q)
                scale = 1.0
            else:
                j = i - n_real
                loss, grads = mil.backward(model, syn_x[j], syn_y[j], synthetic_loss, q)
                scale = syn_w[j]
            losses.append(loss)
            opt.step(model.params, grads, scale=scale)
        acc = mil.accuracy_on(model, real_x, real_y)
        hist["loss"].append(float(np.mean(losses)))
        hist["accuracy"].append(acc)
        hist["active"].append(active)
        if record_params:
            hist["params"].append(model.flat())
        if plateau is not None and not active and synthetic:
            patience, min_delta = plateau
            if acc > best_acc + min_delta:
                best_acc, stale = acc, 0
            else:
                stale += 1
            if stale >= patience:
                active = True
    return model, hist


def local_only_train(client, epochs, rng, train_cfg=None, record_params=False):
    return train_local(client, [], epochs, rng, train_cfg, start_epoch=None,
                       record_params=record_params)


def curriculum_train(client: ClientState, pool: GlobalPool, epochs: int,
                     cc: CurriculumConfig, rng: RngStream, train_cfg=None,
                     record_params=False):
    """Real slides with CE throughout; pool slides with GCE once the curriculum fires."""
    plateau = (cc.patience, cc.min_delta) if cc.trigger == "plateau" else None
    start = cc.t0 if cc.trigger == "fixed" else None
    return train_local(client, pool.slides, epochs, rng, train_cfg, start_epoch=start,
                       synthetic_loss="gce", q=cc.q, synthetic_weight=cc.synthetic_weight,
                       plateau=plateau, class_balance=cc.class_balance,
                       record_params=record_params)


def naive_concat_train(client: ClientState, pool: GlobalPool, epochs: int, rng: RngStream,
                       train_cfg=None):
    """Baseline: pool slides mixed in with cross-entropy from the first epoch."""
    return train_local(client, pool.slides, epochs, rng, train_cfg, start_epoch=0,
                       synthetic_loss="ce")


def synthetic_only_train(client: ClientState, synthetic: list, epochs: int, rng: RngStream,
                         train_cfg=None):
    """Train a fresh model on synthetic slides alone (cross-entropy)."""
    proxy = ClientState(client.client_id, list(synthetic), [], client.variant,
                        client.hidden_dim, client.class_count)
    return train_local(proxy, [], epochs, rng, train_cfg, start_epoch=None)


def evaluate_model(model: mil.MilModel, slides: list, class_count: int) -> dict:
    probs = mil.predict_proba(model, [s.features for s in slides])
    return metrics.evaluate(probs, [s.label for s in slides], class_count)


@dataclass
class FederationResult:
    rows: list
    averages: dict
    payload: dict
    pools: dict


def run_federation(clients: list[ClientState], protocol: ProtocolConfig) -> FederationResult:
    """Distill every client, exchange once, train each requested arm, evaluate.

    Clients keep their own synthetic slides in ``client.synthetic``. The
    training stream for client ``i`` is shared by all arms so that arms
    differ only in the data they see.
    """
    seed = protocol.seed
    needs_pool = any(a in ("naive", "fedhd") for a in protocol.arms)
    payload = {}
    if needs_pool or "synthetic-only" in protocol.arms:
        for i, cl in enumerate(clients):
            try:
                cl.synthetic = distill_client(cl.train, protocol.distill,
                                              master_seed=_mix(seed, 7, i),
                                              client_id=cl.client_id, threads=protocol.threads)
            except ValueError as exc:
                raise RuntimeError(f"client {cl.client_id}: distillation failed: {exc}") from exc
            payload[cl.client_id] = payload_report(cl.synthetic)
    pools = aggregate_and_redistribute(clients) if needs_pool else {}
    rows = []
    for i, cl in enumerate(clients):
        rng = spawn_stream(_mix(seed, 11, i), 0)
        for arm in protocol.arms:
            if arm == "local":
                model, _ = local_only_train(cl, protocol.epochs, rng, protocol.train)
            elif arm == "naive":
                model, _ = naive_concat_train(cl, pools[cl.client_id], protocol.epochs, rng,
                                              protocol.train)
            elif arm == "fedhd" and not protocol.cbf:
                model, _ = naive_concat_train(cl, pools[cl.client_id], protocol.epochs, rng,
                                              protocol.train)
            elif arm == "fedhd":
                model, _ = curriculum_train(cl, pools[cl.client_id], protocol.epochs,
                                            protocol.curriculum, rng, protocol.train)
            elif arm == "synthetic-only":
                model, _ = synthetic_only_train(cl, cl.synthetic, protocol.epochs, rng,
                                                protocol.train)
            else:
                raise ValueError(f"unknown arm {arm!r}")
            res = evaluate_model(model, cl.test, cl.class_count)
            rows.append({"client_id": cl.client_id, "arm": arm, "seed": seed, **res})
    return FederationResult(rows, weighted_averages(rows), payload, pools)


def weighted_averages(rows: list[dict]) -> dict:
    """Per arm: test-support weighted accuracy, MCC and AUC."""
    out = {}
    for arm in dict.fromkeys(r["arm"] for r in rows):
        sub = [r for r in rows if r["arm"] == arm]
        w = [r["support"] for r in sub]
        out[arm] = {k: metrics.weighted_average([r[k] for r in sub], w)
                    for k in ("accuracy", "mcc", "auc")}
    return out


def _mix(seed: int, tag: int, index: int) -> int:
    """Derive a child master seed without collisions across (tag, index)."""
    return int(np.random.SeedSequence([seed, tag, index]).generate_state(1, dtype=np.uint64)[0])
