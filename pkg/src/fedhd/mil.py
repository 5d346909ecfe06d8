"""Bag classifiers for multiple-instance learning with analytic gradients.

Two poolers are provided:

* ``meanpool``: ``z = mean_k b_k``
* ``gated``: gated attention, ``score_k = w . (tanh(V b_k) * sigmoid(U b_k))``,
  ``z = sum_k softmax(score)_k b_k``

Both feed a linear softmax head ``probs = softmax(W z + c)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .numeric import Adam, RngStream

PROB_FLOOR = 1e-7
VARIANTS = ("meanpool", "gated")
_VARIANT_TAG = {"meanpool": 0, "gated": 1}
_MAGIC = b"MILM"
_VERSION = 1


@dataclass
class MilModel:
    variant: str
    input_dim: int
    class_count: int
    hidden_dim: int = 64
    params: dict = field(default_factory=dict)

    def copy(self) -> "MilModel":
        return MilModel(self.variant, self.input_dim, self.class_count, self.hidden_dim,
                        {k: v.copy() for k, v in self.params.items()})

    @property
    def param_names(self) -> list[str]:
        return ["W", "c", "V", "U", "w"] if self.variant == "gated" else ["W", "c"]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in self.param_names])

    def with_flat(self, vec) -> "MilModel":
        out = self.copy()
        i = 0
        for k in self.param_names:
            n = out.params[k].size
            out.params[k] = np.asarray(vec[i:i + n], dtype=np.float64).reshape(out.params[k].shape)
            i += n
        return out


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    q: float = 0.7
    real_loss: str = "ce"
    synthetic_loss: str = "gce"

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def init_model(variant: str, input_dim: int, class_count: int, hidden_dim: int = 64,
               rng: RngStream | None = None) -> MilModel:
    """Zero biases; weights ~ N(0, 1/input_dim)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown MIL variant {variant!r}")
    gen = (rng or RngStream(0, 0)).generator()
    std = 1.0 / np.sqrt(input_dim)
    params = {
        "W": gen.normal(0.0, std, (class_count, input_dim)),
        "c": np.zeros(class_count),
    }
    if variant == "gated":
        params["V"] = gen.normal(0.0, std, (hidden_dim, input_dim))
        params["U"] = gen.normal(0.0, std, (hidden_dim, input_dim))
        params["w"] = gen.normal(0.0, 1.0 / np.sqrt(hidden_dim), hidden_dim)
    return MilModel(variant, input_dim, class_count, hidden_dim, params)


def _check_bag(model, bag):
    bag = np.asarray(bag, dtype=np.float64)
    if bag.ndim != 2 or bag.shape[0] == 0:
        raise ValueError("empty bag")
    if bag.shape[1] != model.input_dim:
        raise ValueError(f"bag has d={bag.shape[1]}, model expects {model.input_dim}")
    return bag


def _forward(model, bag):
    P = model.params
    cache = {}
    if model.variant == "gated":
        a = np.tanh(bag @ P["V"].T)
        g = special.expit(bag @ P["U"].T)
        scores = (a * g) @ P["w"]
        att = special.softmax(scores)
        z = att @ bag
        cache.update(a=a, g=g, att=att)
    else:
        att = None
        z = bag.mean(axis=0)
    probs = special.softmax(P["W"] @ z + P["c"])
    cache["z"] = z
    return probs, att, cache


def forward(model: MilModel, bag):
    """Return ``(probs, attention)``; attention is ``None`` for mean pooling."""
    probs, att, _ = _forward(model, _check_bag(model, bag))
    return probs, att


def predict_proba(model: MilModel, bags) -> np.ndarray:
    return np.array([forward(model, b)[0] for b in bags])


def _check_label(probs, label):
    if not 0 <= label < len(probs):
        raise ValueError(f"label {label} out of range for {len(probs)} classes")


def loss_ce(probs, label: int) -> float:
    _check_label(probs, label)
    return float(-np.log(max(probs[label], PROB_FLOOR)))


def loss_gce(probs, label: int, q: float) -> float:
    """Generalized cross-entropy ``(1 - p_y^q) / q``."""
    _check_label(probs, label)
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    return float((1.0 - max(probs[label], PROB_FLOOR) ** q) / q)


def loss_value(probs, label, loss_kind, q=0.7):
    return loss_ce(probs, label) if loss_kind == "ce" else loss_gce(probs, label, q)


def _dlogits(probs, label, loss_kind, q):
    py = probs[label]
    onehot = np.zeros_like(probs)
    onehot[label] = 1.0
    if py < PROB_FLOOR:
        # clamp is active: loss is flat in the logits
        return np.zeros_like(probs)
    if loss_kind == "ce":
        return probs - onehot
    if loss_kind == "gce":
        # dL/dp_y = -p_y^(q-1), dp_y/dlogits = p_y (e_y - p)
        return -(py ** q) * (onehot - probs)
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def backward(model: MilModel, bag, label: int, loss_kind: str = "ce", q: float = 0.7):
    """Exact parameter gradients of the chosen loss for one bag.

    Returns ``(loss, grads)`` with ``grads`` keyed like ``model.params``.
    """
    bag = _check_bag(model, bag)
    probs, att, cache = _forward(model, bag)
    loss = loss_value(probs, label, loss_kind, q)
    P = model.params
    delta = _dlogits(probs, label, loss_kind, q)
    z = cache["z"]
    grads = {"W": np.outer(delta, z), "c": delta}
    if model.variant == "gated":
        a, g = cache["a"], cache["g"]
        dz = P["W"].T @ delta
        datt = bag @ dz
        ds = att * (datt - att @ datt)
        h = a * g
        grads["w"] = ds @ h
        dh = ds[:, None] * P["w"][None, :]
        da = dh * g * (1.0 - a * a)
        dg = dh * a * g * (1.0 - g)
        grads["V"] = da.T @ bag
        grads["U"] = dg.T @ bag
    return loss, grads


def accuracy_on(model: MilModel, bags, labels) -> float:
    preds = np.argmax(predict_proba(model, bags), axis=1)
    return float(np.mean(preds == np.asarray(labels)))


def train(model: MilModel, bags, labels, cfg: TrainConfig, rng: RngStream,
          loss_kind: str | None = None):
    """Single-bag Adam updates over shuffled epochs.

    The permutation of epoch ``t`` comes from ``rng.child(t)``. Returns a
    trained copy and a history dict with per-epoch mean loss and training
    accuracy.
    """
    if len(bags) == 0:
        raise ValueError("empty training set")
    loss_kind = loss_kind or cfg.real_loss
    model = model.copy()
    opt = Adam(model.params, lr=cfg.learning_rate)
    hist = {"loss": [], "accuracy": []}
    for epoch in range(cfg.epochs):
        order = rng.child(epoch).generator().permutation(len(bags))
        losses = []
        for i in order:
            loss, grads = backward(model, bags[i], labels[i], loss_kind, cfg.q)
            losses.append(loss)
            opt.step(model.params, grads)
        hist["loss"].append(float(np.mean(losses)))
        hist["accuracy"].append(accuracy_on(model, bags, labels))
    return model, hist


def save_model(path, model: MilModel) -> None:
    """Binary checkpoint: magic, u16 version, u16 variant tag, u32 d/L/classes,
    then float64 little-endian parameters in ``param_names`` order."""
    header = _MAGIC + struct.pack("<HHIII", _VERSION, _VARIANT_TAG[model.variant],
                                  model.input_dim, model.hidden_dim, model.class_count)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(model.flat().astype("<f8").tobytes())


def load_model(path) -> MilModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a MIL model file")
    version, tag, d, L, n_classes = struct.unpack("<HHIII", data[4:20])
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    variant = {v: k for k, v in _VARIANT_TAG.items()}[tag]
    template = init_model(variant, d, n_classes, L)
    vec = np.frombuffer(data[20:], dtype="<f8")
    if vec.size != template.flat().size:
        raise ValueError(f"{path}: expected {template.flat().size} parameters, found {vec.size}")
    return template.with_flat(vec)
