"""Boosted ensemble of small mixed-activation networks for slice classification.

Each component network has two hidden layers.  The first holds 15 sigmoid,
5 identity and 15 radial units, the second 10 sigmoid and 10 radial units,
followed by a softmax output.  A radial unit computes ``exp(-z**2)`` of its
pre-activation.

Components are trained one after another (SAMME multiclass boosting):
misclassified slices are up-weighted before the next component is fitted,
and each component's vote is ``log((1 - err) / err) + log(C - 1)``, clamped
at zero.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .confmap import Dataset, LabelSpace, ScanRecord, SliceRecord
from .featsel import FeatureTable

logger = logging.getLogger(__name__)

LAYER1 = (15, 5, 15)  # sigmoid, identity, radial
LAYER2 = (10, 0, 10)

_ERR_FLOOR = 1e-10


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 150
    penalty: float = 1e-4
    batch_size: int | None = 32
    n_components: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.penalty < 0:
            raise ValueError("penalty must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None (full batch)")
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def radial(z):
    return np.exp(-z * z)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(z, counts):
    ns, ni, _ = counts
    out = np.empty_like(z)
    out[:, :ns] = sigmoid(z[:, :ns])
    out[:, ns : ns + ni] = z[:, ns : ns + ni]
    out[:, ns + ni :] = radial(z[:, ns + ni :])
    return out


def _activate_grad(z, h, counts):
    ns, ni, _ = counts
    d = np.empty_like(z)
    s = h[:, :ns]
    d[:, :ns] = s * (1.0 - s)
    d[:, ns : ns + ni] = 1.0
    d[:, ns + ni :] = -2.0 * z[:, ns + ni :] * h[:, ns + ni :]
    return d


@dataclass
class ComponentNet:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    layer1: tuple[int, int, int] = LAYER1
    layer2: tuple[int, int, int] = LAYER2

    PARAMS = ("W1", "b1", "W2", "b2", "W3", "b3")

    @property
    def n_inputs(self) -> int:
        return self.W1.shape[0]

    @property
    def n_classes(self) -> int:
        return self.W3.shape[1]

    def params(self) -> list[np.ndarray]:
        return [getattr(self, p) for p in self.PARAMS]

    @classmethod
    def init(cls, n_inputs, n_classes, rng, layer1=LAYER1, layer2=LAYER2) -> ComponentNet:
        h1, h2 = sum(layer1), sum(layer2)

        def glorot(fan_in, fan_out):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=(fan_in, fan_out))

        return cls(
            glorot(n_inputs, h1), np.zeros(h1),
            glorot(h1, h2), np.zeros(h2),
            glorot(h2, n_classes), np.zeros(n_classes),
            tuple(layer1), tuple(layer2),
        )

    @classmethod
    def zeros(cls, n_inputs, n_classes, layer1=LAYER1, layer2=LAYER2) -> ComponentNet:
        h1, h2 = sum(layer1), sum(layer2)
        return cls(
            np.zeros((n_inputs, h1)), np.zeros(h1),
            np.zeros((h1, h2)), np.zeros(h2),
            np.zeros((h2, n_classes)), np.zeros(n_classes),
            tuple(layer1), tuple(layer2),
        )


def _forward_cache(net: ComponentNet, X):
    z1 = X @ net.W1 + net.b1
    h1 = _activate(z1, net.layer1)
    z2 = h1 @ net.W2 + net.b2
    h2 = _activate(z2, net.layer2)
    p = softmax(h2 @ net.W3 + net.b3)
    return z1, h1, z2, h2, p


def forward(net: ComponentNet, x) -> np.ndarray:
    """Class probabilities for one feature vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != net.n_inputs:
        raise ValueError(f"expected {net.n_inputs} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    p = _forward_cache(net, X)[-1]
    return p[0] if single else p


def loss_and_grad(net: ComponentNet, X, y, w, penalty: float):
    """Weighted cross-entropy plus ``penalty / 2 * sum(W**2)`` and its gradient.

    ``w`` multiplies each sample's negative log-likelihood.  Biases are not
    penalized.  Returns ``(loss, [dW1, db1, dW2, db2, dW3, db3])``.
    """
    z1, h1, z2, h2, p = _forward_cache(net, X)
    n = X.shape[0]
    rows = np.arange(n)
    nll = -np.log(np.clip(p[rows, y], 1e-300, None))
    weights = (net.W1, net.W2, net.W3)
    loss = float(w @ nll) + 0.5 * penalty * sum(float((W * W).sum()) for W in weights)

    dz3 = p.copy()
    dz3[rows, y] -= 1.0
    dz3 *= w[:, None]
    dW3 = h2.T @ dz3 + penalty * net.W3
    db3 = dz3.sum(axis=0)
    dz2 = (dz3 @ net.W3.T) * _activate_grad(z2, h2, net.layer2)
    dW2 = h1.T @ dz2 + penalty * net.W2
    db2 = dz2.sum(axis=0)
    dz1 = (dz2 @ net.W2.T) * _activate_grad(z1, h1, net.layer1)
    dW1 = X.T @ dz1 + penalty * net.W1
    db1 = dz1.sum(axis=0)
    return loss, [dW1, db1, dW2, db2, dW3, db3]


def train_component(net: ComponentNet, X, y, sample_weight, cfg: TrainConfig, rng) -> ComponentNet:
    """Plain (mini-batch) gradient descent on the weighted objective.

    The objective is ``sum_i w_i * nll_i`` with ``sum(w) == 1``; a batch of
    size ``b`` uses the unbiased estimate with per-sample weight ``n * w_i / b``.
    """
    n = X.shape[0]
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    params = net.params()
    for _ in range(cfg.epochs):
        idx = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            b = idx[start : start + bs]
            _, grads = loss_and_grad(net, X[b], y[b], sample_weight[b] * (n / b.size), cfg.penalty)
            for prm, g in zip(params, grads):
                prm -= cfg.learning_rate * g
    return net


def samme_alpha(err: float, n_classes: int) -> float:
    """Component vote ``log((1 - err) / err) + log(C - 1)``, clamped at zero."""
    err = min(max(err, _ERR_FLOOR), 1.0)
    if err >= 1.0 - 1.0 / n_classes:
        return 0.0
    return max(0.0, float(np.log((1.0 - err) / err) + np.log(n_classes - 1)))


@dataclass
class BoostEnsemble:
    components: list[ComponentNet]
    alphas: np.ndarray
    n_classes: int
    x_mean: np.ndarray
    x_scale: np.ndarray
    classes: tuple[str, ...] | None = None
    history: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        first = self.components[0]
        return {
            "architecture": {
                "n_inputs": first.n_inputs,
                "n_classes": self.n_classes,
                "layer1": {"sigmoid": first.layer1[0], "identity": first.layer1[1], "radial": first.layer1[2]},
                "layer2": {"sigmoid": first.layer2[0], "identity": first.layer2[1], "radial": first.layer2[2]},
                "output": "softmax",
            },
            "classes": None if self.classes is None else list(self.classes),
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "component_weights": [float(a) for a in self.alphas],
            "components": [
                {p: np.asarray(getattr(c, p)).ravel().tolist() for p in ComponentNet.PARAMS}
                for c in self.components
            ],
            "history": self.history,
        }

    @classmethod
    def from_json(cls, obj) -> BoostEnsemble:
        arch = obj["architecture"]
        l1 = tuple(arch["layer1"][k] for k in ("sigmoid", "identity", "radial"))
        l2 = tuple(arch["layer2"][k] for k in ("sigmoid", "identity", "radial"))
        d, C = arch["n_inputs"], arch["n_classes"]
        shapes = {
            "W1": (d, sum(l1)), "b1": (sum(l1),),
            "W2": (sum(l1), sum(l2)), "b2": (sum(l2),),
            "W3": (sum(l2), C), "b3": (C,),
        }
        comps = [
            ComponentNet(**{p: np.array(c[p], dtype=np.float64).reshape(shapes[p]) for p in ComponentNet.PARAMS},
                         layer1=l1, layer2=l2)
            for c in obj["components"]
        ]
        classes = obj.get("classes")
        return cls(
            comps,
            np.array(obj["component_weights"], dtype=np.float64),
            C,
            np.array(obj["x_mean"], dtype=np.float64),
            np.array(obj["x_scale"], dtype=np.float64),
            None if classes is None else tuple(classes),
            obj.get("history", []),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json()) + "\n"

    @classmethod
    def loads(cls, text: str) -> BoostEnsemble:
        return cls.from_json(json.loads(text))


def train_boost(X, y, n_classes: int, cfg: TrainConfig | None = None, classes=None) -> BoostEnsemble:
    """Fit ``cfg.n_components`` networks with SAMME sample reweighting.

    A component whose weighted error reaches ``1 - 1/C`` gets vote 0 and the
    sample weights are reset to uniform.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    if np.unique(y).size < 2:
        raise ValueError("training needs at least two classes present")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("labels outside 0..n_classes-1")
    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0)
    x_scale[x_scale == 0] = 1.0
    Xs = (X - x_mean) / x_scale

    n = X.shape[0]
    w = np.full(n, 1.0 / n)
    comps, alphas, history = [], [], []
    for m in range(cfg.n_components):
        rng = np.random.default_rng([cfg.seed, m])
        net = ComponentNet.init(X.shape[1], n_classes, rng)
        train_component(net, Xs, y, w, cfg, rng)
        miss = np.argmax(forward(net, Xs), axis=1) != y
        err = float(w @ miss)
        alpha = samme_alpha(err, n_classes)
        if alpha == 0.0:
            w = np.full(n, 1.0 / n)
        elif miss.any():
            w = w * np.exp(alpha * miss)
            w /= w.sum()
        logger.debug("component %d: weighted error %.4f, vote %.4f", m, err, alpha)
        comps.append(net)
        alphas.append(alpha)
        history.append({"component": m, "weighted_error": err, "alpha": alpha})
    return BoostEnsemble(comps, np.array(alphas), n_classes, x_mean, x_scale,
                         None if classes is None else tuple(classes), history)


def train_boost_table(t: FeatureTable, cfg: TrainConfig | None = None, label_space: LabelSpace | None = None):
    space = label_space or LabelSpace()
    y = t.label_indices(space.classes)
    return train_boost(t.X, y, space.C, cfg, space.classes)


def ensemble_proba(e: BoostEnsemble, X) -> np.ndarray:
    """Vote-weighted average of component softmax outputs."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xs = (X - e.x_mean) / e.x_scale
    total = e.alphas.sum()
    votes = e.alphas / total if total > 0 else np.full(len(e.components), 1.0 / len(e.components))
    out = np.zeros((X.shape[0], e.n_classes))
    for a, net in zip(votes, e.components):
        if a > 0:
            out += a * forward(net, Xs)
    return out


def predict_map(e: BoostEnsemble, t: FeatureTable, label_space: LabelSpace | None = None) -> Dataset:
    """Confidence map: per-slice ensemble probabilities grouped into scans."""
    if not t.sample_ids or any(len(s) != 2 or not s[0] for s in t.sample_ids):
        raise ValueError("feature table rows lack scan/slice identifiers")
    space = label_space or (LabelSpace(e.classes) if e.classes else LabelSpace())
    P = ensemble_proba(e, t.X)
    order, slices, labels = [], {}, {}
    for i, (scan_id, slice_id) in enumerate(t.sample_ids):
        lab = t.labels[i] if t.labels is not None else None
        if scan_id not in slices:
            order.append(scan_id)
            slices[scan_id] = []
            labels[scan_id] = lab
        elif labels[scan_id] != lab:
            raise ValueError(f"scan {scan_id!r} has slices with different labels")
        slices[scan_id].append(SliceRecord(slice_id, tuple(P[i])))
    return Dataset(space, tuple(ScanRecord(s, tuple(slices[s]), labels[s]) for s in order))
