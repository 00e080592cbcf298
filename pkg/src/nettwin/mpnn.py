"""Message-passing edge classifier, written from scratch on numpy.

Per layer, every directed edge produces an 8-dimensional message from the
states of its endpoints and the raw edge features; each vertex sums the
messages arriving on its in-edges and updates its hidden state.  After K
layers a readout maps [h_source, h_target, edge features] to four logits,
one per congestion class.  Gradients are exact reverse-mode derivatives,
verified against finite differences in the test suite.

Inputs are standardised per column (z-score across the bundle) at the model
boundary; feature bundles themselves stay raw.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .telemetry import FeatureBundle

HIDDEN_WIDTH = 8
N_CLASSES = 4
VERTEX_DIM = 3
EDGE_DIM = 3
WEIGHT_FORMAT = "nettwin-weights/1"


class CongestionClass(enum.IntEnum):
    HIGHLY_CONGESTED = 1
    MODERATELY_CONGESTED = 2
    BALANCED = 3
    UNCONGESTED = 4


def label_oracle(congestion_pct: float) -> CongestionClass:
    """Threshold a congestion percentage into the four classes.

    Quartile cut: >=75 highly congested, >=50 moderate, >=25 balanced,
    below 25 uncongested.  Boundaries belong to the class above them.
    """
    if not (0.0 <= congestion_pct <= 100.0):
        raise ValueError(f"congestion percentage out of range: {congestion_pct}")
    if congestion_pct >= 75.0:
        return CongestionClass.HIGHLY_CONGESTED
    if congestion_pct >= 50.0:
        return CongestionClass.MODERATELY_CONGESTED
    if congestion_pct >= 25.0:
        return CongestionClass.BALANCED
    return CongestionClass.UNCONGESTED


@dataclass
class ModelParams:
    layers: int
    hidden: int
    weights: dict[str, np.ndarray]
    seed: int
    history: list[tuple[int, float, float | None]] = field(default_factory=list)

    def copy(self) -> "ModelParams":
        return ModelParams(layers=self.layers, hidden=self.hidden,
                           weights={k: v.copy() for k, v in self.weights.items()},
                           seed=self.seed, history=list(self.history))


@dataclass
class TrainingSample:
    bundle: FeatureBundle
    labels: np.ndarray  # (E,) ints in 1..4
    provenance: dict = field(default_factory=dict)


def init_params(seed: int = 0, layers: int = 2, hidden: int = HIDDEN_WIDTH) -> ModelParams:
    """Seeded uniform [-0.1, 0.1] initialisation for every weight and bias."""
    if layers < 1:
        raise ValueError(f"need at least one message-passing layer, got {layers}")
    rng = np.random.default_rng(seed)
    weights: dict[str, np.ndarray] = {}

    def draw(name: str, shape: tuple[int, ...]):
        weights[name] = rng.uniform(-0.1, 0.1, size=shape)

    in_dim = VERTEX_DIM
    for l in range(layers):
        draw(f"msg{l}_w", (2 * in_dim + EDGE_DIM, hidden))
        draw(f"msg{l}_b", (hidden,))
        draw(f"upd{l}_w", (in_dim + hidden, hidden))
        draw(f"upd{l}_b", (hidden,))
        in_dim = hidden
    draw("out_w", (2 * hidden + EDGE_DIM, N_CLASSES))
    draw("out_b", (N_CLASSES,))
    return ModelParams(layers=layers, hidden=hidden, weights=weights, seed=seed)


def standardize_columns(m: np.ndarray) -> np.ndarray:
    """Column z-score; constant columns map to zero."""
    if m.size == 0:
        return m.astype(float)
    mu = m.mean(axis=0)
    sd = m.std(axis=0)
    safe = np.where(sd > 0, sd, 1.0)
    z = (m - mu) / safe
    return np.where(sd > 0, z, 0.0)


def _check_bundle(bundle: FeatureBundle):
    e = len(bundle.edge_list)
    v = len(bundle.vertex_ids)
    if bundle.x_vertices.shape != (v, VERTEX_DIM):
        raise ValueError(f"vertex features must be ({v}, {VERTEX_DIM}), "
                         f"got {bundle.x_vertices.shape}")
    if bundle.x_edges.shape != (e, EDGE_DIM):
        raise ValueError(f"edge features must be ({e}, {EDGE_DIM}), "
                         f"got {bundle.x_edges.shape}")
    if bundle.edge_index.shape != (2, e):
        raise ValueError(f"edge index must be (2, {e}), got {bundle.edge_index.shape}")


def _forward_cached(params: ModelParams, bundle: FeatureBundle):
    _check_bundle(bundle)
    w = params.weights
    src = bundle.edge_index[0]
    tgt = bundle.edge_index[1]
    n_v = len(bundle.vertex_ids)
    z_e = standardize_columns(bundle.x_edges)
    h = standardize_columns(bundle.x_vertices)
    caches = []
    for l in range(params.layers):
        m_in = np.concatenate([h[src], h[tgt], z_e], axis=1)
        m_pre = m_in @ w[f"msg{l}_w"] + w[f"msg{l}_b"]
        m = np.maximum(m_pre, 0.0)
        agg = np.zeros((n_v, params.hidden))
        np.add.at(agg, tgt, m)
        u_in = np.concatenate([h, agg], axis=1)
        u_pre = u_in @ w[f"upd{l}_w"] + w[f"upd{l}_b"]
        h_next = np.maximum(u_pre, 0.0)
        caches.append({"h": h, "m_in": m_in, "m": m, "u_in": u_in, "h_next": h_next})
        h = h_next
    r_in = np.concatenate([h[src], h[tgt], z_e], axis=1)
    logits = r_in @ w["out_w"] + w["out_b"]
    return logits, {"caches": caches, "r_in": r_in, "src": src, "tgt": tgt,
                    "n_v": n_v, "h_final": h}


def forward(params: ModelParams, bundle: FeatureBundle) -> np.ndarray:
    """Logits of shape (directed edges, 4)."""
    logits, _ = _forward_cached(params, bundle)
    return logits


def _labels_array(labels) -> np.ndarray:
    arr = np.asarray([int(l) for l in labels], dtype=int)
    if arr.size and (arr.min() < 1 or arr.max() > N_CLASSES):
        raise ValueError("labels must be congestion classes 1..4")
    return arr


def _edge_weights(y: np.ndarray, class_weights: np.ndarray | None) -> np.ndarray:
    if class_weights is None:
        return np.ones(len(y))
    return np.asarray(class_weights, dtype=float)[y - 1]


def inverse_frequency_weights(samples: list["TrainingSample"]) -> np.ndarray:
    """Per-class weights proportional to 1/frequency, normalised to mean 1."""
    counts = np.zeros(N_CLASSES)
    for s in samples:
        for l in _labels_array(s.labels):
            counts[l - 1] += 1
    counts = np.maximum(counts, 1.0)
    w = counts.sum() / counts
    return w * (N_CLASSES / w.sum())


def loss(logits: np.ndarray, labels, class_weights: np.ndarray | None = None) -> float:
    """Sum over edges of cross-entropy against one-hot class labels."""
    y = _labels_array(labels)
    if logits.shape[0] != y.shape[0]:
        raise ValueError(f"logits rows {logits.shape[0]} != labels {y.shape[0]}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    picked = logits[np.arange(len(y)), y - 1]
    return float(((lse - picked) * _edge_weights(y, class_weights)).sum())


def grad(params: ModelParams, bundle: FeatureBundle, labels,
         class_weights: np.ndarray | None = None) -> tuple[dict[str, np.ndarray], float]:
    """Exact gradients of the summed cross-entropy w.r.t. every weight."""
    y = _labels_array(labels)
    logits, ctx = _forward_cached(params, bundle)
    if logits.shape[0] != y.shape[0]:
        raise ValueError(f"logits rows {logits.shape[0]} != labels {y.shape[0]}")
    w = params.weights
    src, tgt, n_v = ctx["src"], ctx["tgt"], ctx["n_v"]

    ew = _edge_weights(y, class_weights)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    dlogits = probs.copy()
    dlogits[np.arange(len(y)), y - 1] -= 1.0
    dlogits *= ew[:, None]

    grads: dict[str, np.ndarray] = {}
    r_in = ctx["r_in"]
    grads["out_w"] = r_in.T @ dlogits
    grads["out_b"] = dlogits.sum(axis=0)
    d_r_in = dlogits @ w["out_w"].T
    hid = params.hidden
    dh = np.zeros((n_v, hid))
    np.add.at(dh, src, d_r_in[:, :hid])
    np.add.at(dh, tgt, d_r_in[:, hid:2 * hid])

    shifted_loss = float(((np.log(exp.sum(axis=1)) + logits.max(axis=1)
                           - logits[np.arange(len(y)), y - 1]) * ew).sum())

    for l in reversed(range(params.layers)):
        cache = ctx["caches"][l]
        h_prev = cache["h"]
        d_pre = dh * (cache["h_next"] > 0)
        grads[f"upd{l}_w"] = cache["u_in"].T @ d_pre
        grads[f"upd{l}_b"] = d_pre.sum(axis=0)
        d_u_in = d_pre @ w[f"upd{l}_w"].T
        d_prev = d_u_in[:, :h_prev.shape[1]].copy()
        d_agg = d_u_in[:, h_prev.shape[1]:]
        d_m = d_agg[tgt]
        d_m_pre = d_m * (cache["m"] > 0)
        grads[f"msg{l}_w"] = cache["m_in"].T @ d_m_pre
        grads[f"msg{l}_b"] = d_m_pre.sum(axis=0)
        d_m_in = d_m_pre @ w[f"msg{l}_w"].T
        dim = h_prev.shape[1]
        np.add.at(d_prev, src, d_m_in[:, :dim])
        np.add.at(d_prev, tgt, d_m_in[:, dim:2 * dim])
        dh = d_prev

    return grads, shifted_loss


def classify(params: ModelParams, bundle: FeatureBundle) -> list[CongestionClass]:
    """Argmax over logits; exact ties resolve toward the more congested class."""
    logits = forward(params, bundle)
    picks = np.argmax(logits, axis=1)  # first maximum, i.e. the lower class number
    return [CongestionClass(int(p) + 1) for p in picks]


LOSS_CEILING = 1e6


def train(samples: list[TrainingSample], *, lr: float = 0.01, epochs: int = 200,
          batch: int = 1, seed: int = 0, layers: int = 2,
          balance_classes: bool = False,
          val_samples: list[TrainingSample] | None = None) -> ModelParams:
    """Full-batch-per-graph gradient descent over the sample set.

    The order of graphs is reshuffled each epoch from the given seed, so a
    fixed (dataset, hyperparameters, seed) triple always yields identical
    weights.  `balance_classes` switches on inverse-frequency edge weights.
    Raises if the loss diverges past LOSS_CEILING.
    """
    if not samples:
        raise ValueError("training needs at least one sample")
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    params = init_params(seed=seed, layers=layers)
    rng = np.random.default_rng(seed)
    class_weights = inverse_frequency_weights(samples) if balance_classes else None
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        losses = []
        for i in range(0, len(order), batch):
            group = [samples[j] for j in order[i:i + batch]]
            acc: dict[str, np.ndarray] | None = None
            for s in group:
                g, l = grad(params, s.bundle, s.labels, class_weights)
                losses.append(l)
                if l > LOSS_CEILING:
                    raise RuntimeError(
                        f"training diverged at epoch {epoch}: loss {l:.3e} "
                        f"exceeds {LOSS_CEILING:.0e}")
                if acc is None:
                    acc = g
                else:
                    for k in acc:
                        acc[k] += g[k]
            assert acc is not None
            scale = lr / len(group)
            for k, v in acc.items():
                params.weights[k] -= scale * v
        train_loss = float(np.mean(losses)) if losses else 0.0
        val_loss = None
        if val_samples:
            val_loss = float(np.mean([
                loss(forward(params, s.bundle), s.labels) for s in val_samples]))
        params.history.append((epoch, train_loss, val_loss))
    return params


def evaluate_accuracy(params: ModelParams, samples: list[TrainingSample]) -> tuple[float, int]:
    """Edge-level accuracy and the number of labelled edges scored."""
    correct = 0
    total = 0
    for s in samples:
        preds = classify(params, s.bundle)
        y = _labels_array(s.labels)
        correct += sum(1 for p, t in zip(preds, y) if int(p) == int(t))
        total += len(y)
    return (correct / total if total else 0.0), total


# ---------------------------------------------------------------------------
# serialization

def params_to_json(params: ModelParams) -> str:
    return json.dumps({
        "format": WEIGHT_FORMAT,
        "layers": params.layers,
        "hidden": params.hidden,
        "seed": params.seed,
        "weights": {k: v.tolist() for k, v in sorted(params.weights.items())},
    }, sort_keys=True)


def params_from_json(text: str) -> ModelParams:
    d = json.loads(text)
    if d.get("format") != WEIGHT_FORMAT:
        raise ValueError(f"unsupported weight file format: {d.get('format')}")
    return ModelParams(layers=d["layers"], hidden=d["hidden"], seed=d["seed"],
                       weights={k: np.asarray(v, dtype=float)
                                for k, v in d["weights"].items()})


def history_to_csv(params: ModelParams, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in params.history:
            w.writerow([epoch, repr(tr), "" if va is None else repr(va)])


def samples_to_json(samples: list[TrainingSample]) -> str:
    return json.dumps([
        {"bundle": json.loads(s.bundle.to_json()),
         "labels": [int(l) for l in s.labels],
         "provenance": s.provenance}
        for s in samples
    ], sort_keys=True)


def samples_from_json(text: str) -> list[TrainingSample]:
    out = []
    for d in json.loads(text):
        bundle = FeatureBundle.from_json(json.dumps(d["bundle"]))
        out.append(TrainingSample(bundle=bundle,
                                  labels=np.asarray(d["labels"], dtype=int),
                                  provenance=d.get("provenance", {})))
    return out
