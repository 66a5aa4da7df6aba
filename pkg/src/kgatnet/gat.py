"""Multi-head graph attention network over the aggregated graph, trained
with hand-rolled Adam and early stopping on validation accuracy.

Everything is numpy float64.  The graph lives in edge-list form sorted by
destination, so per-node softmax and aggregation reduce to `np.*.reduceat`
over contiguous segments; self-loops guarantee every segment is non-empty.
Heads are combined by averaging (not concatenation), and the per-essay
classifier input is the concatenation of every attention layer's output,
optionally extended with a fixed per-essay embedding vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    MissingEmbedding,
    NonFiniteLoss,
    ShapeMismatch,
)

LEAKY_SLOPE = 0.2
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 3e-4
    patience: int = 10
    validation_split: float = 0.1
    heads_per_layer: int = 8
    hidden_units: int = 128
    dense_units: int = 128
    attention_layers: int = 5
    weight_decay: float = 0.0
    seed: int = 42
    enriched: bool = False

    def __post_init__(self):
        for name in ("epochs", "batch_size", "heads_per_layer", "hidden_units",
                     "dense_units", "attention_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0.0 < self.validation_split < 1.0:
            raise ConfigError("validation_split must be in (0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


# --- activations --------------------------------------------------------

def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(pre, out):
    # elu'(x) = 1 for x > 0, elu(x) + 1 otherwise
    return np.where(pre > 0, 1.0, out + 1.0)


def softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def log_softmax_rows(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


# --- graph tensors -------------------------------------------------------

@dataclass(frozen=True)
class GraphTensors:
    """Directed edge list (both directions of every undirected edge plus one
    self-loop per node), sorted by (dst, src).  seg_starts[i] is the offset
    of node i's incoming-edge segment."""

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    seg_starts: np.ndarray
    essay_idx: np.ndarray

    @classmethod
    def from_edges(cls, n_nodes, index_pairs, essay_idx):
        src, dst = [], []
        for i, j in index_pairs:
            if i == j:
                continue
            src += [i, j]
            dst += [j, i]
        src += list(range(n_nodes))
        dst += list(range(n_nodes))
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        order = np.lexsort((src, dst))
        src, dst = src[order], dst[order]
        seg_starts = np.searchsorted(dst, np.arange(n_nodes))
        return cls(n_nodes, src, dst, seg_starts,
                   np.asarray(essay_idx, dtype=np.int64))

    @property
    def n_essays(self) -> int:
        return len(self.essay_idx)


def tensors_from_aggregated(agg) -> GraphTensors:
    n_ent = len(agg.entity_nodes)
    essay_idx = np.arange(n_ent, agg.n_nodes)
    return GraphTensors.from_edges(agg.n_nodes, sorted(agg.index_edges()), essay_idx)


def segment_softmax(scores, dst, seg_starts):
    """Softmax of `scores` within each destination segment, max-stabilized."""
    seg_max = np.maximum.reduceat(scores, seg_starts)
    ez = np.exp(scores - seg_max[dst])
    denom = np.add.reduceat(ez, seg_starts)
    return ez / denom[dst]


# --- single-mechanism operations (also the unit-test surface) -----------

def raw_attention_score(h_i, h_j, W, a):
    """e_ij = LeakyReLU(a . [W h_i || W h_j]) for one destination/neighbor pair."""
    fh = W.shape[0]
    if a.shape != (2 * fh,):
        raise ShapeMismatch(f"attention vector must have length {2 * fh}")
    if h_i.shape != (W.shape[1],) or h_j.shape != (W.shape[1],):
        raise ShapeMismatch("node feature width does not match W")
    pre = a[:fh] @ (W @ h_i) + a[fh:] @ (W @ h_j)
    return float(leaky_relu(pre))


def normalize_scores(scores):
    """1-D softmax over one neighborhood."""
    scores = np.asarray(scores, dtype=np.float64)
    ez = np.exp(scores - scores.max())
    return ez / ez.sum()


def aggregate_head(alpha, wh_neighbors, activation=elu):
    """sigma( sum_j alpha_j (W h_j) ) for one node and one head."""
    return activation(alpha @ wh_neighbors)


def _tree_sum(arrays):
    """Pairwise-tree summation: bitwise-exact scaling for power-of-two
    counts of identical addends, better rounding behaviour in general."""
    items = list(arrays)
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def attention_layer_forward(H, tensors, W_list, a_list):
    """One multi-head layer: per-head attention sums averaged, then ELU."""
    src, dst, seg = tensors.src, tensors.dst, tensors.seg_starts
    head_sums, head_caches = [], []
    for W, a in zip(W_list, a_list):
        fh = W.shape[0]
        Wh = H @ W.T
        pre = (Wh @ a[:fh])[dst] + (Wh @ a[fh:])[src]
        alpha = segment_softmax(leaky_relu(pre), dst, seg)
        head_sums.append(np.add.reduceat(alpha[:, None] * Wh[src], seg, axis=0))
        head_caches.append((Wh, pre, alpha))
    avg = _tree_sum(head_sums) / len(W_list)
    out = elu(avg)
    return out, (H, avg, out, head_caches)


def attention_layer_backward(dOut, cache, tensors, W_list, a_list):
    """Returns gradient wrt the layer input plus per-head (dW, da) lists."""
    H, avg, out, head_caches = cache
    src, dst, seg = tensors.src, tensors.dst, tensors.seg_starts
    dHeadSum = (dOut * _elu_grad(avg, out)) / len(W_list)
    dH = np.zeros_like(H)
    dWs, das = [], []
    for (W, a, (Wh, pre, alpha)) in zip(W_list, a_list, head_caches):
        fh = W.shape[0]
        m = dHeadSum[dst]                                   # (E, F')
        dalpha = np.einsum("ef,ef->e", m, Wh[src])
        dWh = np.zeros_like(Wh)
        np.add.at(dWh, src, alpha[:, None] * m)
        # softmax backward within each destination segment
        t = alpha * dalpha
        de = alpha * (dalpha - np.add.reduceat(t, seg)[dst])
        dpre = de * np.where(pre > 0, 1.0, LEAKY_SLOPE)
        dd = np.add.reduceat(dpre, seg)                     # per-destination term
        ds = np.zeros(H.shape[0])
        np.add.at(ds, src, dpre)
        das.append(np.concatenate([Wh.T @ dd, Wh.T @ ds]))
        dWh += dd[:, None] * a[:fh] + ds[:, None] * a[fh:]
        dWs.append(dWh.T @ H)
        dH += dWh @ W
    return dH, dWs, das


def multi_head_layer(H, tensors, W_list, a_list):
    out, _ = attention_layer_forward(H, tensors, W_list, a_list)
    return out


# --- full model ----------------------------------------------------------

@dataclass
class GatModel:
    n_features: int
    dense_units: int
    hidden_units: int
    heads: int
    n_layers: int
    embed_dim: int  # 0 when not enriched
    params: dict[str, np.ndarray] = field(repr=False)

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}


def glorot(rng, shape, fan_in=None, fan_out=None):
    if fan_in is None:
        fan_in = shape[-1]
    if fan_out is None:
        fan_out = shape[0]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def new_model(n_features, config: TrainConfig, embed_dim=0, rng=None) -> GatModel:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    D, Hd = config.dense_units, config.hidden_units
    L, K = config.heads_per_layer, config.attention_layers
    params = {
        "proj.W": glorot(rng, (D, n_features)),
        "proj.b": np.zeros(D),
    }
    in_width = D
    for k in range(K):
        for l in range(L):
            params[f"att{k}.h{l}.W"] = glorot(rng, (Hd, in_width))
            params[f"att{k}.h{l}.a"] = glorot(rng, (2 * Hd,), fan_in=2 * Hd, fan_out=1)
        in_width = Hd
    clf_in = K * Hd + embed_dim
    params["clf.W"] = glorot(rng, (2, clf_in))
    params["clf.b"] = np.zeros(2)
    return GatModel(n_features, D, Hd, L, K, embed_dim, params)


def _layer_params(model, k):
    W_list = [model.params[f"att{k}.h{l}.W"] for l in range(model.heads)]
    a_list = [model.params[f"att{k}.h{l}.a"] for l in range(model.heads)]
    return W_list, a_list


def _forward(model, tensors, X, embeddings):
    if X.shape != (tensors.n_nodes, model.n_features):
        raise ShapeMismatch(
            f"features {X.shape} vs graph ({tensors.n_nodes}, {model.n_features})"
        )
    p = model.params
    pre0 = np.asarray(X @ p["proj.W"].T) + p["proj.b"]
    H = elu(pre0)
    caches, outs = [], []
    Hk = H
    for k in range(model.n_layers):
        Hk, cache = attention_layer_forward(Hk, tensors, *_layer_params(model, k))
        caches.append(cache)
        outs.append(Hk)
    parts = [o[tensors.essay_idx] for o in outs]
    if model.embed_dim:
        if embeddings is None:
            raise MissingEmbedding("model is enriched but no embeddings given")
        if embeddings.shape != (tensors.n_essays, model.embed_dim):
            raise ShapeMismatch(
                f"embeddings {embeddings.shape} vs ({tensors.n_essays}, {model.embed_dim})"
            )
        parts.append(embeddings)
    elif embeddings is not None:
        raise ShapeMismatch("model was not built for embeddings")
    concat = np.concatenate(parts, axis=1) if parts else np.zeros((0, 0))
    logits = concat @ p["clf.W"].T + p["clf.b"]
    return logits, concat, caches, pre0, H


def forward(model, tensors, X, embeddings=None):
    """Per-essay class probabilities, rows summing to 1."""
    logits, *_ = _forward(model, tensors, X, embeddings)
    return softmax_rows(logits)


def loss_and_gradients(model, tensors, X, batch_positions, targets, embeddings=None,
                       weight_decay=0.0):
    """Mean binary cross-entropy over the batch (positions index the essay
    axis) and the gradient for every parameter.  `weight_decay` adds an L2
    penalty on every non-bias parameter (the corpora are small enough that
    unregularized training memorizes the batch)."""
    batch = np.asarray(batch_positions, dtype=np.int64)
    y = np.asarray(targets, dtype=np.int64)
    if len(np.unique(batch)) != len(batch):
        raise ValueError("batch positions must be unique")
    if batch.shape != y.shape:
        raise ShapeMismatch("batch and targets must align")

    logits, concat, caches, pre0, H0 = _forward(model, tensors, X, embeddings)
    B = len(batch)
    logp = log_softmax_rows(logits[batch])
    loss = -logp[np.arange(B), y].mean()
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss diverged: {loss}")

    dlogits = np.zeros_like(logits)
    dlogits[batch] = np.exp(logp)
    dlogits[batch, y] -= 1.0
    dlogits[batch] /= B

    p = model.params
    grads = {
        "clf.W": dlogits.T @ concat,
        "clf.b": dlogits.sum(axis=0),
    }
    dconcat = dlogits @ p["clf.W"]

    Hd = model.hidden_units
    dH_next = None
    for k in reversed(range(model.n_layers)):
        dOut = np.zeros((tensors.n_nodes, Hd))
        dOut[tensors.essay_idx] += dconcat[:, k * Hd : (k + 1) * Hd]
        if dH_next is not None:
            dOut += dH_next
        W_list, a_list = _layer_params(model, k)
        dH_next, dWs, das = attention_layer_backward(dOut, caches[k], tensors, W_list, a_list)
        for l in range(model.heads):
            grads[f"att{k}.h{l}.W"] = dWs[l]
            grads[f"att{k}.h{l}.a"] = das[l]

    dpre0 = dH_next * _elu_grad(pre0, H0)
    grads["proj.W"] = np.asarray((X.T @ dpre0)).T
    grads["proj.b"] = dpre0.sum(axis=0)

    if weight_decay:
        for name, value in model.params.items():
            if name.endswith(".b"):
                continue
            loss = loss + weight_decay * float(np.sum(value * value))
            grads[name] += 2.0 * weight_decay * value
    return float(loss), grads


def predict(model, tensors, X, positions=None, embeddings=None):
    """Binary predictions (argmax; an exact tie goes to class 0)."""
    probs = forward(model, tensors, X, embeddings)
    if positions is not None:
        probs = probs[np.asarray(positions, dtype=np.int64)]
    return np.argmax(probs, axis=1)


# --- Adam ---------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params, grads, state: AdamState, lr,
              beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """In-place Adam update with bias correction."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for key, g in grads.items():
        m, v = state.m[key], state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[key] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# --- training loop -------------------------------------------------------

def evaluate_split(model, tensors, X, positions, y, embeddings=None):
    """(mean cross-entropy, accuracy) on the given essay positions."""
    logits, *_ = _forward(model, tensors, X, embeddings)
    pos = np.asarray(positions, dtype=np.int64)
    logp = log_softmax_rows(logits[pos])
    loss = float(-logp[np.arange(len(pos)), np.asarray(y)].mean())
    acc = float((np.argmax(logp, axis=1) == np.asarray(y)).mean())
    return loss, acc


def train_trait(tensors, X, y, config: TrainConfig,
                train_idx=None, val_idx=None, embeddings=None, seed=None):
    """Train one binary trait classifier transductively.

    `train_idx` are essay positions whose labels may be used; when `val_idx`
    is not given, `validation_split` of them is held out (seeded shuffle) for
    early stopping.  Returns the best-validation-accuracy snapshot and the
    per-epoch history rows (epoch, train_loss, val_loss, val_accuracy).
    """
    y = np.asarray(y, dtype=np.int64)
    if config.enriched and embeddings is None:
        raise MissingEmbedding("enriched config requires embeddings")
    rng = np.random.default_rng(config.seed if seed is None else seed)

    if train_idx is None:
        train_idx = np.arange(tensors.n_essays)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if val_idx is None:
        shuffled = rng.permutation(train_idx)
        n_val = max(1, int(round(len(train_idx) * config.validation_split)))
        if n_val >= len(train_idx):
            raise ConfigError("validation split leaves no training essays")
        val_idx, fit_idx = shuffled[:n_val], shuffled[n_val:]
    else:
        val_idx = np.asarray(val_idx, dtype=np.int64)
        fit_idx = train_idx
        if set(fit_idx) & set(val_idx):
            raise ConfigError("train and validation essay sets overlap")

    embed_dim = embeddings.shape[1] if config.enriched else 0
    model = new_model(X.shape[1], config, embed_dim=embed_dim, rng=rng)
    state = AdamState.for_params(model.params)

    best_acc = -np.inf
    best_loss = np.inf
    best_params = model.copy_params()
    epochs_since_best = 0
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(fit_idx)
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = loss_and_gradients(
                model, tensors, X, batch, y[batch], embeddings,
                weight_decay=config.weight_decay,
            )
            adam_step(model.params, grads, state, config.learning_rate)
            batch_losses.append(loss)
        val_loss, val_acc = evaluate_split(model, tensors, X, val_idx, y[val_idx], embeddings)
        history.append((epoch, float(np.mean(batch_losses)), val_loss, val_acc))
        # accuracy on a small validation set saturates quickly, so ties are
        # broken by loss; otherwise a lucky early epoch would freeze training
        if val_acc > best_acc or (val_acc == best_acc and val_loss < best_loss):
            best_acc = val_acc
            best_loss = val_loss
            best_params = model.copy_params()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                break
    model.params = best_params
    return model, history


def predict_trait(model, tensors, X, positions, embeddings=None):
    return predict(model, tensors, X, positions, embeddings)


# --- persistence ---------------------------------------------------------

def save_model(model: GatModel, path):
    meta = {
        "version": CHECKPOINT_VERSION,
        "n_features": model.n_features,
        "dense_units": model.dense_units,
        "hidden_units": model.hidden_units,
        "heads": model.heads,
        "n_layers": model.n_layers,
        "embed_dim": model.embed_dim,
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **model.params)


def load_model(path) -> GatModel:
    with np.load(path) as npz:
        meta = json.loads(str(npz["__meta__"][()]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k: npz[k] for k in npz.files if k != "__meta__"}
    return GatModel(
        meta["n_features"], meta["dense_units"], meta["hidden_units"],
        meta["heads"], meta["n_layers"], meta["embed_dim"], params,
    )


def write_history(history, path):
    lines = ["epoch,train_loss,val_loss,val_accuracy"]
    for epoch, tr, vl, va in history:
        lines.append(f"{epoch},{tr:.6f},{vl:.6f},{va:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
