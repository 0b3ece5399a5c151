"""Two-layer GCN with a linear embedding head, fused by convex interpolation.

The forward pass is softmax(A_hat . ReLU(A_hat X W1 + b1) . W2 + b2) restricted
to document rows, the head is softmax(Z_doc W + b), and the fused prediction is
lam * Z_G + (1 - lam) * Z_B. Training minimizes the negative log likelihood of
the fused probabilities on the train mask with hand-derived reverse-mode
gradients and a full-batch Adam loop; everything runs in float64.
"""

from __future__ import annotations

import csv as _csv
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import evaluation
from .graph import EmbeddingMatrix, NodeFeatures, SparseMatrix

LOSS_EPS = 1e-12

CHECKPOINT_MAGIC = b"TGCK"
CHECKPOINT_VERSION = 1


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the failing epoch."""

    def __init__(self, epoch: int):
        super().__init__(f"non-finite training loss at epoch {epoch}")
        self.epoch = epoch


@dataclass
class GCNParameters:
    """Weights of the two graph convolution layers."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def copy(self) -> "GCNParameters":
        return GCNParameters(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())


@dataclass
class LinearHead:
    """Softmax classifier over the external document embeddings."""

    W: np.ndarray
    b: np.ndarray

    def copy(self) -> "LinearHead":
        return LinearHead(self.W.copy(), self.b.copy())


@dataclass
class TrainingConfig:
    """Hyperparameters for the fused model.

    lam is the GCN share of the fused prediction (0 = head only, 1 = GCN
    only). patience, when set, stops training after that many epochs without
    a validation weighted-F1 gain. weight_decay is L2 on weight matrices
    (biases excluded).
    """

    lam: float = 0.2
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    dropout: float = 0.5
    hidden_dim: int = 200
    weight_decay: float = 0.0
    seed: int = 0
    patience: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class ProbabilityMatrix:
    """Row-stochastic class probabilities over documents."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("probability matrix must be 2-D")
        if len(self.values):
            row_sums = self.values.sum(axis=1)
            if not np.allclose(row_sums, 1.0, atol=1e-9, rtol=0.0):
                raise ValueError("probability rows must sum to 1")
            if self.values.min() < -1e-12 or self.values.max() > 1.0 + 1e-12:
                raise ValueError("probabilities must lie in [0, 1]")

    @property
    def n_docs(self) -> int:
        return self.values.shape[0]

    @property
    def n_classes(self) -> int:
        return self.values.shape[1]


@dataclass
class EpochStats:
    epoch: int
    loss: float
    val_acc: float
    val_f1: float


@dataclass
class TrainResult:
    gcn: GCNParameters
    head: LinearHead | None
    history: list[EpochStats]
    best_epoch: int | None


@dataclass
class AblationRow:
    lam: float
    accuracy: float
    f1: float
    acc_std: float
    f1_std: float


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_parameters(
    feature_dim: int,
    hidden_dim: int,
    n_classes: int,
    embedding_dim: int | None,
    seed: int,
) -> tuple[GCNParameters, LinearHead | None]:
    """Glorot-uniform weights, zero biases; draw order is fixed for a seed."""
    rng = np.random.default_rng(seed)
    gcn = GCNParameters(
        W1=_glorot(rng, feature_dim, hidden_dim),
        b1=np.zeros(hidden_dim),
        W2=_glorot(rng, hidden_dim, n_classes),
        b2=np.zeros(n_classes),
    )
    head = None
    if embedding_dim is not None:
        head = LinearHead(W=_glorot(rng, embedding_dim, n_classes), b=np.zeros(n_classes))
    return gcn, head


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _check_finite(name: str, layer: int, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name} (layer {layer})")


def _forward_pass(
    features: NodeFeatures,
    adj_csr,
    gcn: GCNParameters,
    head: LinearHead | None,
    embeddings: EmbeddingMatrix | None,
    lam: float,
    dropout_mask: np.ndarray | None,
) -> dict:
    """Run both branches and the fusion, keeping activations for backprop."""
    n_docs = features.n_docs
    if features.mode == "identity":
        xw1 = gcn.W1  # X @ W1 with X = I
    else:
        xw1 = features.matrix @ gcn.W1
    h_pre = adj_csr @ xw1 + gcn.b1
    _check_finite("hidden pre-activation", 1, h_pre)
    hidden = np.maximum(h_pre, 0.0)
    h_drop = hidden * dropout_mask if dropout_mask is not None else hidden
    propagated = adj_csr @ h_drop
    logits = propagated @ gcn.W2 + gcn.b2
    _check_finite("output logits", 2, logits)
    probs_full = _softmax(logits)
    z_g = probs_full[:n_docs]

    z_b = None
    head_logits = None
    if head is not None:
        if embeddings is None:
            raise ValueError("a linear head requires document embeddings")
        head_logits = embeddings.values @ head.W + head.b
        z_b = _softmax(head_logits)
        z_final = lam * z_g + (1.0 - lam) * z_b
    else:
        if lam != 1.0:
            raise ValueError("without embeddings the model is GCN-only; lam must be 1")
        z_final = z_g
    return {
        "n_docs": n_docs,
        "h_pre": h_pre,
        "dropout_mask": dropout_mask,
        "h_drop": h_drop,
        "propagated": propagated,
        "probs_full": probs_full,
        "z_g": z_g,
        "z_b": z_b,
        "z_final": z_final,
    }


def gcn_forward(
    features: NodeFeatures,
    adj_norm: SparseMatrix,
    params: GCNParameters,
    dropout: float = 0.0,
    rng: np.random.Generator | int | None = None,
    training: bool = False,
) -> ProbabilityMatrix:
    """Graph-branch prediction Z_G over document rows.

    Dropout hits the hidden layer only, and only when training.
    """
    mask = None
    if training and dropout > 0.0:
        if rng is None:
            raise ValueError("dropout during training requires an rng or seed")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        hidden_shape = (adj_norm.n_rows, params.W1.shape[1])
        mask = _dropout_mask(rng, hidden_shape, dropout)
    cache = _forward_pass(features, adj_norm.to_csr(), params, None, None, 1.0, mask)
    return ProbabilityMatrix(cache["z_g"])


def linear_forward(embeddings: EmbeddingMatrix, head: LinearHead) -> ProbabilityMatrix:
    """Embedding-branch prediction Z_B: row softmax of Z_doc W + b."""
    if embeddings.dim != head.W.shape[0]:
        raise ValueError(
            f"embedding dim {embeddings.dim} does not match head input {head.W.shape[0]}"
        )
    return ProbabilityMatrix(_softmax(embeddings.values @ head.W + head.b))


def interpolate(z_g: ProbabilityMatrix, z_b: ProbabilityMatrix, lam: float) -> ProbabilityMatrix:
    """Fused prediction lam * Z_G + (1 - lam) * Z_B."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    if z_g.values.shape != z_b.values.shape:
        raise ValueError("prediction matrices must share a shape")
    return ProbabilityMatrix(lam * z_g.values + (1.0 - lam) * z_b.values)


def nll_loss(z_final: ProbabilityMatrix | np.ndarray, labels, mask) -> float:
    """Mean negative log likelihood -ln(p[label] + eps) over masked documents."""
    values = z_final.values if isinstance(z_final, ProbabilityMatrix) else z_final
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("loss mask selects no documents")
    labels = np.asarray([0 if lab is None else lab for lab in labels], dtype=np.int64)
    picked = values[mask, labels[mask]]
    return float(-np.log(picked + LOSS_EPS).mean())


def predict(z_final: ProbabilityMatrix) -> np.ndarray:
    """Argmax label per document; ties break toward the lower class index."""
    return np.argmax(z_final.values, axis=1)


def _dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _softmax_backward(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    inner = (upstream * probs).sum(axis=1, keepdims=True)
    return probs * (upstream - inner)


def loss_and_gradients(
    features: NodeFeatures,
    adj_norm: SparseMatrix,
    gcn: GCNParameters,
    head: LinearHead | None,
    embeddings: EmbeddingMatrix | None,
    labels,
    train_mask,
    lam: float,
    weight_decay: float = 0.0,
    dropout_mask: np.ndarray | None = None,
    adj_csr=None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Forward pass plus analytic reverse-mode gradients for every parameter."""
    adj_csr = adj_csr if adj_csr is not None else adj_norm.to_csr()
    cache = _forward_pass(features, adj_csr, gcn, head, embeddings, lam, dropout_mask)
    mask = np.asarray(train_mask, dtype=bool)
    labels_arr = np.asarray([0 if lab is None else lab for lab in labels], dtype=np.int64)
    loss = nll_loss(cache["z_final"], labels_arr, mask)

    n_docs = cache["n_docs"]
    n_classes = gcn.W2.shape[1]
    n_masked = int(mask.sum())
    d_final = np.zeros((n_docs, n_classes))
    picked = cache["z_final"][mask, labels_arr[mask]]
    d_final[mask, labels_arr[mask]] = -1.0 / (n_masked * (picked + LOSS_EPS))

    # Graph branch: softmax rows outside the document block get no gradient.
    d_logits = np.zeros_like(cache["probs_full"])
    d_logits[:n_docs] = _softmax_backward(cache["z_g"], lam * d_final)
    grads: dict[str, np.ndarray] = {}
    grads["gcn.b2"] = d_logits.sum(axis=0)
    grads["gcn.W2"] = cache["propagated"].T @ d_logits
    d_propagated = d_logits @ gcn.W2.T
    d_h_drop = adj_csr.T @ d_propagated
    d_hidden = d_h_drop * cache["dropout_mask"] if cache["dropout_mask"] is not None else d_h_drop
    d_h_pre = d_hidden * (cache["h_pre"] > 0.0)
    grads["gcn.b1"] = d_h_pre.sum(axis=0)
    back = adj_csr.T @ d_h_pre
    if features.mode == "identity":
        grads["gcn.W1"] = back
    else:
        grads["gcn.W1"] = features.matrix.T @ back

    if head is not None:
        d_head_logits = _softmax_backward(cache["z_b"], (1.0 - lam) * d_final)
        grads["head.W"] = embeddings.values.T @ d_head_logits
        grads["head.b"] = d_head_logits.sum(axis=0)

    if weight_decay:
        grads["gcn.W1"] = grads["gcn.W1"] + weight_decay * gcn.W1
        grads["gcn.W2"] = grads["gcn.W2"] + weight_decay * gcn.W2
        if head is not None:
            grads["head.W"] = grads["head.W"] + weight_decay * head.W
        loss += 0.5 * weight_decay * (
            float((gcn.W1 ** 2).sum()) + float((gcn.W2 ** 2).sum())
            + (float((head.W ** 2).sum()) if head is not None else 0.0)
        )
    return loss, grads


def compute_loss(
    features: NodeFeatures,
    adj_norm: SparseMatrix,
    gcn: GCNParameters,
    head: LinearHead | None,
    embeddings: EmbeddingMatrix | None,
    labels,
    train_mask,
    lam: float,
    weight_decay: float = 0.0,
    dropout_mask: np.ndarray | None = None,
) -> float:
    """Loss only, on the exact forward path used by loss_and_gradients."""
    cache = _forward_pass(
        features, adj_norm.to_csr(), gcn, head, embeddings, lam, dropout_mask
    )
    loss = nll_loss(cache["z_final"], labels, train_mask)
    if weight_decay:
        loss += 0.5 * weight_decay * (
            float((gcn.W1 ** 2).sum()) + float((gcn.W2 ** 2).sum())
            + (float((head.W ** 2).sum()) if head is not None else 0.0)
        )
    return loss


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators."""

    beta1: float
    beta2: float
    eps: float
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, grad in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            params[name] -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _param_dict(gcn: GCNParameters, head: LinearHead | None) -> dict[str, np.ndarray]:
    params = {"gcn.W1": gcn.W1, "gcn.b1": gcn.b1, "gcn.W2": gcn.W2, "gcn.b2": gcn.b2}
    if head is not None:
        params["head.W"] = head.W
        params["head.b"] = head.b
    return params


def fused_probabilities(
    features: NodeFeatures,
    adj_norm: SparseMatrix,
    gcn: GCNParameters,
    head: LinearHead | None,
    embeddings: EmbeddingMatrix | None,
    lam: float,
) -> ProbabilityMatrix:
    """Inference-mode fused prediction (no dropout)."""
    cache = _forward_pass(features, adj_norm.to_csr(), gcn, head, embeddings, lam, None)
    return ProbabilityMatrix(cache["z_final"])


def evaluate(
    features: NodeFeatures,
    adj_norm: SparseMatrix,
    gcn: GCNParameters,
    head: LinearHead | None,
    embeddings: EmbeddingMatrix | None,
    lam: float,
    labels,
    mask,
) -> evaluation.MetricsReport:
    """Weighted metrics of the fused prediction on the masked documents."""
    probs = fused_probabilities(features, adj_norm, gcn, head, embeddings, lam)
    preds = predict(probs)
    mask = np.asarray(mask, dtype=bool)
    gold = [labels[i] for i in np.flatnonzero(mask)]
    cm = evaluation.confusion(preds[mask].tolist(), gold)
    return evaluation.metrics(cm)


def train(
    features: NodeFeatures,
    adj_norm: SparseMatrix,
    embeddings: EmbeddingMatrix | None,
    labels,
    masks: dict,
    config: TrainingConfig,
) -> TrainResult:
    """Full-batch Adam training of both branches against the fused loss.

    Only train-mask labels contribute to the loss; validation labels drive
    best-epoch selection and test labels are never read. Selection keeps the
    highest validation weighted F1, latest epoch on ties: discrete metrics
    saturate early on small validation sets, and continued training at equal
    validation quality is preferred. Patience counts epochs without a strict
    F1 gain. Deterministic for a fixed config and inputs.
    """
    train_mask = np.asarray(masks["train"], dtype=bool)
    val_mask = np.asarray(masks.get("val", np.zeros(features.n_docs, dtype=bool)), dtype=bool)
    n_classes = 2
    embedding_dim = embeddings.dim if embeddings is not None else None
    if embeddings is not None and embeddings.n_docs != features.n_docs:
        raise ValueError("embedding rows do not match the corpus document count")
    gcn, head = init_parameters(
        features.dim, config.hidden_dim, n_classes, embedding_dim, config.seed
    )
    if head is None and config.lam != 1.0:
        raise ValueError("without embeddings the model is GCN-only; set lam to 1")

    rng = np.random.default_rng(config.seed)
    adam = AdamState(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    adj_csr = adj_norm.to_csr()
    params = _param_dict(gcn, head)
    hidden_shape = (features.n_docs + features.n_words, config.hidden_dim)

    history: list[EpochStats] = []
    best_f1 = -1.0
    best_epoch: int | None = None
    best_gcn, best_head = None, None
    stale = 0
    for epoch in range(config.epochs):
        mask = None
        if config.dropout > 0.0:
            mask = _dropout_mask(rng, hidden_shape, config.dropout)
        loss, grads = loss_and_gradients(
            features, adj_norm, gcn, head, embeddings, labels, train_mask,
            config.lam, config.weight_decay, mask, adj_csr=adj_csr,
        )
        if not math.isfinite(loss):
            raise DivergenceError(epoch)
        adam.step(params, grads, config.learning_rate)

        val_acc = val_f1 = 0.0
        if val_mask.any():
            report = evaluate(
                features, adj_norm, gcn, head, embeddings, config.lam, labels, val_mask
            )
            val_acc, val_f1 = report.accuracy, report.f1
        history.append(EpochStats(epoch=epoch, loss=loss, val_acc=val_acc, val_f1=val_f1))

        if val_mask.any() and val_f1 >= best_f1:
            if val_f1 > best_f1:
                stale = 0
            else:
                stale += 1
            best_f1 = val_f1
            best_epoch = epoch
            best_gcn, best_head = gcn.copy(), head.copy() if head is not None else None
        else:
            stale += 1
        if config.patience is not None and stale > config.patience:
            break

    if best_gcn is not None:
        gcn, head = best_gcn, best_head
    return TrainResult(gcn=gcn, head=head, history=history, best_epoch=best_epoch)


def ablate_lambda(
    grid,
    base_config: TrainingConfig,
    features: NodeFeatures,
    adj_norm: SparseMatrix,
    embeddings: EmbeddingMatrix | None,
    labels,
    masks: dict,
    seeds,
) -> list[AblationRow]:
    """Train/evaluate once per (lam, seed); report test-set means over seeds."""
    rows = []
    for lam in sorted(grid):
        accs, f1s = [], []
        for seed in seeds:
            config = replace(base_config, lam=lam, seed=seed)
            result = train(features, adj_norm, embeddings, labels, masks, config)
            report = evaluate(
                features, adj_norm, result.gcn, result.head, embeddings, lam,
                labels, masks["test"],
            )
            accs.append(report.accuracy)
            f1s.append(report.f1)
        rows.append(
            AblationRow(
                lam=float(lam),
                accuracy=float(np.mean(accs)),
                f1=float(np.mean(f1s)),
                acc_std=float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
                f1_std=float(np.std(f1s, ddof=1)) if len(f1s) > 1 else 0.0,
            )
        )
    return rows


def write_history_csv(path, history: list[EpochStats]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["epoch", "loss", "val_acc", "val_f1"])
        for row in history:
            writer.writerow([row.epoch, f"{row.loss:.17g}", f"{row.val_acc:.17g}", f"{row.val_f1:.17g}"])


def write_ablation_csv(path, rows: list[AblationRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["lambda", "accuracy", "f1", "acc_std", "f1_std"])
        for row in rows:
            writer.writerow(
                [f"{row.lam:g}", f"{row.accuracy:.17g}", f"{row.f1:.17g}",
                 f"{row.acc_std:.17g}", f"{row.f1_std:.17g}"]
            )


def save_parameter_blocks(path, blocks: dict) -> None:
    """Versioned binary checkpoint: named parameter blocks, little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blocks)))
        for name, arr in blocks.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            arr = np.asarray(arr, dtype=np.float64)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_parameter_blocks(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint (bad magic)")
        version, n_blocks = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        blocks: dict[str, np.ndarray] = {}
        for _ in range(n_blocks):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape)
            blocks[name] = data.astype(np.float64)
    return blocks


def save_checkpoint(path, gcn: GCNParameters, head: LinearHead | None) -> None:
    save_parameter_blocks(path, _param_dict(gcn, head))


def load_checkpoint(path) -> tuple[GCNParameters, LinearHead | None]:
    blocks = load_parameter_blocks(path)
    gcn = GCNParameters(
        W1=blocks["gcn.W1"], b1=blocks["gcn.b1"], W2=blocks["gcn.W2"], b2=blocks["gcn.b2"]
    )
    head = None
    if "head.W" in blocks:
        head = LinearHead(W=blocks["head.W"], b=blocks["head.b"])
    return gcn, head
