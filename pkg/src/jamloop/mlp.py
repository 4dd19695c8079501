"""Three-dense-layer binary classifier with from-scratch backprop training.

Architecture is fixed at [3, 16, 8, 1] with ReLU hidden units and a
sigmoid output. Inputs are (snr_db, bler, mcs) mapped through a fixed
affine normalization so retrained models stay comparable. Training is
minibatch Adam (or SGD) on binary cross-entropy, deterministic for a
given seed, checkpointing the epoch with the best validation accuracy.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LAYER_DIMS = [3, 16, 8, 1]
ACTIVATIONS = ["relu", "relu", "sigmoid"]

# fixed affine feature normalization (input order: snr_db, bler, mcs)
SNR_SHIFT, SNR_SCALE = 10.0, 50.0
MCS_SCALE = 28.0

MODEL_FORMAT = "jamloop-mlp-v1"


class ModelError(Exception):
    pass


class DimensionError(ModelError):
    pass


class ActivationError(ModelError):
    pass


class VersionFieldError(ModelError):
    pass


class TrainingError(Exception):
    pass


def normalize_features(snr_db: float, bler: float, mcs: float) -> np.ndarray:
    return np.array([(snr_db + SNR_SHIFT) / SNR_SCALE, bler, mcs / MCS_SCALE])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # weights[l]: (dims[l], dims[l+1])
    biases: list[np.ndarray]
    threshold: float = 0.5
    version: int = 0
    trained_on: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if len(self.weights) != len(LAYER_DIMS) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError(
                f"expected {len(LAYER_DIMS) - 1} weight/bias layers, "
                f"got {len(self.weights)}/{len(self.biases)}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            want = (LAYER_DIMS[i], LAYER_DIMS[i + 1])
            if w.shape != want:
                raise DimensionError(f"layer {i}: weight shape {w.shape}, expected {want}")
            if b.shape != (LAYER_DIMS[i + 1],):
                raise DimensionError(
                    f"layer {i}: bias shape {b.shape}, expected ({LAYER_DIMS[i + 1]},)")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ModelError(f"layer {i}: non-finite parameters")
        if not 0.0 < self.threshold < 1.0:
            raise ModelError(f"threshold {self.threshold} outside (0,1)")

    def copy(self) -> "MlpModel":
        return MlpModel(weights=[w.copy() for w in self.weights],
                        biases=[b.copy() for b in self.biases],
                        threshold=self.threshold, version=self.version,
                        trained_on=copy.deepcopy(self.trained_on))


def init_model(seed: int, version: int = 0) -> MlpModel:
    """He-initialized random model."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(LAYER_DIMS[:-1], LAYER_DIMS[1:]):
        std = math.sqrt(2.0 / fan_in)
        weights.append(std * rng.standard_normal((fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights=weights, biases=biases, version=version)


def _logits(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Forward pass up to the output pre-activation. x: (n, 3) normalized."""
    a = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.maximum(0.0, a @ w + b)
    return (a @ model.weights[-1] + model.biases[-1]).ravel()


def forward(model: MlpModel, features: tuple[float, float, float]) -> float:
    """Probability of interference for one (snr_db, bler, mcs) triple."""
    snr_db, bler, mcs = features
    if not all(math.isfinite(float(v)) for v in (snr_db, bler, mcs)):
        raise ValueError(f"non-finite features {features!r}")
    x = normalize_features(snr_db, bler, mcs)[None, :]
    return float(_sigmoid(_logits(model, x))[0])


def forward_batch(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Probabilities for an (n, 3) array of raw (snr_db, bler, mcs) rows."""
    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite features in batch")
    x = np.column_stack([(features[:, 0] + SNR_SHIFT) / SNR_SCALE,
                         features[:, 1], features[:, 2] / MCS_SCALE])
    return _sigmoid(_logits(model, x))


def loss_and_grad(model: MlpModel, features: np.ndarray, labels: np.ndarray,
                  sample_weights: np.ndarray | None = None
                  ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean BCE and exact backprop gradients for a batch of raw feature rows."""
    n = len(labels)
    if n == 0:
        raise TrainingError("empty batch")
    y = labels.astype(float)
    if sample_weights is None:
        sw = np.full(n, 1.0 / n)
    else:
        sw = sample_weights / np.sum(sample_weights)

    x = np.column_stack([(features[:, 0] + SNR_SHIFT) / SNR_SCALE,
                         features[:, 1], features[:, 2] / MCS_SCALE])
    acts = [x]
    a = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.maximum(0.0, a @ w + b)
        acts.append(a)
    z = (a @ model.weights[-1] + model.biases[-1]).ravel()

    # BCE via logits: softplus(z) - y*z, numerically stable
    loss = float(np.sum(sw * (np.logaddexp(0.0, z) - y * z)))

    dz = (sw * (_sigmoid(z) - y))[:, None]
    grads_w: list[np.ndarray] = [None] * len(model.weights)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(model.biases)  # type: ignore[list-item]
    delta = dz
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (acts[layer] > 0)
    return loss, grads_w, grads_b


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-2
    optimizer: str = "ADAM"  # ADAM | SGD
    seed: int = 0
    val_fraction: float = 0.2

    def validate(self) -> None:
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0,1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("ADAM", "SGD"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainReport:
    epoch_loss: list[float]
    epoch_val_accuracy: list[float]
    best_epoch: int
    final_train_loss: float
    val_accuracy: float
    n_train: int
    n_val: int
    class_counts: dict


def _stratified_split(labels: np.ndarray, val_fraction: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    train_idx, val_idx = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        idx = rng.permutation(idx)
        n_val = max(1, int(round(len(idx) * val_fraction)))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(val_idx))


def train(dataset: list[tuple[tuple[float, float, float], int]],
          cfg: TrainConfig, version: int = 0) -> tuple[MlpModel, TrainReport]:
    """Train on (features, label) pairs; returns best-validation checkpoint."""
    cfg.validate()
    if len(dataset) < 10:
        raise TrainingError(f"need at least 10 samples, got {len(dataset)}")
    features = np.array([list(f) for f, _ in dataset], dtype=float)
    labels = np.array([y for _, y in dataset], dtype=int)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("dataset must contain both classes (refusing degenerate retrain)")

    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _stratified_split(labels, cfg.val_fraction, rng)
    x_tr, y_tr = features[train_idx], labels[train_idx]
    x_va, y_va = features[val_idx], labels[val_idx]

    # inverse-frequency weights when the minority class is under 30%
    minority_frac = min(n_pos, n_neg) / len(labels)
    if minority_frac < 0.30:
        class_w = {0: len(labels) / (2.0 * n_neg), 1: len(labels) / (2.0 * n_pos)}
        weights_tr = np.array([class_w[int(y)] for y in y_tr])
    else:
        weights_tr = np.ones(len(y_tr))

    model = init_model(cfg.seed, version=version)
    if cfg.optimizer == "ADAM":
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        m_w = [np.zeros_like(w) for w in model.weights]
        v_w = [np.zeros_like(w) for w in model.weights]
        m_b = [np.zeros_like(b) for b in model.biases]
        v_b = [np.zeros_like(b) for b in model.biases]
        t = 0

    best = model.copy()
    best_acc = -1.0
    best_epoch = 0
    epoch_loss: list[float] = []
    epoch_val_acc: list[float] = []
    n_tr = len(y_tr)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_tr)
        losses = []
        for start in range(0, n_tr, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            loss, gw, gb = loss_and_grad(model, x_tr[sel], y_tr[sel], weights_tr[sel])
            losses.append(loss)
            if cfg.optimizer == "ADAM":
                t += 1
                for i in range(len(model.weights)):
                    m_w[i] = beta1 * m_w[i] + (1 - beta1) * gw[i]
                    v_w[i] = beta2 * v_w[i] + (1 - beta2) * gw[i] ** 2
                    m_b[i] = beta1 * m_b[i] + (1 - beta1) * gb[i]
                    v_b[i] = beta2 * v_b[i] + (1 - beta2) * gb[i] ** 2
                    mhw = m_w[i] / (1 - beta1 ** t)
                    vhw = v_w[i] / (1 - beta2 ** t)
                    mhb = m_b[i] / (1 - beta1 ** t)
                    vhb = v_b[i] / (1 - beta2 ** t)
                    model.weights[i] -= cfg.learning_rate * mhw / (np.sqrt(vhw) + eps)
                    model.biases[i] -= cfg.learning_rate * mhb / (np.sqrt(vhb) + eps)
            else:
                for i in range(len(model.weights)):
                    model.weights[i] -= cfg.learning_rate * gw[i]
                    model.biases[i] -= cfg.learning_rate * gb[i]
        probs = forward_batch(model, x_va)
        val_acc = float(np.mean((probs >= model.threshold).astype(int) == y_va))
        epoch_loss.append(float(np.mean(losses)))
        epoch_val_acc.append(val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            best = model.copy()
            best_epoch = epoch

    best.version = version
    best.trained_on = {"n_samples": len(dataset), "n_clean": n_neg, "n_interference": n_pos}
    report = TrainReport(epoch_loss=epoch_loss, epoch_val_accuracy=epoch_val_acc,
                         best_epoch=best_epoch, final_train_loss=epoch_loss[-1],
                         val_accuracy=best_acc, n_train=len(y_tr), n_val=len(y_va),
                         class_counts={"clean": n_neg, "interference": n_pos})
    return best, report


# ---- serialization ----

def save(model: MlpModel, path: str | Path) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "layer_dims": LAYER_DIMS,
        "activations": ACTIVATIONS,
        "normalization": {"snr_shift": SNR_SHIFT, "snr_scale": SNR_SCALE,
                          "mcs_scale": MCS_SCALE, "bler": "identity"},
        "threshold": model.threshold,
        "version": model.version,
        "trained_on": model.trained_on,
        "weights": [w.ravel().tolist() for w in model.weights],  # row-major
        "biases": [b.tolist() for b in model.biases],
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load(path: str | Path) -> MlpModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelError(f"cannot parse model file {path}: {exc}") from exc
    if "version" not in doc:
        raise VersionFieldError(f"model file {path} lacks the required 'version' field")
    if doc.get("layer_dims") != LAYER_DIMS:
        raise DimensionError(
            f"model file {path}: layer_dims {doc.get('layer_dims')} != {LAYER_DIMS}")
    acts = doc.get("activations")
    if acts != ACTIVATIONS:
        raise ActivationError(f"model file {path}: unsupported activations {acts}")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(LAYER_DIMS[:-1], LAYER_DIMS[1:])):
        flat = np.array(doc["weights"][i], dtype=float)
        if flat.size != fan_in * fan_out:
            raise DimensionError(
                f"model file {path}: layer {i} has {flat.size} weights, "
                f"expected {fan_in * fan_out}")
        weights.append(flat.reshape(fan_in, fan_out))
        b = np.array(doc["biases"][i], dtype=float)
        if b.size != fan_out:
            raise DimensionError(
                f"model file {path}: layer {i} has {b.size} biases, expected {fan_out}")
        biases.append(b)
    return MlpModel(weights=weights, biases=biases, threshold=float(doc["threshold"]),
                    version=int(doc["version"]), trained_on=doc.get("trained_on", {}))
