"""From-scratch multilayer perceptron for binary fall classification.

Fixed topology: four layers, two hidden (default 58-64-32-1), ReLU hidden
activation, single sigmoid output read as the fall probability with a 0.5
threshold. Training is mini-batch gradient descent with Adam-style
adaptive steps, fully deterministic given the seeds. Everything runs in
float64 so gradient checks and artifact round-trips are exact.

The artifact file is a single JSON document with a fixed field order (see
docs/artifact_format.md); identical artifacts serialize to identical
bytes, and the sha256 of those bytes is the model digest that detections
carry.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArtifactError, ConfigError, InsufficientData, SchemaMismatch
from .features import SCHEMA_V1, Scaler

ARTIFACT_FORMAT = "fallstream-artifact/1"
HIDDEN_ACTIVATIONS = ("relu", "tanh")
BCE_EPS = 1e-12


@dataclass
class MlpModel:
    layer_dims: tuple[int, int, int, int]
    weights: list[np.ndarray]  # [dims0 x dims1, dims1 x dims2, dims2 x dims3]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    schema_version: str = SCHEMA_V1.version


def _validate_dims(dims) -> tuple[int, int, int, int]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4:
        raise ConfigError(f"need 4 layers (input, hidden, hidden, output), got {dims}")
    if any(d < 1 for d in dims):
        raise ConfigError(f"layer sizes must be >= 1, got {dims}")
    if dims[-1] != 1:
        raise ConfigError(f"output layer must be scalar, got {dims[-1]}")
    return dims


def init_model(
    dims=(58, 64, 32, 1),
    seed: int = 0,
    hidden_activation: str = "relu",
    schema_version: str = SCHEMA_V1.version,
) -> MlpModel:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases, seeded."""
    dims = _validate_dims(dims)
    if hidden_activation not in HIDDEN_ACTIVATIONS:
        raise ConfigError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(dims, dims[1:]):
        limit = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpModel(dims, weights, biases,
                    hidden_activation=hidden_activation,
                    schema_version=schema_version)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _hidden(z: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _hidden_grad(z: np.ndarray, a: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _forward_cached(model: MlpModel, X: np.ndarray):
    """All layer pre-activations and activations for backprop."""
    zs, acts = [], [X]
    a = X
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        zs.append(z)
        a = _sigmoid(z) if i == len(model.weights) - 1 else _hidden(
            z, model.hidden_activation)
        acts.append(a)
    return zs, acts


def forward_batch(model: MlpModel, X: np.ndarray) -> np.ndarray:
    """Fall probabilities for a (n, dims[0]) matrix of normalized vectors."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.layer_dims[0]:
        raise SchemaMismatch(
            f"expected (n, {model.layer_dims[0]}) inputs, got {X.shape}"
        )
    _, acts = _forward_cached(model, X)
    return acts[-1][:, 0]


def forward(model: MlpModel, values: np.ndarray) -> float:
    """Fall probability of one normalized feature vector."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape != (model.layer_dims[0],):
        raise SchemaMismatch(
            f"expected {model.layer_dims[0]} values, got shape {v.shape}"
        )
    return float(forward_batch(model, v[None, :])[0])


def loss_bce(p, target) -> float:
    """Binary cross-entropy with p clipped to [eps, 1-eps]."""
    p = np.clip(np.asarray(p, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    t = np.asarray(target, dtype=np.float64)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))


def backward(model: MlpModel, X: np.ndarray, y: np.ndarray):
    """Gradients of the mean batch BCE with respect to every parameter.

    Returns (weight_grads, bias_grads) with the same shapes as the model
    parameters.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    zs, acts = _forward_cached(model, X)
    n = X.shape[0]

    # sigmoid + BCE collapse to (p - t) at the output pre-activation
    delta = (acts[-1] - y) / n
    w_grads = [None] * len(model.weights)
    b_grads = [None] * len(model.biases)
    for i in range(len(model.weights) - 1, -1, -1):
        w_grads[i] = acts[i].T @ delta
        b_grads[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * _hidden_grad(
                zs[i - 1], acts[i], model.hidden_activation)
    return w_grads, b_grads


@dataclass
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 1e-3
    batch_size: int = 32
    shuffle_seed: int = 1
    test_fraction: float = 0.2
    split_seed: int = 2

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(
                f"test_fraction must be in (0, 1), got {self.test_fraction}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def train(
    model: MlpModel, X: np.ndarray, y: np.ndarray, config: TrainConfig
) -> list[EpochStats]:
    """Adam mini-batch training for exactly config.epochs; mutates model.

    y holds 1.0 for FALL and 0.0 for ADL. History entries carry the
    full-training-set loss and accuracy at the end of each epoch.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InsufficientData("training data is empty")
    if X.shape[0] != y.shape[0]:
        raise ConfigError("X and y row counts differ")

    rng = np.random.default_rng(config.shuffle_seed)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    step = 0
    history: list[EpochStats] = []
    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            w_grads, b_grads = backward(model, X[idx], y[idx])
            step += 1
            corr1 = 1.0 - beta1**step
            corr2 = 1.0 - beta2**step
            for i in range(len(model.weights)):
                m_w[i] = beta1 * m_w[i] + (1 - beta1) * w_grads[i]
                v_w[i] = beta2 * v_w[i] + (1 - beta2) * w_grads[i] ** 2
                model.weights[i] -= config.learning_rate * (
                    m_w[i] / corr1) / (np.sqrt(v_w[i] / corr2) + eps)
                m_b[i] = beta1 * m_b[i] + (1 - beta1) * b_grads[i]
                v_b[i] = beta2 * v_b[i] + (1 - beta2) * b_grads[i] ** 2
                model.biases[i] -= config.learning_rate * (
                    m_b[i] / corr1) / (np.sqrt(v_b[i] / corr2) + eps)
        probs = forward_batch(model, X)
        history.append(EpochStats(
            epoch=epoch,
            loss=loss_bce(probs, y),
            accuracy=float(np.mean((probs >= 0.5) == (y >= 0.5))),
        ))
    return history


def stratified_split(
    y: np.ndarray, test_fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic stratified train/test index split."""
    y = np.asarray(y)
    if y.size == 0:
        raise InsufficientData("cannot split an empty label array")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for value in np.unique(y):
        idx = np.flatnonzero(y == value)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(test_fraction * idx.size))
        n_test = min(idx.size - 1, max(n_test, 1)) if idx.size > 1 else 0
        test_idx.extend(idx[:n_test])
        train_idx.extend(idx[n_test:])
    return np.sort(np.array(train_idx, dtype=int)), np.sort(
        np.array(test_idx, dtype=int))


@dataclass
class Metrics:
    """Accuracy plus 2x2 confusion matrices, rows true {FALL, ADL}."""

    accuracy: float
    counts: np.ndarray      # [[true FALL pred FALL, pred ADL], [true ADL ...]]
    normalized: np.ndarray  # rows sum to 1; all-zero row stays all-zero
    n: int

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "row_order": ["FALL", "ADL"],
            "col_order": ["FALL", "ADL"],
            "counts": [[int(v) for v in row] for row in self.counts],
            "normalized": [[float(v) for v in row] for row in self.normalized],
        }

    def format_table(self) -> str:
        c, z = self.counts, self.normalized
        lines = [
            f"samples   : {self.n}",
            f"accuracy  : {self.accuracy:.4f}",
            "                pred FALL   pred ADL",
            f"true FALL   {c[0, 0]:>9d}  {c[0, 1]:>9d}",
            f"true ADL    {c[1, 0]:>9d}  {c[1, 1]:>9d}",
            "normalized      pred FALL   pred ADL",
            f"true FALL   {z[0, 0]:>9.4f}  {z[0, 1]:>9.4f}",
            f"true ADL    {z[1, 0]:>9.4f}  {z[1, 1]:>9.4f}",
        ]
        return "\n".join(lines)


def evaluate(model: MlpModel, X: np.ndarray, y: np.ndarray) -> Metrics:
    """Threshold p >= 0.5 as FALL and count the confusion cells."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] == 0:
        raise InsufficientData("evaluation data is empty")
    probs = forward_batch(model, X)
    pred_fall = probs >= 0.5
    true_fall = y >= 0.5
    tp = int(np.sum(pred_fall & true_fall))
    fn = int(np.sum(~pred_fall & true_fall))
    fp = int(np.sum(pred_fall & ~true_fall))
    tn = int(np.sum(~pred_fall & ~true_fall))
    counts = np.array([[tp, fn], [fp, tn]], dtype=np.int64)
    normalized = np.zeros((2, 2), dtype=np.float64)
    for r in range(2):
        total = counts[r].sum()
        if total:
            normalized[r] = counts[r] / total
    return Metrics(
        accuracy=(tp + tn) / len(y),
        counts=counts,
        normalized=normalized,
        n=len(y),
    )


@dataclass
class ModelArtifact:
    """Model, its companion scaler, and the training metadata, as one unit."""

    model: MlpModel
    scaler: Scaler
    schema_version: str = SCHEMA_V1.version
    metadata: dict = field(default_factory=dict)
    digest: str | None = None  # sha256 of the serialized bytes, set on save/load


def _check_artifact(artifact: ModelArtifact) -> None:
    if artifact.model.schema_version != artifact.scaler.schema_version:
        raise ArtifactError(
            f"model schema {artifact.model.schema_version!r} != scaler schema "
            f"{artifact.scaler.schema_version!r}"
        )
    if artifact.schema_version != artifact.model.schema_version:
        raise ArtifactError("artifact schema version disagrees with the model")


def artifact_to_bytes(artifact: ModelArtifact) -> bytes:
    """Canonical byte serialization; identical artifacts -> identical bytes.

    Floats are written with their shortest round-trip representation, so a
    load reproduces every parameter bit-exactly.
    """
    _check_artifact(artifact)
    m = artifact.model
    doc = {
        "format": ARTIFACT_FORMAT,
        "layer_dims": list(m.layer_dims),
        "hidden_activation": m.hidden_activation,
        "output_activation": m.output_activation,
        "feature_schema_version": artifact.schema_version,
        "weights": [w.tolist() for w in m.weights],
        "biases": [b.tolist() for b in m.biases],
        "scaler": {
            "schema_version": artifact.scaler.schema_version,
            "minimum": artifact.scaler.minimum.tolist(),
            "maximum": artifact.scaler.maximum.tolist(),
        },
        "metadata": dict(sorted(artifact.metadata.items())),
    }
    return json.dumps(doc, separators=(",", ":"), sort_keys=False).encode("utf-8")


def save_artifact(artifact: ModelArtifact, destination: str | Path) -> str:
    """Write the artifact; returns its sha256 digest."""
    payload = artifact_to_bytes(artifact)
    digest = hashlib.sha256(payload).hexdigest()
    Path(destination).write_bytes(payload)
    artifact.digest = digest
    return digest


def load_artifact(source: str | Path) -> ModelArtifact:
    try:
        payload = Path(source).read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read artifact {source}: {exc}") from exc
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"artifact {source} is corrupt: {exc}") from exc
    try:
        if doc["format"] != ARTIFACT_FORMAT:
            raise ArtifactError(f"unsupported artifact format {doc['format']!r}")
        dims = _validate_dims(doc["layer_dims"])
        weights = [np.asarray(w, dtype=np.float64) for w in doc["weights"]]
        biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
        if len(weights) != 3 or len(biases) != 3:
            raise ArtifactError("expected 3 weight and 3 bias arrays")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ArtifactError(
                    f"layer {i} parameter shapes do not chain with {dims}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ArtifactError("non-finite parameters")
        if doc["hidden_activation"] not in HIDDEN_ACTIVATIONS:
            raise ArtifactError(
                f"unknown hidden activation {doc['hidden_activation']!r}"
            )
        if doc["output_activation"] != "sigmoid":
            raise ArtifactError(
                f"unknown output activation {doc['output_activation']!r}"
            )
        scaler = Scaler(
            schema_version=doc["scaler"]["schema_version"],
            minimum=np.asarray(doc["scaler"]["minimum"], dtype=np.float64),
            maximum=np.asarray(doc["scaler"]["maximum"], dtype=np.float64),
        )
        if scaler.minimum.shape != scaler.maximum.shape:
            raise ArtifactError("scaler min/max lengths differ")
        if np.any(scaler.minimum > scaler.maximum):
            raise ArtifactError("scaler has min > max")
        model = MlpModel(
            layer_dims=dims,
            weights=weights,
            biases=biases,
            hidden_activation=doc["hidden_activation"],
            output_activation=doc["output_activation"],
            schema_version=doc["feature_schema_version"],
        )
        artifact = ModelArtifact(
            model=model,
            scaler=scaler,
            schema_version=doc["feature_schema_version"],
            metadata=doc["metadata"],
            digest=hashlib.sha256(payload).hexdigest(),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"artifact {source} is malformed: {exc}") from exc
    _check_artifact(artifact)
    return artifact
