"""Two-hidden-layer MLP trained with Adam, written directly in numpy.

The functional core (:func:`init_model`, :func:`forward`,
:func:`loss_and_grad`) is wrapped by :class:`MLPClassifier`, a scikit-learn
compatible estimator, and by :func:`train`/:func:`predict`, which operate on
a :class:`~leakaudit.datamodel.Dataset` plus a split.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._rng import make_rng
from .datamodel import Dataset, Standardizer, _fmt
from .exceptions import DatasetError, TrainingError
from .metrics import accuracy, confusion_matrix, macro_f1


class Selection(str, enum.Enum):
    BestValMacroF1 = "best_val_macro_f1"
    LastEpoch = "last_epoch"


@dataclass
class MLPParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2, self.W3, self.b3]

    @classmethod
    def from_arrays(cls, arrays) -> "MLPParams":
        return cls(*arrays)

    def astype(self, dtype) -> "MLPParams":
        return MLPParams.from_arrays([a.astype(dtype) for a in self.arrays()])

    def copy(self) -> "MLPParams":
        return MLPParams.from_arrays([a.copy() for a in self.arrays()])

    @property
    def shape(self) -> tuple[int, int, int]:
        """(d_in, hidden_width, k_out)."""
        return self.W1.shape[0], self.W1.shape[1], self.W3.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    hidden_width: int = 64
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 41
    selection: Selection = Selection.BestValMacroF1
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "selection", Selection(self.selection))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selection"] = self.selection.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


PAPER_MLP = {"hidden_width": 256}


@dataclass
class TrainedModel:
    params: MLPParams
    config: TrainConfig
    standardizer: Standardizer
    selected_epoch: int
    history: list[dict] = field(default_factory=list)

    @property
    def d_in(self) -> int:
        return self.params.W1.shape[0]

    @property
    def n_classes(self) -> int:
        return self.params.W3.shape[1]


# ---------------------------------------------------------------- functional core

def init_model(d_in: int, hidden_width: int, k_out: int, seed: int) -> MLPParams:
    """Glorot-uniform weights, zero biases (float64)."""
    if min(d_in, hidden_width, k_out) < 1:
        raise ValueError(f"dimensions must be positive: {(d_in, hidden_width, k_out)}")
    rng = make_rng(seed, "init")

    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return MLPParams(
        W1=glorot(d_in, hidden_width), b1=np.zeros(hidden_width),
        W2=glorot(hidden_width, hidden_width), b2=np.zeros(hidden_width),
        W3=glorot(hidden_width, k_out), b3=np.zeros(k_out),
    )


def _check_batch(params: MLPParams, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[1] != params.W1.shape[0]:
        raise ValueError(f"batch shape {batch.shape} incompatible with d_in={params.W1.shape[0]}")
    if not np.all(np.isfinite(batch)):
        raise ValueError("batch contains non-finite values")
    return batch


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward(params: MLPParams, x: np.ndarray):
    a1 = x @ params.W1 + params.b1
    h1 = np.maximum(a1, 0)
    a2 = h1 @ params.W2 + params.b2
    h2 = np.maximum(a2, 0)
    logits = h2 @ params.W3 + params.b3
    return h1, h2, logits


def forward(params: MLPParams, batch: np.ndarray) -> np.ndarray:
    """Class probabilities, shape (B, K')."""
    batch = _check_batch(params, batch)
    _, _, logits = _forward(params, batch)
    return np.exp(_log_softmax(logits))


def loss_and_grad(params: MLPParams, batch: np.ndarray,
                  labels: np.ndarray) -> tuple[float, MLPParams]:
    """Mean cross-entropy and its exact gradient by backpropagation."""
    batch = _check_batch(params, batch)
    labels = np.asarray(labels, dtype=np.int64)
    k = params.W3.shape[1]
    if labels.shape != (batch.shape[0],):
        raise ValueError("need one label per batch row")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels outside [0, {k})")
    n = batch.shape[0]
    rows = np.arange(n)

    h1, h2, logits = _forward(params, batch)
    logp = _log_softmax(logits)
    loss = float(-logp[rows, labels].mean())

    d_logits = np.exp(logp)
    d_logits[rows, labels] -= 1
    d_logits /= n
    gW3 = h2.T @ d_logits
    gb3 = d_logits.sum(axis=0)
    d_h2 = (d_logits @ params.W3.T) * (h2 > 0)
    gW2 = h1.T @ d_h2
    gb2 = d_h2.sum(axis=0)
    d_h1 = (d_h2 @ params.W2.T) * (h1 > 0)
    gW1 = batch.T @ d_h1
    gb1 = d_h1.sum(axis=0)
    return loss, MLPParams(gW1, gb1, gW2, gb2, gW3, gb3)


def uniform_random_predict(k_out: int, n: int, seed: int) -> np.ndarray:
    """``n`` labels drawn i.i.d. uniformly from ``range(k_out)``."""
    if k_out < 1 or n < 0:
        raise ValueError(f"need k_out >= 1 and n >= 0, got {k_out}, {n}")
    return make_rng(seed, "uniform-baseline").integers(0, k_out, size=n)


# ---------------------------------------------------------------- estimator

def _flatten(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X.reshape(X.shape[0], -1)
    if X.ndim != 2:
        raise ValueError(f"expected 2-D or 3-D input, got shape {X.shape}")
    return X


class MLPClassifier(ClassifierMixin, BaseEstimator):
    """ReLU MLP with two hidden layers of equal width and a softmax output.

    Labels must be integers in ``range(n_classes)``; when ``n_classes`` is
    None it is inferred as ``max(y) + 1``. Inputs of shape (n, T, C) are
    flattened time-major.

    If validation data is passed to :meth:`fit` and ``selection`` is
    ``"best_val_macro_f1"``, the parameters from the epoch with the highest
    validation macro-F1 are kept (earliest epoch on ties).
    """

    def __init__(self, hidden_width=64, epochs=100, batch_size=32, learning_rate=1e-3,
                 adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8,
                 selection="best_val_macro_f1", random_state=41, dtype="float32",
                 n_classes=None):
        self.hidden_width = hidden_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.selection = selection
        self.random_state = random_state
        self.dtype = dtype
        self.n_classes = n_classes

    def _config(self) -> TrainConfig:
        return TrainConfig(
            hidden_width=self.hidden_width, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2, adam_eps=self.adam_eps, seed=self.random_state,
            selection=self.selection, dtype=self.dtype,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        cfg = self._config()
        X = _flatten(X)
        y = np.asarray(y, dtype=np.int64)
        if X.shape[0] == 0:
            raise ValueError("empty training set")
        if y.shape != (X.shape[0],):
            raise ValueError("X and y have inconsistent lengths")
        k = int(self.n_classes) if self.n_classes is not None else int(y.max()) + 1
        if y.min() < 0 or y.max() >= k:
            raise ValueError(f"labels outside [0, {k})")
        use_val = cfg.selection is Selection.BestValMacroF1
        if use_val:
            if X_val is None or len(X_val) == 0:
                raise ValueError("best_val_macro_f1 selection needs a nonempty validation set")
            X_val = _flatten(X_val)
            y_val = np.asarray(y_val, dtype=np.int64)

        dtype = np.dtype(cfg.dtype)
        Xt = X.astype(dtype)
        Xv = X_val.astype(dtype) if use_val else None
        params = init_model(X.shape[1], cfg.hidden_width, k, cfg.seed).astype(dtype)
        arrays = params.arrays()
        m = [np.zeros_like(a) for a in arrays]
        v = [np.zeros_like(a) for a in arrays]
        b1, b2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.learning_rate
        rng = make_rng(cfg.seed, "epoch-shuffle")
        n = Xt.shape[0]

        history = []
        best_score, best_epoch, best_params = -np.inf, cfg.epochs, None
        step = 0
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n)
            losses = []
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                loss, grads = loss_and_grad(params, Xt[idx], y[idx])
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"non-finite training loss at epoch {epoch}, step {step}; "
                        f"try a smaller learning rate (current {lr})")
                losses.append(loss * len(idx))
                step += 1
                corr1 = 1 - b1 ** step
                corr2 = 1 - b2 ** step
                for a, g, mi, vi in zip(arrays, grads.arrays(), m, v):
                    mi *= b1
                    mi += (1 - b1) * g
                    vi *= b2
                    vi += (1 - b2) * (g * g)
                    a -= (lr / corr1) * mi / (np.sqrt(vi / corr2) + eps)
            if not all(np.all(np.isfinite(a)) for a in arrays):
                raise TrainingError(f"parameters became non-finite in epoch {epoch}; "
                                    f"try a smaller learning rate (current {lr})")
            record = {"epoch": epoch, "train_loss": float(np.sum(losses) / n)}
            if use_val:
                pred = _forward(params, Xv)[2].argmax(axis=1)
                cm = confusion_matrix(y_val, pred, k)
                record["val_accuracy"] = accuracy(cm)
                record["val_macro_f1"] = macro_f1(cm)
                if record["val_macro_f1"] > best_score:
                    best_score, best_epoch = record["val_macro_f1"], epoch
                    best_params = params.copy()
            history.append(record)

        if best_params is None:
            best_params, best_epoch = params, cfg.epochs
        self.params_ = best_params
        self.selected_epoch_ = best_epoch
        self.history_ = history
        self.classes_ = np.arange(k)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = _flatten(X).astype(self.params_.W1.dtype)
        return forward(self.params_, X).astype(np.float64)

    def predict(self, X) -> np.ndarray:
        # argmax picks the lowest class index on ties
        return self.predict_proba(X).argmax(axis=1)


# ---------------------------------------------------------------- dataset-level API

def train(dataset: Dataset, split, train_config: TrainConfig) -> TrainedModel:
    """Fit the standardizer on ``split.train`` and train an MLP on it."""
    train_idx = np.asarray(split.train, dtype=np.int64)
    val_idx = np.asarray(split.val, dtype=np.int64)
    if train_idx.size == 0:
        raise TrainingError("empty training set")
    if train_config.selection is Selection.BestValMacroF1 and val_idx.size == 0:
        raise TrainingError("best_val_macro_f1 selection needs a nonempty validation set")

    scaler = Standardizer().fit(dataset.X[train_idx])
    X = scaler.transform(dataset.X)
    y = dataset.labels
    cfg = train_config
    est = MLPClassifier(
        hidden_width=cfg.hidden_width, epochs=cfg.epochs, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, adam_beta1=cfg.adam_beta1,
        adam_beta2=cfg.adam_beta2, adam_eps=cfg.adam_eps, selection=cfg.selection.value,
        random_state=cfg.seed, dtype=cfg.dtype, n_classes=dataset.meta.n_classes,
    )
    if cfg.selection is Selection.BestValMacroF1:
        est.fit(X[train_idx], y[train_idx], X[val_idx], y[val_idx])
    else:
        est.fit(X[train_idx], y[train_idx])
    return TrainedModel(params=est.params_, config=cfg, standardizer=scaler,
                        selected_epoch=est.selected_epoch_, history=est.history_)


def predict(model: TrainedModel, dataset: Dataset, indices) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels and probabilities for ``dataset.samples[indices]``."""
    idx = np.asarray(indices, dtype=np.int64)
    d_in = dataset.meta.n_timestamps * dataset.meta.n_channels
    if d_in != model.d_in:
        raise DatasetError(f"dimension mismatch: model expects d_in={model.d_in}, "
                           f"dataset has T*C={d_in}")
    if idx.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, model.n_classes))
    X = model.standardizer.transform(dataset.X[idx]).reshape(idx.size, -1)
    proba = forward(model.params, X.astype(model.params.W1.dtype)).astype(np.float64)
    return proba.argmax(axis=1), proba


# ---------------------------------------------------------------- checkpoints

def save_model(model: TrainedModel, path: str | Path) -> None:
    d_in, hidden, k = model.params.shape
    doc = {
        "config": model.config.to_dict(),
        "shapes": {"d_in": d_in, "hidden_width": hidden, "k_out": k},
        "weights": {name: [_fmt(v) for v in arr.reshape(-1)]
                    for name, arr in zip(("W1", "b1", "W2", "b2", "W3", "b3"),
                                         model.params.arrays())},
        "standardizer": model.standardizer.to_dict(),
        "selected_epoch": model.selected_epoch,
        "history": model.history,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> TrainedModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cfg = TrainConfig.from_dict(doc["config"])
    d_in, h, k = (doc["shapes"][key] for key in ("d_in", "hidden_width", "k_out"))
    shapes = {"W1": (d_in, h), "b1": (h,), "W2": (h, h), "b2": (h,), "W3": (h, k), "b3": (k,)}
    arrays = [np.array([float(v) for v in doc["weights"][name]], dtype=cfg.dtype).reshape(shape)
              for name, shape in shapes.items()]
    return TrainedModel(params=MLPParams.from_arrays(arrays), config=cfg,
                        standardizer=Standardizer.from_dict(doc["standardizer"]),
                        selected_epoch=doc["selected_epoch"], history=doc.get("history", []))
