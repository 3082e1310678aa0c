"""Small reference classifier: backbone -> (GAP) -> dense(2) -> softmax.

Three backbones are available:

* ``identity``: features feed the head directly (logistic regression).
* ``dense``: one hidden ReLU layer for vector inputs.
* ``conv``: one valid-padding convolution with ReLU for single-channel grids,
  followed by global average pooling.

Forward dense layers use ``einsum`` rather than BLAS ``matmul`` so that a
batch and its rows evaluated one by one produce bit-identical outputs.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PROB_FLOOR = 1e-12
N_CLASSES = 2


class TrainingDiverged(RuntimeError):
    def __init__(self, stage: str, epoch: int):
        super().__init__(f"non-finite loss in stage {stage} at epoch {epoch}")
        self.stage = stage
        self.epoch = epoch


# -- primitives --------------------------------------------------------------

def gap_pool(feature_map) -> np.ndarray:
    """Per-channel spatial mean of an ``(..., H, W, C)`` feature map."""
    fm = np.asarray(feature_map, dtype=np.float64)
    if fm.ndim < 3 or min(fm.shape[-3:]) < 1:
        raise ValueError("feature map must have shape (..., H, W, C) with H, W, C >= 1")
    if not np.all(np.isfinite(fm)):
        raise ValueError("feature map contains non-finite values")
    h, w = fm.shape[-3], fm.shape[-2]
    return np.add.reduce(fm.reshape(*fm.shape[:-3], h * w, fm.shape[-1]), axis=-2) / (h * w)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, labels) -> np.ndarray:
    """Per-sample ``-log(max(p[label], 1e-12))``; works on one vector or a batch."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    if np.any(y < 0) or np.any(y >= p.shape[-1]) or not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"invalid label index for {p.shape[-1]} classes")
    picked = np.take_along_axis(p, y[..., None], axis=-1)[..., 0]
    return -np.log(np.maximum(picked, PROB_FLOOR))


def _affine(x, w, b):
    # einsum's unoptimized kernel sums each output in a fixed order
    return np.einsum("...i,ij->...j", x, w) + b


def _patches(x, k):
    win = sliding_window_view(x, (k, k), axis=(-2, -1))
    n, ho, wo = win.shape[:3]
    return win.reshape(n, ho, wo, k * k)


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 512
    stage_a_lr: float = 1e-3
    stage_b_lr: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    stage_a_epochs: int = 300
    stage_b_epochs: int = 100
    seed: int = 0
    backbone: str = "dense"  # dense | identity | conv
    hidden_units: int = 32
    conv_filters: int = 8
    kernel_size: int = 3
    head_init: str = "glorot"  # glorot | zeros

    def __post_init__(self):
        if self.stage_a_lr <= 0 or self.stage_b_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.stage_a_epochs < 0 or self.stage_b_epochs < 0:
            raise ValueError("epoch budgets must be non-negative")
        if self.backbone not in ("dense", "identity", "conv"):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.head_init not in ("glorot", "zeros"):
            raise ValueError(f"unknown head_init {self.head_init!r}")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# -- network -----------------------------------------------------------------

class Network:
    """Parameters plus forward/backward passes for one of the backbones."""

    def __init__(self, backbone: str, input_shape: tuple[int, ...], params: dict[str, np.ndarray],
                 kernel_size: int = 3):
        self.backbone = backbone
        self.input_shape = tuple(int(s) for s in input_shape)
        self.kernel_size = int(kernel_size)
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        self._check_shapes()

    @classmethod
    def initialize(cls, config: TrainConfig, input_shape) -> Network:
        rng = np.random.default_rng(config.seed)
        input_shape = tuple(input_shape)
        params = {}
        if config.backbone == "dense":
            (d,) = input_shape
            k = config.hidden_units
            params["W1"] = rng.standard_normal((d, k)) * np.sqrt(2.0 / d)
            params["b1"] = np.zeros(k)
            width = k
        elif config.backbone == "conv":
            if len(input_shape) != 2:
                raise ValueError("conv backbone needs (H, W) inputs")
            ks = config.kernel_size
            params["Wc"] = rng.standard_normal((ks * ks, config.conv_filters)) * np.sqrt(2.0 / (ks * ks))
            params["bc"] = np.zeros(config.conv_filters)
            width = config.conv_filters
        else:
            (width,) = input_shape
        if config.head_init == "zeros":
            params["W2"] = np.zeros((width, N_CLASSES))
        else:
            limit = np.sqrt(6.0 / (width + N_CLASSES))
            params["W2"] = rng.uniform(-limit, limit, size=(width, N_CLASSES))
        params["b2"] = np.zeros(N_CLASSES)
        return cls(config.backbone, input_shape, params, config.kernel_size)

    def _check_shapes(self):
        p = self.params
        if self.backbone == "dense":
            assert p["W1"].shape == (self.input_shape[0], p["b1"].shape[0])
            width = p["W1"].shape[1]
        elif self.backbone == "conv":
            assert p["Wc"].shape[0] == self.kernel_size**2
            assert min(self.input_shape) >= self.kernel_size
            width = p["Wc"].shape[1]
        else:
            width = self.input_shape[0]
        if p["W2"].shape != (width, N_CLASSES) or p["b2"].shape != (N_CLASSES,):
            raise ValueError("head shape inconsistent with backbone width")

    @property
    def backbone_keys(self) -> tuple[str, ...]:
        return {"dense": ("W1", "b1"), "conv": ("Wc", "bc"), "identity": ()}[self.backbone]

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> Network:
        return Network(self.backbone, self.input_shape, self.params, self.kernel_size)

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"expected inputs of shape (N, {self.input_shape}), got {x.shape}")
        return x

    def _forward(self, x):
        p = self.params
        cache = {}
        if self.backbone == "dense":
            pre = _affine(x, p["W1"], p["b1"])
            emb = np.maximum(pre, 0.0)
            cache["pre"] = pre
        elif self.backbone == "conv":
            patches = _patches(x, self.kernel_size)
            pre = _affine(patches, p["Wc"], p["bc"])
            emb = gap_pool(np.maximum(pre, 0.0))
            cache["patches"], cache["pre"] = patches, pre
        else:
            emb = x
        cache["emb"] = emb
        return _affine(emb, p["W2"], p["b2"]), cache

    def logits(self, x) -> np.ndarray:
        return self._forward(self._check_input(x))[0]

    def embed(self, x) -> np.ndarray:
        """Representation feeding the final dense layer."""
        return self._forward(self._check_input(x))[1]["emb"]

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.logits(x))

    def loss(self, x, y) -> float:
        logits = self.logits(x)
        if not np.all(np.isfinite(logits)):
            return math.inf
        return float(np.mean(cross_entropy(softmax(logits), np.asarray(y))))

    def loss_and_grad(self, x, y) -> tuple[float, dict[str, np.ndarray]]:
        x = self._check_input(x)
        y = np.asarray(y)
        n = len(y)
        logits, cache = self._forward(x)
        if not np.all(np.isfinite(logits)):
            return math.inf, {}
        probs = softmax(logits)
        ce = cross_entropy(probs, y)
        dlogits = probs.copy()
        dlogits[np.arange(n), y] -= 1.0
        # Floored samples contribute a constant, hence no gradient.
        dlogits[probs[np.arange(n), y] < PROB_FLOOR] = 0.0
        dlogits /= n
        p = self.params
        emb = cache["emb"]
        grads = {"W2": emb.T @ dlogits, "b2": dlogits.sum(axis=0)}
        if self.backbone == "dense":
            dpre = (dlogits @ p["W2"].T) * (cache["pre"] > 0)
            grads["W1"] = x.T @ dpre
            grads["b1"] = dpre.sum(axis=0)
        elif self.backbone == "conv":
            pre = cache["pre"]
            n_pos = pre.shape[1] * pre.shape[2]
            demb = dlogits @ p["W2"].T
            dpre = (demb[:, None, None, :] / n_pos) * (pre > 0)
            kk = p["Wc"].shape[0]
            grads["Wc"] = cache["patches"].reshape(-1, kk).T @ dpre.reshape(-1, dpre.shape[-1])
            grads["bc"] = dpre.sum(axis=(0, 1, 2))
        return float(np.mean(ce)), grads

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone,
            "input_shape": list(self.input_shape),
            "kernel_size": self.kernel_size,
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()} for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> Network:
        params = {k: np.array(v["values"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()}
        return cls(d["backbone"], tuple(d["input_shape"]), params, d.get("kernel_size", 3))


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr, self.beta1, self.beta2, self.epsilon = lr, beta1, beta2, epsilon
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], keys):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k in keys:
            g = grads[k]
            m = self.m.get(k, 0.0) * b1 + (1 - b1) * g
            v = self.v.get(k, 0.0) * b2 + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            params[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


# -- training ----------------------------------------------------------------

@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    epoch: int
    validation_loss: float
    stage: str


@dataclass
class LossCurves:
    initial_val_loss: float
    train: dict[str, list[float]] = field(default_factory=lambda: {"A": [], "B": []})
    val: dict[str, list[float]] = field(default_factory=lambda: {"A": [], "B": []})

    def rows(self):
        for stage in ("A", "B"):
            for i, (tr, va) in enumerate(zip(self.train[stage], self.val[stage]), start=1):
                yield stage, i, tr, va

    def min_recorded(self) -> float:
        return min([self.initial_val_loss, *self.val["A"], *self.val["B"]])


@dataclass
class TrainedModel:
    network: Network
    config: TrainConfig
    curves: LossCurves
    best: Checkpoint

    def predict_proba(self, x):
        return self.network.predict_proba(x)

    def embed(self, x):
        return self.network.embed(x)


def _run_stage(net, stage, keys, lr, epochs, x_tr, y_tr, x_va, y_va, config, best, curves):
    opt = Adam(lr, config.adam_beta1, config.adam_beta2, config.adam_epsilon)
    rng = np.random.default_rng([config.seed, ord(stage)])
    n = len(y_tr)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = net.loss_and_grad(x_tr[idx], y_tr[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(stage, epoch)
            opt.step(net.params, grads, keys)
        tr_loss = net.loss(x_tr, y_tr)
        va_loss = net.loss(x_va, y_va)
        if not (np.isfinite(tr_loss) and np.isfinite(va_loss)):
            raise TrainingDiverged(stage, epoch)
        curves.train[stage].append(tr_loss)
        curves.val[stage].append(va_loss)
        if va_loss < best.validation_loss:
            best = Checkpoint({k: v.copy() for k, v in net.params.items()}, epoch, va_loss, stage)
    return best


def fit_two_stage(x_tr, y_tr, x_va, y_va, config: TrainConfig) -> TrainedModel:
    """Stage A trains the head on a frozen backbone; stage B restarts from the
    best stage-A weights and trains everything at the lower rate.

    The returned network holds the parameters with the lowest validation loss
    seen anywhere, the initialization included.
    """
    y_tr = np.asarray(y_tr, dtype=np.int64)
    y_va = np.asarray(y_va, dtype=np.int64)
    for name, y in (("train", y_tr), ("validation", y_va)):
        if len(y) == 0 or len(np.unique(y)) < 2:
            raise ValueError(f"{name} split must be non-empty with both classes present")
    net = Network.initialize(config, np.asarray(x_tr).shape[1:])
    x_tr = np.asarray(x_tr, dtype=np.float64)
    x_va = np.asarray(x_va, dtype=np.float64)
    init_val = net.loss(x_va, y_va)
    curves = LossCurves(initial_val_loss=init_val)
    best = Checkpoint({k: v.copy() for k, v in net.params.items()}, 0, init_val, "A")
    head_keys = ("W2", "b2")
    best = _run_stage(net, "A", head_keys, config.stage_a_lr, config.stage_a_epochs,
                      x_tr, y_tr, x_va, y_va, config, best, curves)
    net.params = {k: v.copy() for k, v in best.params.items()}
    all_keys = net.backbone_keys + head_keys
    best = _run_stage(net, "B", all_keys, config.stage_b_lr, config.stage_b_epochs,
                      x_tr, y_tr, x_va, y_va, config, best, curves)
    final = Network(net.backbone, net.input_shape, best.params, net.kernel_size)
    return TrainedModel(final, config, curves, best)


def train_two_stage(dataset, splits, config: TrainConfig, train_ids=None) -> TrainedModel:
    """Train on the ``train`` split (or ``train_ids``), checkpoint on ``validation``."""
    ids = splits.ids("train") if train_ids is None else np.asarray(train_ids)
    tr = dataset.index_of(ids)
    va = dataset.index_of(splits.ids("validation"))
    return fit_two_stage(dataset.features[tr], dataset.label[tr],
                         dataset.features[va], dataset.label[va], config)


# -- persistence -------------------------------------------------------------

CHECKPOINT_FORMAT = "entropy-select-checkpoint/1"


def save_checkpoint(model: TrainedModel, path):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "epoch": model.best.epoch,
        "stage": model.best.stage,
        "validation_loss": model.best.validation_loss,
        "n_params": model.network.n_params,
        "network": model.network.to_dict(),
        "curves": {
            "initial_val_loss": model.curves.initial_val_loss,
            "train": model.curves.train,
            "val": model.curves.val,
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> TrainedModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    net = Network.from_dict(doc["network"])
    c = doc["curves"]
    curves = LossCurves(c["initial_val_loss"], c["train"], c["val"])
    best = Checkpoint(net.params, doc["epoch"], doc["validation_loss"], doc["stage"])
    return TrainedModel(net, TrainConfig.from_dict(doc["config"]), curves, best)


def save_loss_curves(curves: LossCurves, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "epoch", "train_loss", "val_loss"])
        for stage, epoch, tr, va in curves.rows():
            w.writerow([stage, epoch, format(tr, ".17g"), format(va, ".17g")])
