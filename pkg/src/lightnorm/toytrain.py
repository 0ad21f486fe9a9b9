"""Small MLP trainer with pluggable normalization layers and manual backprop.

Only the normalization layers run under emulated precision; affine layers,
activations and the loss stay in float64. Training is single threaded and
fully determined by the seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import norm
from .minifloat import FP64
from .norm import AffineParams, NormConfig

__all__ = [
    "Dataset",
    "ToyModel",
    "TrainRun",
    "make_dataset",
    "train",
    "train_linear",
    "grad_check",
    "DEFAULT_LR",
    "DEFAULT_BATCH",
]

DEFAULT_LR = 0.05
DEFAULT_BATCH = 128
DIVERGED = float("inf")


@dataclass
class Dataset:
    kind: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int

    @property
    def n_features(self) -> int:
        return self.x_train.shape[1]


def _gaussian_clusters(n, rng, n_classes=4, blobs_per_class=3, dim=2, spread=0.15):
    # several blobs per class scattered on a grid, so no single hyperplane separates a class
    centers = []
    labels = []
    grid = int(math.ceil(math.sqrt(n_classes * blobs_per_class)))
    cells = rng.permutation(grid * grid)[: n_classes * blobs_per_class]
    for j, cell in enumerate(cells):
        cx, cy = divmod(int(cell), grid)
        c = np.zeros(dim)
        c[:2] = (cx, cy)
        if dim > 2:
            c[2:] = rng.normal(scale=0.5, size=dim - 2)
        centers.append(c)
        labels.append(j % n_classes)
    centers = np.array(centers)
    labels = np.array(labels)
    pick = rng.integers(0, len(centers), size=n)
    x = centers[pick] + rng.normal(scale=spread, size=(n, dim))
    return x, labels[pick], n_classes


def _two_spirals(n, rng, noise=0.15, turns=3.0):
    half = n // 2
    t = rng.uniform(0.05, 1.0, size=n) * turns * 2 * np.pi
    cls = np.r_[np.zeros(half, int), np.ones(n - half, int)]
    r = t / (turns * 2 * np.pi) * 3.0
    phase = cls * np.pi
    x = np.c_[r * np.cos(t + phase), r * np.sin(t + phase)]
    x += rng.normal(scale=noise, size=x.shape)
    order = rng.permutation(n)
    return x[order], cls[order], 2


def make_dataset(kind: str = "gaussian-clusters", n: int = 2000, seed: int = 0, test_fraction: float = 0.25):
    """Reproducible labeled low-dimensional dataset with a train/test split."""
    if n < 100:
        raise ValueError("need n >= 100")
    rng = np.random.default_rng(seed)
    if kind == "gaussian-clusters":
        x, y, k = _gaussian_clusters(n, rng)
    elif kind == "two-spirals":
        x, y, k = _two_spirals(n, rng)
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    n_test = int(round(n * test_fraction))
    return Dataset(kind, x[n_test:], y[n_test:], x[:n_test], y[:n_test], k)


# --------------------------------------------------------------------------
# model


@dataclass
class ToyModel:
    weights: list  # affine weights, last one is the classifier
    biases: list
    affine: list  # AffineParams per normalization layer
    cfg: NormConfig

    @classmethod
    def init(cls, n_in: int, n_out: int, cfg: NormConfig, hidden=(32, 32), seed: int = 0) -> "ToyModel":
        rng = np.random.default_rng(seed)
        dims = [n_in, *hidden, n_out]
        weights = [rng.normal(scale=math.sqrt(2.0 / a), size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
        biases = [np.zeros(b) for b in dims[1:]]
        affine = [AffineParams.identity(h) for h in hidden]
        return cls(weights, biases, affine, cfg)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        for p in self.affine:
            out += [p.gamma, p.beta]
        return out

    def copy(self) -> "ToyModel":
        return ToyModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [AffineParams(p.gamma.copy(), p.beta.copy()) for p in self.affine],
            self.cfg,
        )

    def forward(self, x, cfg: NormConfig | None = None):
        cfg = cfg or self.cfg
        tape = []
        h = x
        for i, p in enumerate(self.affine):
            z = h @ self.weights[i] + self.biases[i]
            y, cache = norm.forward(z, p, cfg)
            a = np.maximum(y, 0.0)
            tape.append((h, z, y, cache))
            h = a
        logits = h @ self.weights[-1] + self.biases[-1]
        return logits, (tape, h)

    def backward(self, dlogits, saved, cfg: NormConfig | None = None):
        """Gradients in the order of ``parameters()``."""
        cfg = cfg or self.cfg
        tape, h_last = saved
        n_layers = len(self.affine)
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        gg = [None] * n_layers
        gbeta = [None] * n_layers
        gw[-1] = h_last.T @ dlogits
        gb[-1] = dlogits.sum(axis=0)
        dh = dlogits @ self.weights[-1].T
        for i in reversed(range(n_layers)):
            h_in, z, y, cache = tape[i]
            dy = dh * (y > 0)
            dz, gg[i], gbeta[i] = norm.backward(dy, cache, cfg)
            gw[i] = h_in.T @ dz
            gb[i] = dz.sum(axis=0)
            dh = dz @ self.weights[i].T
        out = []
        for w, b in zip(gw, gb):
            out += [w, b]
        for g, bt in zip(gg, gbeta):
            out += [np.asarray(g, dtype=np.float64), np.asarray(bt, dtype=np.float64)]
        return out

    def predict(self, x, batch: int = DEFAULT_BATCH) -> np.ndarray:
        preds = []
        for start in range(0, len(x), batch):
            logits, _ = self.forward(x[start : start + batch])
            preds.append(np.argmax(logits, axis=1))
        return np.concatenate(preds)


def _softmax_xent(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    n = len(labels)
    loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-300))
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass
class TrainRun:
    seed: int
    dataset: str
    config: NormConfig
    epochs: int
    loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    diverged: bool = False

    @property
    def final_test_acc(self) -> float:
        return self.test_acc[-1] if self.test_acc else 0.0

    @property
    def final_loss(self) -> float:
        return self.loss[-1] if self.loss else DIVERGED

    def as_rows(self) -> list[dict]:
        return [
            {"epoch": e + 1, "loss": l, "train_acc": a, "test_acc": t}
            for e, (l, a, t) in enumerate(zip(self.loss, self.train_acc, self.test_acc))
        ]


def train(
    model: ToyModel,
    data: Dataset,
    cfg: NormConfig | None = None,
    epochs: int = 50,
    seed: int = 0,
    lr: float = DEFAULT_LR,
    batch: int = DEFAULT_BATCH,
) -> TrainRun:
    """Plain minibatch SGD; divergence is recorded in the run, never raised."""
    cfg = cfg or model.cfg
    model.cfg = cfg
    rng = np.random.default_rng(seed)
    run = TrainRun(seed, data.kind, cfg, epochs)
    n = len(data.x_train)
    params = model.parameters()
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        seen = 0
        for start in range(0, n - batch + 1, batch):
            idx = order[start : start + batch]
            try:
                # a diverging run overflows; the check below records it
                with np.errstate(over="ignore", invalid="ignore"):
                    logits, saved = model.forward(data.x_train[idx])
                    loss, dlogits = _softmax_xent(logits, data.y_train[idx])
                    grads = model.backward(dlogits, saved)
            except (ValueError, ZeroDivisionError, FloatingPointError):
                loss = math.nan
                grads = []
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                run.diverged = True
                run.loss.append(DIVERGED)
                run.train_acc.append(0.0)
                run.test_acc.append(0.0)
                return run
            for p, g in zip(params, grads):
                p -= lr * g
            total += loss * len(idx)
            seen += len(idx)
        run.loss.append(total / max(seen, 1))
        run.train_acc.append(float(np.mean(model.predict(data.x_train) == data.y_train)))
        run.test_acc.append(float(np.mean(model.predict(data.x_test) == data.y_test)))
    return run


def train_linear(data: Dataset, epochs: int = 50, seed: int = 0, lr: float = DEFAULT_LR, batch: int = DEFAULT_BATCH):
    """Softmax regression baseline; returns test accuracy."""
    rng = np.random.default_rng(seed)
    w = np.zeros((data.n_features, data.n_classes))
    b = np.zeros(data.n_classes)
    n = len(data.x_train)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n - batch + 1, batch):
            idx = order[start : start + batch]
            _, g = _softmax_xent(data.x_train[idx] @ w + b, data.y_train[idx])
            w -= lr * data.x_train[idx].T @ g
            b -= lr * g.sum(axis=0)
    return float(np.mean(np.argmax(data.x_test @ w + b, axis=1) == data.y_test))


# --------------------------------------------------------------------------
# gradient check


def grad_check(model: ToyModel, x: np.ndarray, labels: np.ndarray, h: float = 1e-5, upstream=None) -> dict:
    """Worst relative error of the normalization-layer gradients vs central differences.

    Checks the gradient with respect to every normalization-layer input and
    every gamma/beta, in float64. For range normalization, inputs sitting at
    a channel's min or max are skipped (the range has a kink there).
    ``upstream`` replaces the softmax loss by <upstream, logits> when given.
    The default step sits near the cube root of machine epsilon, which
    balances truncation against cancellation error.
    """
    cfg = model.cfg.with_(fw_format=FP64, bw_format=FP64)
    if cfg.variant == "lightnorm":
        cfg = cfg.with_(variant="range")
    is_range = cfg.variant == "range"

    def loss_and_grad(logits):
        if upstream is not None:
            return float(np.sum(upstream * logits)), upstream
        return _softmax_xent(logits, labels)

    worst = {"inputs": 0.0, "gamma": 0.0, "beta": 0.0}
    logits, saved = model.forward(x, cfg)
    _, dlogits = loss_and_grad(logits)
    tape, _ = saved
    n_layers = len(model.affine)

    # analytic gradients wrt each norm layer's pre-activation input z
    dzs = []
    dgs = []
    dbs = []
    dh = dlogits @ model.weights[-1].T
    for i in reversed(range(n_layers)):
        h_in, z, y, cache = tape[i]
        dy = dh * (y > 0)
        dz, dg, db = norm.backward(dy, cache, cfg)
        dzs.insert(0, dz)
        dgs.insert(0, dg)
        dbs.insert(0, db)
        dh = dz @ model.weights[i].T

    def forward_from(layer, z_override=None, affine=None):
        h = x
        for i, p in enumerate(model.affine):
            z = h @ model.weights[i] + model.biases[i]
            if i == layer and z_override is not None:
                z = z_override
            if affine is not None and i == layer:
                p = affine
            y, _ = norm.forward(z, p, cfg)
            h = np.maximum(y, 0.0)
        lg = h @ model.weights[-1] + model.biases[-1]
        return loss_and_grad(lg)[0]

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), 1e-8)

    for i in range(n_layers):
        z0 = tape[i][1]
        for idx in np.ndindex(z0.shape):
            if is_range:
                c = idx[1]
                col = z0[:, c]
                if z0[idx] == col.min() or z0[idx] == col.max():
                    continue
            zp = z0.copy()
            zm = z0.copy()
            zp[idx] += h
            zm[idx] -= h
            num = (forward_from(i, zp) - forward_from(i, zm)) / (2 * h)
            worst["inputs"] = max(worst["inputs"], rel(num, dzs[i][idx]))
        p = model.affine[i]
        for c in range(p.gamma.shape[0]):
            for name, ana in (("gamma", dgs[i][c]), ("beta", dbs[i][c])):
                plus = AffineParams(p.gamma.copy(), p.beta.copy())
                minus = AffineParams(p.gamma.copy(), p.beta.copy())
                getattr(plus, name)[c] += h
                getattr(minus, name)[c] -= h
                num = (forward_from(i, affine=plus) - forward_from(i, affine=minus)) / (2 * h)
                worst[name] = max(worst[name], rel(num, ana))
    worst["max"] = max(worst.values())
    return worst
