"""Minimal deterministic feedforward network engine.

Everything runs in float64, NHWC layout.  Layers are described by compact
strings ("conv:8", "dense:10", "relu", "maxpool", "flatten"); convolutions
are 5x5, stride 1, valid padding; max-pooling is 2x2.  Training is plain
SGD with classical momentum and is a pure function of (spec, data, config):
the same seed always yields bit-identical parameters.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import FormatError, InputError

DTYPE = np.float64
CONV_KERNEL = 5

MODEL_FORMAT = "mixdistill-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description; validated eagerly so shape bugs fail fast."""

    input_shape: tuple  # (H, W, C)
    layers: tuple       # layer descriptor strings
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise InputError(f"num_classes must be >= 2, got {self.num_classes}")
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        shapes = self.layer_shapes()
        if shapes[-1] != (self.num_classes,):
            raise InputError(
                f"network output shape {shapes[-1]} does not produce {self.num_classes} logits"
            )
        if not self.layers or not self.layers[-1].startswith("dense:"):
            raise InputError("last layer must be a dense layer producing the logits")

    def layer_shapes(self):
        """Shape after each layer, starting from the input shape."""
        shapes = [self.input_shape]
        cur = self.input_shape
        for name in self.layers:
            if name.startswith("dense:"):
                if len(cur) != 1:
                    raise InputError(f"dense layer needs a flat input, got shape {cur}")
                cur = (int(name.split(":")[1]),)
            elif name.startswith("conv:"):
                if len(cur) != 3:
                    raise InputError(f"conv layer needs an HWC input, got shape {cur}")
                h, w, _ = cur
                if h < CONV_KERNEL or w < CONV_KERNEL:
                    raise InputError(f"input {cur} too small for a {CONV_KERNEL}x{CONV_KERNEL} conv")
                cur = (h - CONV_KERNEL + 1, w - CONV_KERNEL + 1, int(name.split(":")[1]))
            elif name == "relu":
                pass
            elif name == "maxpool":
                if len(cur) != 3:
                    raise InputError(f"maxpool needs an HWC input, got shape {cur}")
                h, w, c = cur
                if h % 2 or w % 2:
                    raise InputError(f"maxpool needs even spatial dims, got {cur}")
                cur = (h // 2, w // 2, c)
            elif name == "flatten":
                cur = (int(np.prod(cur)),)
            else:
                raise InputError(f"unknown layer descriptor {name!r}")
            shapes.append(cur)
        return shapes

    def num_params(self):
        total = 0
        shapes = self.layer_shapes()
        for name, shape_in in zip(self.layers, shapes):
            if name.startswith("dense:"):
                out = int(name.split(":")[1])
                total += shape_in[0] * out + out
            elif name.startswith("conv:"):
                out = int(name.split(":")[1])
                total += CONV_KERNEL * CONV_KERNEL * shape_in[2] * out + out
        return total


@dataclass
class StudentModel:
    spec: NetworkSpec
    params: list  # per layer: {"w": ..., "b": ...} or None
    rng_seed: int


@dataclass
class TrainConfig:
    learning_rate: float
    epochs: int
    batch_size: int
    momentum: float = 0.0
    weight_init: str = "fan_in_uniform"
    seed: int = 0
    warm_start: bool = False

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InputError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise InputError("momentum must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise InputError("epochs and batch_size must be positive")
        if self.weight_init != "fan_in_uniform":
            raise InputError(f"unknown weight_init {self.weight_init!r}")


def init_params(spec, seed):
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    shapes = spec.layer_shapes()
    for name, shape_in in zip(spec.layers, shapes):
        if name.startswith("dense:"):
            out = int(name.split(":")[1])
            fan_in = shape_in[0]
            lim = 1.0 / np.sqrt(fan_in)
            params.append({
                "w": rng.uniform(-lim, lim, size=(fan_in, out)).astype(DTYPE),
                "b": np.zeros(out, dtype=DTYPE),
            })
        elif name.startswith("conv:"):
            out = int(name.split(":")[1])
            fan_in = CONV_KERNEL * CONV_KERNEL * shape_in[2]
            lim = 1.0 / np.sqrt(fan_in)
            params.append({
                "w": rng.uniform(-lim, lim, size=(CONV_KERNEL, CONV_KERNEL, shape_in[2], out)).astype(DTYPE),
                "b": np.zeros(out, dtype=DTYPE),
            })
        else:
            params.append(None)
    return params


def new_model(spec, seed):
    return StudentModel(spec=spec, params=init_params(spec, seed), rng_seed=int(seed))


def _check_batch(spec, batch):
    batch = np.asarray(batch, dtype=DTYPE)
    if batch.ndim != 4 or batch.shape[1:] != spec.input_shape:
        raise InputError(
            f"batch shape {batch.shape} does not match input shape {spec.input_shape}"
        )
    return batch


def _forward_cached(model, batch):
    """Forward pass keeping per-layer caches for backprop."""
    x = batch
    caches = []
    for name in model.spec.layers:
        if name.startswith("dense:"):
            p = model.params[len(caches)]
            caches.append(("dense", x))
            x = x @ p["w"] + p["b"]
        elif name.startswith("conv:"):
            p = model.params[len(caches)]
            caches.append(("conv", x))
            x = kernels.conv2d_forward(np.ascontiguousarray(x), p["w"], p["b"])
        elif name == "relu":
            mask = x > 0
            caches.append(("relu", mask))
            x = x * mask
        elif name == "maxpool":
            y, arg = kernels.maxpool2_forward(np.ascontiguousarray(x))
            caches.append(("maxpool", (arg, x.shape)))
            x = y
        elif name == "flatten":
            caches.append(("flatten", x.shape))
            x = x.reshape(x.shape[0], -1)
    return x, caches


def forward(model, batch):
    """Logits for a batch; deterministic for fixed params and input."""
    batch = _check_batch(model.spec, batch)
    logits, _ = _forward_cached(model, batch)
    return logits


def softmax(logits):
    """Row-wise stabilized softmax."""
    z = np.asarray(logits, dtype=DTYPE)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_stochastic(rows, what):
    rows = np.asarray(rows, dtype=DTYPE)
    if np.any(rows < -1e-9) or np.any(np.abs(rows.sum(axis=-1) - 1.0) > 1e-6):
        raise InputError(f"{what} rows must be probability vectors summing to 1")
    return rows


def soft_cross_entropy(pred_probs, target):
    """Mean over the batch of -sum_y target[y] * ln(pred[y] + 1e-12)."""
    pred_probs = _check_stochastic(pred_probs, "prediction")
    target = _check_stochastic(target, "target")
    return float(-np.mean(np.sum(target * np.log(pred_probs + 1e-12), axis=-1)))


def backward(model, batch, targets):
    """Gradients of soft CE(softmax(forward(batch)), targets) w.r.t. params."""
    batch = _check_batch(model.spec, batch)
    targets = _check_stochastic(targets, "target")
    logits, caches = _forward_cached(model, batch)
    probs = softmax(logits)
    # mean-reduced softmax-CE gradient
    grad = (probs - targets) / batch.shape[0]
    grads = [None] * len(model.params)
    for idx in range(len(model.spec.layers) - 1, -1, -1):
        kind, cache = caches[idx]
        if kind == "dense":
            p = model.params[idx]
            grads[idx] = {"w": cache.T @ grad, "b": grad.sum(axis=0)}
            grad = grad @ p["w"].T
        elif kind == "conv":
            p = model.params[idx]
            dx, dw, db = kernels.conv2d_backward(
                np.ascontiguousarray(cache), p["w"], np.ascontiguousarray(grad))
            grads[idx] = {"w": dw, "b": db}
            grad = dx
        elif kind == "relu":
            grad = grad * cache
        elif kind == "maxpool":
            arg, in_shape = cache
            grad = kernels.maxpool2_backward(arg, np.ascontiguousarray(grad), in_shape)
        elif kind == "flatten":
            grad = grad.reshape(cache)
    return grads


def sgd_step(params, grads, velocity, cfg):
    """Classical momentum: v <- mu*v + g; p <- p - lr*v.  Mutates in place."""
    for p, g, v in zip(params, grads, velocity):
        if p is None:
            continue
        for key in ("w", "b"):
            v[key] *= cfg.momentum
            v[key] += g[key]
            p[key] -= cfg.learning_rate * v[key]


def train(spec, images, labels, cfg, initial_params=None):
    """Train a model from scratch; returns (model, per-epoch loss history).

    ``initial_params`` enables warm starts; by default every call starts
    from a fresh cfg.seed initialization.
    """
    images = np.asarray(images, dtype=DTYPE)
    if images.shape[0] == 0:
        raise InputError("cannot train on an empty labeled set")
    labels = _check_stochastic(labels, "label")
    if labels.shape[0] != images.shape[0]:
        raise InputError("images and labels must have equal length")

    rng = np.random.default_rng(cfg.seed)
    if initial_params is not None and cfg.warm_start:
        params = [None if p is None else {k: v.copy() for k, v in p.items()} for p in initial_params]
    else:
        params = init_params(spec, cfg.seed)
    model = StudentModel(spec=spec, params=params, rng_seed=int(cfg.seed))
    velocity = [None if p is None else {k: np.zeros_like(v) for k, v in p.items()} for p in params]

    n = images.shape[0]
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, tb = images[idx], labels[idx]
            logits, caches = _forward_cached(model, xb)
            probs = softmax(logits)
            epoch_loss += -np.sum(tb * np.log(probs + 1e-12))
            grad = (probs - tb) / xb.shape[0]
            grads = [None] * len(params)
            for li in range(len(spec.layers) - 1, -1, -1):
                kind, cache = caches[li]
                if kind == "dense":
                    grads[li] = {"w": cache.T @ grad, "b": grad.sum(axis=0)}
                    grad = grad @ params[li]["w"].T
                elif kind == "conv":
                    dx, dw, db = kernels.conv2d_backward(
                        np.ascontiguousarray(cache), params[li]["w"], np.ascontiguousarray(grad))
                    grads[li] = {"w": dw, "b": db}
                    grad = dx
                elif kind == "relu":
                    grad = grad * cache
                elif kind == "maxpool":
                    arg, in_shape = cache
                    grad = kernels.maxpool2_backward(arg, np.ascontiguousarray(grad), in_shape)
                elif kind == "flatten":
                    grad = grad.reshape(cache)
            sgd_step(params, grads, velocity, cfg)
        history.append(epoch_loss / n)
    return model, history


def predict_probs(model, images, batch_size=256):
    """Class probabilities for a stack of images, evaluated in fixed order."""
    images = np.asarray(images, dtype=DTYPE)
    out = []
    for start in range(0, images.shape[0], batch_size):
        out.append(softmax(forward(model, images[start:start + batch_size])))
    return np.concatenate(out, axis=0)


def evaluate(model, images, labels):
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    images = np.asarray(images, dtype=DTYPE)
    if images.shape[0] == 0:
        raise InputError("cannot evaluate on an empty set")
    preds = predict_probs(model, images).argmax(axis=1)
    return float(np.mean(preds == np.asarray(labels)))


def grad_check(spec, seed, h=1e-5, corruption=0.0):
    """Max scale-floored relative error between backward and central differences.

    Error per entry is |a - n| / max(|a|, |n|, 1e-4); the floor keeps
    finite-difference roundoff on near-zero gradients from dominating.
    ``corruption`` adds a constant to the analytic gradients (negative
    control for the harness itself).
    """
    rng = np.random.default_rng(seed)
    model = new_model(spec, seed)
    batch = rng.uniform(0.0, 1.0, size=(2,) + spec.input_shape)
    t = rng.uniform(0.1, 1.0, size=(2, spec.num_classes))
    targets = t / t.sum(axis=1, keepdims=True)

    analytic = backward(model, batch, targets)

    def loss():
        return soft_cross_entropy(softmax(forward(model, batch)), targets)

    worst = 0.0
    for p, g in zip(model.params, analytic):
        if p is None:
            continue
        for key in ("w", "b"):
            flat_p = p[key].ravel()
            flat_g = g[key].ravel() + corruption
            for i in range(flat_p.size):
                orig = flat_p[i]
                flat_p[i] = orig + h
                up = loss()
                flat_p[i] = orig - h
                down = loss()
                flat_p[i] = orig
                num = (up - down) / (2 * h)
                a = flat_g[i]
                err = abs(a - num) / max(abs(a), abs(num), 1e-4)
                worst = max(worst, err)
    return worst


def save_model(model, path):
    """Write the versioned JSON checkpoint; floats round-trip exactly."""
    payload = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_shape": list(model.spec.input_shape),
        "layers": list(model.spec.layers),
        "num_classes": model.spec.num_classes,
        "rng_seed": model.rng_seed,
        "params": [
            None if p is None else {
                "w": p["w"].ravel().tolist(),
                "w_shape": list(p["w"].shape),
                "b": p["b"].tolist(),
            }
            for p in model.params
        ],
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_model(path):
    try:
        with open(path) as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read model checkpoint {path}: {e}") from e
    if payload.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path}: not a {MODEL_FORMAT} file")
    if payload.get("version") != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    spec = NetworkSpec(
        input_shape=tuple(payload["input_shape"]),
        layers=tuple(payload["layers"]),
        num_classes=payload["num_classes"],
    )
    params = []
    for p, expected in zip(payload["params"], init_params(spec, 0)):
        if p is None:
            params.append(None)
            continue
        w = np.array(p["w"], dtype=DTYPE).reshape(p["w_shape"])
        b = np.array(p["b"], dtype=DTYPE)
        if expected is None or w.shape != expected["w"].shape or b.shape != expected["b"].shape:
            raise FormatError(f"{path}: parameter shapes do not match the declared spec")
        params.append({"w": w, "b": b})
    return StudentModel(spec=spec, params=params, rng_seed=payload["rng_seed"])
