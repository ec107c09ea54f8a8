"""Multi-layer perceptron with ReLU hidden layers, trained with Adam.

All weights and biases of a network live in one flat buffer; the per-layer
matrices are views into it.  This keeps an Adam step to a handful of
vector operations regardless of depth.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonFiniteLoss, ShapeMismatch
from .rng import stream

FORMAT = "auditrepair-mlp"
FORMAT_VERSION = 1
_TINY = np.finfo(np.float64).tiny
_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class MlpParams:
    hidden: tuple[int, ...] = (128, 64, 32)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


class _Layout:
    """Offsets of each layer's weight matrix and bias vector in the flat buffer."""

    def __init__(self, dims):
        self.dims = tuple(int(d) for d in dims)
        self.slices = []
        off = 0
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            w = (off, off + fan_in * fan_out, (fan_in, fan_out))
            off += fan_in * fan_out
            b = (off, off + fan_out, (fan_out,))
            off += fan_out
            self.slices.append((w, b))
        self.size = off

    def views(self, flat):
        out = []
        for (w0, w1, wshape), (b0, b1, bshape) in self.slices:
            out.append((flat[w0:w1].reshape(wshape), flat[b0:b1]))
        return out


@dataclass
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float

    @classmethod
    def zeros(cls, size, params: MlpParams, dtype):
        return cls(0, np.zeros(size, dtype), np.zeros(size, dtype),
                   params.learning_rate, params.beta1, params.beta2, params.epsilon)

    def update(self, theta: np.ndarray, grad: np.ndarray, scratch: np.ndarray) -> None:
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1 - b1) * grad
        self.v *= b2
        np.multiply(grad, grad, out=scratch)
        scratch *= 1 - b2
        self.v += scratch
        # bias corrections folded into the step size and epsilon
        c1 = 1 - b1 ** self.step
        c2 = 1 - b2 ** self.step
        np.sqrt(self.v, out=scratch)
        scratch += self.epsilon * np.sqrt(c2)
        np.divide(self.m, scratch, out=scratch)
        scratch *= self.learning_rate * np.sqrt(c2) / c1
        theta -= scratch


@dataclass
class MlpModel:
    layer_dims: tuple[int, ...]
    theta: np.ndarray
    output: str = "logistic"
    final_loss: float = float("nan")
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        self._layout = _Layout(self.layer_dims)
        if self.theta.shape != (self._layout.size,):
            raise ShapeMismatch(f"expected {self._layout.size} parameters, got {self.theta.shape}")
        if self.output not in ("logistic", "identity"):
            raise ValueError(f"unknown output activation {self.output!r}")

    @property
    def layers(self):
        """[(W, b), ...] as views into ``theta``."""
        return self._layout.views(self.theta)

    @property
    def weights(self):
        return [w for w, _ in self.layers]

    @property
    def biases(self):
        return [b for _, b in self.layers]

    def astype(self, dtype) -> "MlpModel":
        return MlpModel(self.layer_dims, self.theta.astype(dtype), self.output,
                        self.final_loss, list(self.loss_history))

    def predict_proba(self, X) -> np.ndarray:
        return mlp_predict_proba(self, X)

    @classmethod
    def initialize(cls, n_features: int, hidden=(128, 64, 32), seed: int = 0,
                   dtype="float64", output="logistic") -> "MlpModel":
        """He-uniform weights, zero biases."""
        dims = (n_features, *hidden, 1)
        layout = _Layout(dims)
        theta = np.zeros(layout.size, dtype=np.float64)
        rng = stream(seed, "mlp.init")
        for w, _ in layout.views(theta):
            limit = np.sqrt(6.0 / w.shape[0])
            w[...] = rng.uniform(-limit, limit, size=w.shape)
        return cls(dims, theta.astype(dtype), output)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "layer_dims": list(self.layer_dims),
            "output": self.output,
            "final_loss": self.final_loss,
            "layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        if d.get("format") != FORMAT:
            raise ValueError(f"not a serialized MLP (format={d.get('format')!r})")
        parts = []
        for layer in d["layers"]:
            parts.append(np.asarray(layer["weight"], dtype=np.float64).ravel())
            parts.append(np.asarray(layer["bias"], dtype=np.float64))
        return cls(tuple(d["layer_dims"]), np.concatenate(parts), d.get("output", "logistic"),
                   d.get("final_loss", float("nan")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MlpModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _forward(layers, X, output):
    """Returns the list of layer inputs, hidden pre-activations and the raw output."""
    acts = [X]
    pre = []
    h = X
    for i, (w, b) in enumerate(layers):
        z = h @ w
        z += b
        if i < len(layers) - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            h = z
    out = h[:, 0]
    return acts, pre, (_sigmoid(out) if output == "logistic" else out), out


def _loss_and_delta(pred, raw, y, loss, output):
    """Mean loss over the batch and d(loss)/d(raw output)."""
    n = len(y)
    if loss == "bce":
        if output != "logistic":
            raise ValueError("binary cross-entropy needs a logistic output")
        value = float(np.mean(np.logaddexp(0.0, raw) - y * raw))
        delta = (pred - y) / n
    elif loss == "squared":
        resid = pred - y
        value = float(0.5 * np.mean(resid * resid))
        delta = resid / n
        if output == "logistic":
            delta = delta * pred * (1.0 - pred)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return value, delta


def _backward(layers, grads, acts, pre, delta):
    g = delta.reshape(-1, 1).astype(acts[0].dtype, copy=False)
    for i in range(len(layers) - 1, -1, -1):
        gw, gb = grads[i]
        np.matmul(acts[i].T, g, out=gw)
        np.sum(g, axis=0, out=gb)
        if i > 0:
            g = g @ layers[i][0].T
            g *= pre[i - 1] > 0


def loss_and_gradient(model: MlpModel, X, y, loss: str = "bce"):
    """Mean loss on (X, y) and its gradient as a flat vector aligned with ``theta``."""
    X = np.asarray(X, dtype=model.theta.dtype)
    y = np.asarray(y, dtype=model.theta.dtype)
    grad = np.zeros_like(model.theta)
    if len(y) == 0:
        return 0.0, grad
    layers = model.layers
    acts, pre, pred, raw = _forward(layers, X, model.output)
    value, delta = _loss_and_delta(pred, raw, y, loss, model.output)
    _backward(layers, model._layout.views(grad), acts, pre, delta)
    return value, grad


def _check_inputs(X, y):
    X = np.asarray(getattr(X, "values", X))
    y = np.asarray(y)
    if X.ndim != 2:
        raise ShapeMismatch(f"X must be 2-D, got shape {X.shape}")
    if len(X) != len(y):
        raise ShapeMismatch(f"X has {len(X)} rows but y has {len(y)} labels")
    return X, y


def fit_mlp(X, y, params: MlpParams | None = None) -> MlpModel:
    """Mini-batch Adam on mean binary cross-entropy.

    Raises NonFiniteLoss after any epoch whose loss, weights or gradient
    moments stop being finite.

    Shuffling uses one stream per epoch, so a given seed always produces
    the same weights.  ``final_loss`` is the mean training loss of the
    last epoch; ``loss_history`` holds every epoch's mean.
    """
    params = params or MlpParams()
    X, y = _check_inputs(X, y)
    dtype = np.dtype(params.dtype)
    X = np.ascontiguousarray(X, dtype=dtype)
    y = y.astype(dtype)
    n = len(y)
    model = MlpModel.initialize(X.shape[1], params.hidden, params.seed, dtype=dtype)
    if n == 0 or params.epochs == 0:
        return model
    layers = model.layers
    grad = np.zeros_like(model.theta)
    grad_views = model._layout.views(grad)
    scratch = np.empty_like(model.theta)
    adam = AdamState.zeros(model.theta.size, params, dtype)
    bs = params.batch_size
    history = []
    for epoch in range(params.epochs):
        order = stream(params.seed, "mlp.shuffle", epoch).permutation(n)
        total = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, bs):
                batch = order[start:start + bs]
                xb, yb = X[batch], y[batch]
                acts, pre, pred, raw = _forward(layers, xb, "logistic")
                value, delta = _loss_and_delta(pred, raw, yb, "bce", "logistic")
                total += value * len(batch)
                _backward(layers, grad_views, acts, pre, delta)
                adam.update(model.theta, grad, scratch)
        epoch_loss = total / n
        # an overflowed gradient leaves v infinite, which silently freezes Adam
        if not (np.isfinite(epoch_loss) and np.all(np.isfinite(model.theta))
                and np.all(np.isfinite(adam.v))):
            raise NonFiniteLoss(epoch, epoch_loss)
        history.append(epoch_loss)
    model.final_loss = history[-1]
    model.loss_history = history
    return model


def mlp_predict_proba(model: MlpModel, X) -> np.ndarray:
    X = np.asarray(getattr(X, "values", X))
    if X.ndim != 2 or X.shape[1] != model.layer_dims[0]:
        raise ShapeMismatch(f"model expects {model.layer_dims[0]} columns, got shape {X.shape}")
    _, _, pred, _ = _forward(model.layers, X.astype(model.theta.dtype, copy=False), model.output)
    pred = pred.astype(np.float64)
    if model.output == "logistic":
        # saturated logits would otherwise round to exactly 0 or 1
        np.clip(pred, _TINY, _BELOW_ONE, out=pred)
    return pred


def _nudge_off_kinks(model, X, margin, rng, tries=20):
    """Perturb rows whose hidden pre-activations sit within ``margin`` of a ReLU kink."""
    X = X.copy()
    keep = np.ones(len(X), dtype=bool)
    for _ in range(tries):
        _, pre, _, _ = _forward(model.layers, X, model.output)
        near = np.zeros(len(X), dtype=bool)
        for z in pre:
            near |= np.any(np.abs(z) < margin, axis=1)
        near &= keep
        if not near.any():
            return X, keep
        X[near] += rng.normal(0.0, 1e-2, size=(int(near.sum()), X.shape[1]))
    keep &= ~near
    return X, keep


def gradient_check(model: MlpModel, batch, loss: str = "bce", step: float = 1e-5,
                   seed: int = 0) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    Runs in float64 on a copy of ``model``.  Relative error per parameter is
    ``|a - n| / max(|a|, |n|, 1e-7)``, so parameters with vanishing
    gradients are compared on an absolute scale.  An empty batch scores 0.
    """
    X, y = batch
    X, y = _check_inputs(X, y)
    if len(y) == 0:
        return 0.0
    m = model.astype(np.float64)
    X = X.astype(np.float64)
    y = y.astype(np.float64)
    if len(m.layer_dims) > 2:
        X, keep = _nudge_off_kinks(m, X, margin=1e3 * step, rng=stream(seed, "mlp.gradcheck"))
        X, y = X[keep], y[keep]
        if len(y) == 0:
            return 0.0
    _, analytic = loss_and_gradient(m, X, y, loss)
    numeric = np.empty_like(analytic)
    theta = m.theta
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        up, _, _, _ = _eval(m, X, y, loss)
        theta[i] = orig - step
        down, _, _, _ = _eval(m, X, y, loss)
        theta[i] = orig
        numeric[i] = (up - down) / (2 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-7)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _eval(model, X, y, loss):
    acts, pre, pred, raw = _forward(model.layers, X, model.output)
    value, _ = _loss_and_delta(pred, raw, y, loss, model.output)
    return value, acts, pre, pred
