"""Small fully-connected approximator for the local information-gain field.

The network maps a 3-D position to a scalar gain estimate in (0, 1):
ReLU hidden layers, sigmoid output. Inputs are normalized to the sampling
ball, (p - center) / scale, and clamped to [-2, 2]^3 so queries far outside
the ball stay finite. Training minimizes the summed squared error
sum_i (g(p_i) - I_i)^2 with mini-batch Adam; gradients are implemented by
hand and validated against central finite differences.

A fitted model is immutable in practice (query never mutates parameters)
and therefore safe for concurrent reads. Query work is tracked in
query_count / matvec_count / query_time so callers can account for it.
"""

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

ALLOWED_DEPTHS = (4, 6, 8, 10)
INPUT_CLAMP = 2.0


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during fitting."""


@dataclass
class NetworkConfig:
    hidden_layers: int = 6
    width: int = 64
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    learning_rate: float = 0.01
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    early_stop_patience: int = 50
    early_stop_tol: float = 1e-6

    def __post_init__(self):
        if self.hidden_layers not in ALLOWED_DEPTHS:
            raise ValueError(f"hidden_layers must be one of {ALLOWED_DEPTHS}")
        if self.width < 8:
            raise ValueError("width must be >= 8")
        if self.hidden_activation != "relu" or self.output_activation != "sigmoid":
            raise ValueError("only relu hidden / sigmoid output supported")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class GainApproximator:
    """MLP parameters plus the input normalization of its sampling ball."""

    def __init__(self, weights, biases, center, scale):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.center = np.asarray(center, dtype=float).reshape(3)
        self.scale = float(scale)
        self.loss_history: list[float] = []
        self.train_time: float = 0.0
        self.query_count: int = 0
        self.matvec_count: int = 0
        self.query_time: float = 0.0

    @classmethod
    def initialize(cls, cfg: NetworkConfig, center, scale) -> "GainApproximator":
        rng = np.random.default_rng(cfg.seed)
        dims = [3] + [cfg.width] * cfg.hidden_layers + [1]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims, dims[1:]):
            # He-style init for the ReLU stack; the final layer inherits it.
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, center, scale)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def normalize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.clip((x - self.center) / self.scale, -INPUT_CLAMP, INPUT_CLAMP)

    def _forward(self, xn):
        """Forward pass on normalized inputs; returns activations per layer."""
        acts = [xn]
        h = xn
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        out = _sigmoid(h @ self.weights[-1] + self.biases[-1])
        acts.append(out)
        return acts

    def predict(self, x) -> np.ndarray:
        """Batch gain estimates for points x (..., 3), values in (0, 1)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xn = self.normalize(x.reshape(-1, 3))
        out = self._forward(xn)[-1][:, 0]
        return float(out[0]) if single else out

    def query(self, p) -> float:
        """Single-point gain estimate; updates the query cost counters.

        Dedicated 1-D fast path (the planner calls this in a tight loop);
        numerically identical to predict().
        """
        t0 = time.perf_counter()
        h = (np.asarray(p, dtype=float) - self.center) / self.scale
        np.clip(h, -INPUT_CLAMP, INPUT_CLAMP, out=h)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = h @ w
            h += b
            np.maximum(h, 0.0, out=h)
        z = float(h @ self.weights[-1][:, 0]) + float(self.biases[-1][0])
        if z >= 0.0:
            value = 1.0 / (1.0 + math.exp(-z))
        else:
            ez = math.exp(z)
            value = ez / (1.0 + ez)
        self.query_time += time.perf_counter() - t0
        self.query_count += 1
        self.matvec_count += self.n_layers
        return value

    def reset_query_counters(self) -> None:
        self.query_count = 0
        self.matvec_count = 0
        self.query_time = 0.0

    def parameters(self):
        return self.weights + self.biases

    def copy_parameters(self):
        return [p.copy() for p in self.parameters()]

    def set_parameters(self, params) -> None:
        n = len(self.weights)
        self.weights = [np.asarray(p, dtype=float) for p in params[:n]]
        self.biases = [np.asarray(p, dtype=float) for p in params[n:]]

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        payload = {
            "dims": [3] + [w.shape[1] for w in self.weights],
            "weights": [w.reshape(-1).tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "center": self.center.tolist(),
            "scale": self.scale,
            "loss_history": self.loss_history,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "GainApproximator":
        with open(path) as fh:
            payload = json.load(fh)
        dims = payload["dims"]
        weights = [np.asarray(w, dtype=float).reshape(fi, fo)
                   for w, fi, fo in zip(payload["weights"], dims, dims[1:])]
        model = cls(weights, payload["biases"], payload["center"], payload["scale"])
        model.loss_history = list(payload.get("loss_history", []))
        return model

    def write_loss_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss"])
            for i, loss in enumerate(self.loss_history):
                writer.writerow([i, loss])


def loss_and_gradients(model: GainApproximator, points, targets):
    """Summed squared error and its gradients w.r.t. every parameter.

    Returns (loss, weight_grads, bias_grads) with grads ordered like
    model.weights / model.biases.
    """
    x = np.asarray(points, dtype=float).reshape(-1, 3)
    y = np.asarray(targets, dtype=float).reshape(-1)
    acts = model._forward(model.normalize(x))
    out = acts[-1][:, 0]
    err = out - y
    loss = float(np.sum(err**2))

    w_grads = [np.zeros_like(w) for w in model.weights]
    b_grads = [np.zeros_like(b) for b in model.biases]
    # d loss / d pre-activation of the output layer
    delta = (2.0 * err * out * (1.0 - out))[:, None]
    w_grads[-1] = acts[-2].T @ delta
    b_grads[-1] = delta.sum(axis=0)
    for layer in range(model.n_layers - 2, -1, -1):
        delta = delta @ model.weights[layer + 1].T
        delta = delta * (acts[layer + 1] > 0.0)
        w_grads[layer] = acts[layer].T @ delta
        b_grads[layer] = delta.sum(axis=0)
    return loss, w_grads, b_grads


def training_loss(model: GainApproximator, points, targets) -> float:
    x = np.asarray(points, dtype=float).reshape(-1, 3)
    y = np.asarray(targets, dtype=float).reshape(-1)
    out = model._forward(model.normalize(x))[-1][:, 0]
    return float(np.sum((out - y) ** 2))


def fit_points(points, targets, cfg: NetworkConfig, center, scale) -> GainApproximator:
    """Fit a fresh approximator to (points, targets) by mini-batch Adam.

    The returned model carries the best parameters seen (never worse than
    the initialization) and the per-epoch loss history. Raises
    TrainingDivergedError when the loss stops being finite.
    """
    x = np.asarray(points, dtype=float).reshape(-1, 3)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if x.shape[0] < 8:
        raise ValueError("need at least 8 samples to fit")

    t0 = time.perf_counter()
    model = GainApproximator.initialize(cfg, center, scale)
    rng = np.random.default_rng(cfg.seed + 1)

    params = model.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]

    # Divergence surfaces as a non-finite epoch loss; intermediate overflow
    # on that path is expected and not worth a warning.
    with np.errstate(over="ignore", invalid="ignore"):
        _train_loop(model, x, y, cfg, rng, m, v)
    model.train_time = time.perf_counter() - t0
    return model


def _train_loop(model, x, y, cfg, rng, m, v):
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    best_loss = training_loss(model, x, y)
    best_params = model.copy_parameters()
    since_improved = 0

    for _ in range(cfg.epochs):
        order = rng.permutation(x.shape[0])
        for lo in range(0, x.shape[0], cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            _, w_grads, b_grads = loss_and_gradients(model, x[batch], y[batch])
            grads = w_grads + b_grads
            step += 1
            params = model.parameters()
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= beta1
                mi += (1 - beta1) * g
                vi *= beta2
                vi += (1 - beta2) * g * g
                m_hat = mi / (1 - beta1**step)
                v_hat = vi / (1 - beta2**step)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)

        epoch_loss = training_loss(model, x, y)
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(
                f"non-finite loss after {len(model.loss_history) + 1} epochs")
        model.loss_history.append(epoch_loss)
        if epoch_loss < best_loss - cfg.early_stop_tol:
            best_loss = epoch_loss
            best_params = model.copy_parameters()
            since_improved = 0
        else:
            since_improved += 1
            if epoch_loss < best_loss:
                best_loss = epoch_loss
                best_params = model.copy_parameters()
            if since_improved >= cfg.early_stop_patience:
                break

    model.set_parameters(best_params)


def fit(samples, cfg: NetworkConfig) -> GainApproximator:
    """Fit to a GainSampleSet, normalizing by its sampling ball."""
    return fit_points(samples.positions, samples.gains, cfg,
                      samples.center, samples.radius)


def gradient_check(model: GainApproximator, points, targets,
                   h: float = 1e-5, n_entries: int = 50,
                   rng_seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks at least n_entries randomly chosen parameters (all of them when
    the model is smaller). Entries where both gradients are ~0 contribute
    no error (finite differencing is pure noise there).
    """
    x = np.asarray(points, dtype=float).reshape(-1, 3)
    y = np.asarray(targets, dtype=float).reshape(-1)
    _, w_grads, b_grads = loss_and_gradients(model, x, y)
    analytic = w_grads + b_grads
    params = model.parameters()

    rng = np.random.default_rng(rng_seed)
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(max(n_entries, 50), total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for flat in picks:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        local = flat - offsets[which]
        p = params[which].reshape(-1)
        orig = p[local]
        p[local] = orig + h
        up = training_loss(model, x, y)
        p[local] = orig - h
        down = training_loss(model, x, y)
        p[local] = orig
        numeric = (up - down) / (2 * h)
        a = analytic[which].reshape(-1)[local]
        denom = max(abs(a), abs(numeric))
        if denom < 1e-7:
            continue
        worst = max(worst, abs(a - numeric) / denom)
    return worst
