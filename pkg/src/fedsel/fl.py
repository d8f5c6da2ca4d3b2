"""Minimal deterministic federated-learning engine.

A softmax-output MLP trained with Adam on categorical cross-entropy,
FedAvg aggregation, single-client probing, and the multi-round training
loop.  Everything is a pure function of (inputs, seed): repeated runs
are bit-identical, and no call mutates its input parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

ADAM_STEP = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class FlError(ValueError):
    """Shape, layout, or empty-dataset violation."""


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes of the classifier: ReLU hiddens, softmax output."""

    input_dim: int
    hidden_dims: tuple[int, ...] = (25, 25)
    output_dim: int = 25

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes())


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector plus the per-layer layout it packs."""

    values: np.ndarray
    layout: tuple[tuple[int, int], ...]

    def __post_init__(self):
        expected = sum(fi * fo + fo for fi, fo in self.layout)
        if self.values.shape != (expected,):
            raise FlError(
                f"parameter vector has shape {self.values.shape}, "
                f"layout needs ({expected},)"
            )
        if not np.all(np.isfinite(self.values)):
            raise FlError("parameter vector contains non-finite values")

    def unpack(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per-layer (weights, bias) views into the flat vector."""
        layers = []
        offset = 0
        for fan_in, fan_out in self.layout:
            w = self.values[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = self.values[offset : offset + fan_out]
            offset += fan_out
            layers.append((w, b))
        return layers


@dataclass(frozen=True)
class TrainingPlan:
    """Round/epoch schedule; defaults match the reference configuration."""

    rounds: int = 20
    epochs: int = 8
    batch_size: int = 3
    cycle_period: float = 1.0

    def __post_init__(self):
        if self.rounds < 0 or self.epochs < 0:
            raise FlError("rounds and epochs must be nonnegative")
        if self.batch_size < 1:
            raise FlError("batch_size must be positive")
        if self.cycle_period <= 0:
            raise FlError("cycle_period must be positive")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix in [0, 1] with integer class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2:
            raise FlError("features must be a 2-D matrix")
        if len(self.features) != len(self.labels):
            raise FlError(
                f"{len(self.features)} feature rows vs {len(self.labels)} labels"
            )
        if not np.all(np.isfinite(self.features)):
            raise FlError("features contain non-finite values")

    def __len__(self) -> int:
        return len(self.features)

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.features[rows], self.labels[rows])


def init_model(spec: MlpSpec, seed: int) -> ModelParams:
    """Deterministic init: weights uniform +-sqrt(6/(fan_in+fan_out)), biases 0."""
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in spec.layer_shapes():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ModelParams(np.concatenate(chunks), tuple(spec.layer_shapes()))


def _forward_pass(params: ModelParams, batch: np.ndarray):
    """Return (per-layer pre-activations, activations, probabilities)."""
    layers = params.unpack()
    if batch.shape[1] != layers[0][0].shape[0]:
        raise FlError(
            f"batch has {batch.shape[1]} columns, model expects "
            f"{layers[0][0].shape[0]}"
        )
    acts = [batch]
    pre = []
    h = batch
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        pre.append(z)
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0)
            acts.append(h)
    logits = pre[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return pre, acts, probs


def forward(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Class-probability matrix; rows sum to 1 (max-subtracted softmax)."""
    return _forward_pass(params, np.asarray(batch, dtype=np.float64))[2]


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    n = len(labels)
    picked = probs[np.arange(n), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def loss_and_grad(
    params: ModelParams, batch: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its flat analytic gradient."""
    batch = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels)
    layers = params.unpack()
    pre, acts, probs = _forward_pass(params, batch)
    n = len(labels)
    loss = cross_entropy(probs, labels)

    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w.T) * (pre[i - 1] > 0.0)

    flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    return loss, flat


def train_local(
    params: ModelParams, data: Dataset, plan: TrainingPlan, seed: int
) -> ModelParams:
    """One client's local pass: ``plan.epochs`` epochs of minibatch Adam.

    Adam state is fresh per call (optimizer state is never communicated);
    batch order is reshuffled deterministically per (seed, epoch).  The
    input parameters are left untouched.
    """
    if len(data) == 0:
        raise FlError("cannot train on an empty dataset")
    theta = params.values.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    t = 0
    n = len(data)
    for epoch in range(plan.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(n)
        for start in range(0, n, plan.batch_size):
            rows = order[start : start + plan.batch_size]
            _, grad = loss_and_grad(
                ModelParams(theta, params.layout),
                data.features[rows],
                data.labels[rows],
            )
            t += 1
            m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
            v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
            m_hat = m / (1.0 - ADAM_BETA1**t)
            v_hat = v / (1.0 - ADAM_BETA2**t)
            theta = theta - ADAM_STEP * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return ModelParams(theta, params.layout)


def evaluate(params: ModelParams, test: Dataset) -> float:
    """Argmax accuracy; ties break toward the lowest class index."""
    if len(test) == 0:
        raise FlError("cannot evaluate on an empty dataset")
    probs = forward(params, test.features)
    predicted = probs.argmax(axis=1)
    return float(np.mean(predicted == test.labels))


def fedavg(
    param_sets: list[ModelParams], weights: list[float] | None = None
) -> ModelParams:
    """Component-wise mean of parameter vectors (unweighted by default)."""
    if not param_sets:
        raise FlError("fedavg requires at least one parameter set")
    layout = param_sets[0].layout
    for p in param_sets[1:]:
        if p.layout != layout:
            raise FlError("fedavg requires identical parameter layouts")
    stacked = np.stack([p.values for p in param_sets])
    if weights is None:
        mean = stacked.mean(axis=0)
    else:
        if len(weights) != len(param_sets):
            raise FlError("one weight per parameter set required")
        w = np.asarray(weights, dtype=np.float64)
        mean = (stacked * w[:, None]).sum(axis=0) / w.sum()
    return ModelParams(mean, layout)


def probe_client(
    global_init: ModelParams,
    client_data: Dataset,
    test: Dataset,
    plan: TrainingPlan,
    seed: int,
) -> float:
    """One-round single-client test: local training then server-side accuracy.

    No averaging is involved; ``global_init`` is not modified, so every
    candidate in a cycle probes from the same starting point.
    """
    trained = train_local(global_init, client_data, plan, seed)
    return evaluate(trained, test)


def round_client_seed(seed: int, round_idx: int, client_idx: int) -> int:
    """Stable per-(round, client) seed for the local-training shuffles."""
    return int(np.random.SeedSequence([seed, round_idx, client_idx]).generate_state(1)[0])


def federated_train(
    global_init: ModelParams,
    clients: list[Dataset],
    test: Dataset,
    plan: TrainingPlan,
    seed: int,
) -> tuple[ModelParams, list[float]]:
    """K rounds of broadcast -> local training -> FedAvg.

    The global model persists across rounds (no re-initialization).
    Returns the final parameters and the per-round test-accuracy history.
    """
    if not clients:
        raise FlError("federated_train requires at least one client")
    global_params = global_init
    history = []
    for k in range(plan.rounds):
        updated = [
            train_local(global_params, client, plan, round_client_seed(seed, k, i))
            for i, client in enumerate(clients)
        ]
        global_params = fedavg(updated)
        history.append(evaluate(global_params, test))
    return global_params, history
