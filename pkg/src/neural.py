"""
neural.py: a small numpy network library for the forecasters.

Dense layers, the LSTM cell (separate W/U/b per gate), MSE loss, exact
gradients with backpropagation through time, Glorot initialization, Adam
with global-norm clipping, and a seeded training loop with early stopping.
Everything runs in float64.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from src.config import make_rng
from src.errors import DivergenceError, NonFiniteError, ShapeError, SpecError

logger = logging.getLogger(__name__)


# -----------------------------
# Activations
# -----------------------------
def sigmoid(x):
    return expit(x)


def relu(x):
    return np.maximum(x, 0.0)


def identity(x):
    return x


# derivative expressed through the activation output a and pre-activation z
ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "sigmoid": (sigmoid, lambda z, a: a * (1.0 - a)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (relu, lambda z, a: (z > 0).astype(float)),
    "identity": (identity, lambda z, a: np.ones_like(z)),
}


def glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


# -----------------------------
# Dense layer
# -----------------------------
@dataclass(eq=False)
class DenseLayer:
    W: np.ndarray  # (n_out, n_in)
    b: np.ndarray  # (n_out,)
    activation: str = "identity"

    PARAM_NAMES = ("W", "b")

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"Unknown activation {self.activation!r}")
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ShapeError(f"Dense layer shapes W{self.W.shape} and b{self.b.shape} disagree")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int, activation: str) -> "DenseLayer":
        if n_in < 1 or n_out < 1:
            raise SpecError(f"Layer widths must be positive, got {n_in} -> {n_out}")
        return cls(glorot(rng, n_out, n_in), np.zeros(n_out), activation)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"Dense layer expects width {self.n_in}, got {x.shape[-1]}")
        z = x @ self.W.T + self.b
        a = ACTIVATIONS[self.activation][0](z)
        return a, (x, z, a)

    def backward(self, da: np.ndarray, cache: tuple) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        x, z, a = cache
        dz = da * ACTIVATIONS[self.activation][1](z, a)
        return dz @ self.W, {"W": dz.T @ x, "b": dz.sum(axis=0)}


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    """sigma(W x + b) for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError(f"dense_forward takes a vector, got shape {x.shape}")
    return layer.forward(x)[0]


# -----------------------------
# LSTM cell
# -----------------------------
GATES = ("f", "i", "o", "c")


@dataclass(eq=False)
class LstmCell:
    W_f: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    U_f: np.ndarray
    U_i: np.ndarray
    U_o: np.ndarray
    U_c: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    PARAM_NAMES = tuple(f"W_{g}" for g in GATES) + tuple(f"U_{g}" for g in GATES) + tuple(f"b_{g}" for g in GATES)

    def __post_init__(self) -> None:
        for name in self.PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        H, d = self.W_f.shape
        if H < 1:
            raise SpecError("LSTM hidden size must be positive")
        for g in GATES:
            if getattr(self, f"W_{g}").shape != (H, d) or getattr(self, f"U_{g}").shape != (H, H):
                raise ShapeError(f"LSTM gate {g!r} matrices are not ({H}, {d}) / ({H}, {H})")
            if getattr(self, f"b_{g}").shape != (H,):
                raise ShapeError(f"LSTM gate {g!r} bias is not ({H},)")

    @property
    def hidden_size(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_f.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden_size: int) -> "LstmCell":
        if input_size < 1 or hidden_size < 1:
            raise SpecError(f"LSTM sizes must be positive, got input={input_size}, hidden={hidden_size}")
        W = {f"W_{g}": glorot(rng, hidden_size, input_size) for g in GATES}
        U = {f"U_{g}": glorot(rng, hidden_size, hidden_size) for g in GATES}
        b = {f"b_{g}": np.zeros(hidden_size) for g in GATES}
        b["b_f"] = np.ones(hidden_size)
        return cls(**W, **U, **b)

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmCell":
        return cls(
            **{f"W_{g}": np.zeros((hidden_size, input_size)) for g in GATES},
            **{f"U_{g}": np.zeros((hidden_size, hidden_size)) for g in GATES},
            **{f"b_{g}": np.zeros(hidden_size) for g in GATES},
        )

    def _step(self, x, h, c):
        f = sigmoid(x @ self.W_f.T + h @ self.U_f.T + self.b_f)
        i = sigmoid(x @ self.W_i.T + h @ self.U_i.T + self.b_i)
        o = sigmoid(x @ self.W_o.T + h @ self.U_o.T + self.b_o)
        g = np.tanh(x @ self.W_c.T + h @ self.U_c.T + self.b_c)
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        return o * tc, c_new, (x, h, c, f, i, o, g, tc)

    def forward_sequence(self, X: np.ndarray) -> tuple[np.ndarray, list]:
        """X is (N, T, d); returns h_T (N, H) and the per-step caches."""
        if X.ndim != 3 or X.shape[2] != self.input_size:
            raise ShapeError(f"LSTM expects (N, T, {self.input_size}) input, got {X.shape}")
        if X.shape[1] < 1:
            raise ShapeError("LSTM input sequence is empty")
        N = X.shape[0]
        h = np.zeros((N, self.hidden_size))
        c = np.zeros((N, self.hidden_size))
        caches = []
        for t in range(X.shape[1]):
            h, c, cache = self._step(X[:, t, :], h, c)
            caches.append(cache)
        return h, caches

    def backward_sequence(self, dh_T: np.ndarray, caches: list) -> dict[str, np.ndarray]:
        grads = {name: np.zeros_like(getattr(self, name)) for name in self.PARAM_NAMES}
        dh = dh_T
        dc = np.zeros_like(dh_T)
        for x, h_prev, c_prev, f, i, o, g, tc in reversed(caches):
            dc = dc + dh * o * (1.0 - tc * tc)
            dz = {
                "o": dh * tc * o * (1.0 - o),
                "f": dc * c_prev * f * (1.0 - f),
                "i": dc * g * i * (1.0 - i),
                "c": dc * i * (1.0 - g * g),
            }
            dh = np.zeros_like(h_prev)
            for gate, d in dz.items():
                grads[f"W_{gate}"] += d.T @ x
                grads[f"U_{gate}"] += d.T @ h_prev
                grads[f"b_{gate}"] += d.sum(axis=0)
                dh += d @ getattr(self, f"U_{gate}")
            dc = dc * f
        return grads


def lstm_step(cell: LstmCell, x_t, h_prev, c_prev) -> tuple[np.ndarray, np.ndarray]:
    x_t = np.asarray(x_t, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    c_prev = np.asarray(c_prev, dtype=float)
    if x_t.shape[-1:] != (cell.input_size,):
        raise ShapeError(f"x_t must have length {cell.input_size}, got shape {x_t.shape}")
    if h_prev.shape[-1:] != (cell.hidden_size,) or c_prev.shape != h_prev.shape:
        raise ShapeError(f"States must have length {cell.hidden_size}")
    h, c, _ = cell._step(x_t, h_prev, c_prev)
    return h, c


def lstm_forward(cell: LstmCell, sequence) -> np.ndarray:
    """Final hidden state of a (T, d) sequence from zero initial states."""
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"lstm_forward needs a non-empty (T, d) sequence, got {seq.shape}")
    h = np.zeros(cell.hidden_size)
    c = np.zeros(cell.hidden_size)
    for x_t in seq:
        h, c = lstm_step(cell, x_t, h, c)
    return h


# -----------------------------
# Loss
# -----------------------------
def mse_loss(predictions, targets) -> float:
    """Mean over samples of the squared Euclidean error."""
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(targets, dtype=float)
    if p.shape != y.shape or p.size == 0:
        raise ShapeError(f"Predictions {p.shape} and targets {y.shape} must match and be non-empty")
    diff = (p - y).reshape(p.shape[0], -1)
    return float(np.mean(np.sum(diff * diff, axis=1)))


# -----------------------------
# Networks
# -----------------------------
@dataclass(eq=False)
class Network:
    """
    LSTM branches whose final hidden states are concatenated into a dense head.

    ``branches`` pairs an input index with a cell. With no branches the head
    reads ``inputs[0]`` directly (the plain DNN).
    """

    tag: str
    branches: tuple[tuple[int, LstmCell], ...]
    head: tuple[DenseLayer, ...]

    def __post_init__(self) -> None:
        if not self.head:
            raise SpecError("A network needs at least one dense layer")
        for prev, nxt in zip(self.head, self.head[1:]):
            if prev.n_out != nxt.n_in:
                raise ShapeError(f"Head widths {prev.n_out} -> {nxt.n_in} do not chain")
        if self.branches and sum(c.hidden_size for _, c in self.branches) != self.head[0].n_in:
            raise ShapeError("Concatenated branch width does not match the head input")

    @property
    def output_size(self) -> int:
        return self.head[-1].n_out

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for k, (_, cell) in enumerate(self.branches):
            out += [(f"branch{k}.{n}", getattr(cell, n)) for n in cell.PARAM_NAMES]
        for k, layer in enumerate(self.head):
            out += [(f"head{k}.{n}", getattr(layer, n)) for n in layer.PARAM_NAMES]
        return out

    @property
    def n_parameters(self) -> int:
        return int(sum(a.size for _, a in self.parameters()))

    def parameter_arrays(self) -> list[np.ndarray]:
        return [a.copy() for _, a in self.parameters()]

    def load_parameters(self, arrays: Sequence[np.ndarray]) -> None:
        owners = [(cell, n) for _, cell in self.branches for n in cell.PARAM_NAMES]
        owners += [(layer, n) for layer in self.head for n in layer.PARAM_NAMES]
        if len(arrays) != len(owners):
            raise ShapeError(f"Expected {len(owners)} parameter arrays, got {len(arrays)}")
        for (obj, name), arr in zip(owners, arrays):
            arr = np.asarray(arr, dtype=float)
            if arr.shape != getattr(obj, name).shape:
                raise ShapeError(f"Parameter {name} has shape {getattr(obj, name).shape}, got {arr.shape}")
            setattr(obj, name, arr.copy())

    def _forward(self, inputs: Sequence[np.ndarray]):
        caches = []
        if self.branches:
            states = []
            for idx, cell in self.branches:
                h, cache = cell.forward_sequence(np.asarray(inputs[idx], dtype=float))
                states.append(h)
                caches.append(cache)
            a = np.concatenate(states, axis=1)
        else:
            a = np.asarray(inputs[0], dtype=float)
        head_caches = []
        for layer in self.head:
            a, cache = layer.forward(a)
            head_caches.append(cache)
        return a, caches, head_caches

    def forward(self, inputs: Sequence[np.ndarray]) -> np.ndarray:
        out = self._forward(inputs)[0]
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{self.tag} produced non-finite outputs")
        return out

    def loss_and_gradients(self, inputs: Sequence[np.ndarray], target: np.ndarray) -> tuple[float, list[np.ndarray]]:
        pred, branch_caches, head_caches = self._forward(inputs)
        loss = mse_loss(pred, target)
        d = 2.0 * (pred - target) / pred.shape[0]

        head_grads = []
        for layer, cache in zip(reversed(self.head), reversed(head_caches)):
            d, g = layer.backward(d, cache)
            head_grads.append([g[n] for n in layer.PARAM_NAMES])
        head_grads.reverse()

        grads: list[np.ndarray] = []
        offset = 0
        for (_, cell), cache in zip(self.branches, branch_caches):
            H = cell.hidden_size
            g = cell.backward_sequence(d[:, offset : offset + H], cache)
            grads += [g[n] for n in cell.PARAM_NAMES]
            offset += H
        for g in head_grads:
            grads += g
        return loss, grads

    def to_dict(self) -> dict:
        return {
            "architecture": self.tag,
            "branches": [
                {"input": idx, "input_size": c.input_size, "hidden_size": c.hidden_size} for idx, c in self.branches
            ],
            "head": [{"n_in": l.n_in, "n_out": l.n_out, "activation": l.activation} for l in self.head],
            "shapes": [list(a.shape) for _, a in self.parameters()],
            "parameters": [a.ravel().tolist() for _, a in self.parameters()],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Network":
        branches = tuple((int(b["input"]), LstmCell.zeros(b["input_size"], b["hidden_size"])) for b in obj["branches"])
        head = tuple(
            DenseLayer(np.zeros((h["n_out"], h["n_in"])), np.zeros(h["n_out"]), h["activation"]) for h in obj["head"]
        )
        net = cls(obj["architecture"], branches, head)
        net.load_parameters(
            [np.asarray(flat, dtype=float).reshape(shape) for flat, shape in zip(obj["parameters"], obj["shapes"])]
        )
        return net


def dense_head(rng: np.random.Generator, sizes: Sequence[int], hidden_activation: str = "relu") -> tuple[DenseLayer, ...]:
    """Affine layers sizes[0] -> ... -> sizes[-1]; identity on the last one."""
    if len(sizes) < 2:
        raise SpecError("A dense stack needs an input and an output width")
    last = len(sizes) - 2
    return tuple(
        DenseLayer.init(rng, n_in, n_out, "identity" if k == last else hidden_activation)
        for k, (n_in, n_out) in enumerate(zip(sizes, sizes[1:]))
    )


def gradient_check(network: Network, inputs: Sequence[np.ndarray], target: np.ndarray, step: float = 1e-5) -> float:
    """
    Largest relative error between analytic and central-difference gradients.

    Relative error is |a - n| / max(|a|, |n|, 1e-5), so parameters whose
    gradient is essentially zero are judged on absolute error.
    """
    _, analytic = network.loss_and_gradients(inputs, target)
    arrays = network.parameter_arrays()
    worst = 0.0
    for k, arr in enumerate(arrays):
        for j in range(arr.size):
            trial = [a.copy() for a in arrays]
            trial[k].flat[j] += step
            network.load_parameters(trial)
            up = mse_loss(network._forward(inputs)[0], target)
            trial[k].flat[j] -= 2 * step
            network.load_parameters(trial)
            down = mse_loss(network._forward(inputs)[0], target)
            numeric = (up - down) / (2 * step)
            a = analytic[k].flat[j]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-5))
    network.load_parameters(arrays)
    return worst


# -----------------------------
# Adam
# -----------------------------
@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def clip_by_global_norm(grads: Sequence[np.ndarray], clip: float) -> list[np.ndarray]:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > clip:
        return [g * (clip / norm) for g in grads]
    return list(grads)


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    clip: float = 5.0,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and a new state."""
    grads = clip_by_global_norm(grads, clip)
    t = state.step + 1
    m = [beta1 * m_ + (1 - beta1) * g for m_, g in zip(state.m, grads)]
    v = [beta2 * v_ + (1 - beta2) * g * g for v_, g in zip(state.v, grads)]
    new = []
    for p, m_, v_ in zip(params, m, v):
        m_hat = m_ / (1 - beta1**t)
        v_hat = v_ / (1 - beta2**t)
        new.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return new, AdamState(m, v, t)


# -----------------------------
# Training
# -----------------------------
@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise SpecError("TrainConfig values must be positive")
        if self.clip_norm <= 0:
            raise SpecError("clip_norm must be positive")
        if self.patience > self.max_epochs:
            raise SpecError(f"patience ({self.patience}) exceeds max_epochs ({self.max_epochs})")
        if self.seed < 0:
            raise SpecError("seed must be non-negative")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "clip_norm": self.clip_norm,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        return cls(**{k: obj[k] for k in cls().to_dict() if k in obj})


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    network: Network
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")

    @property
    def stopped_early(self) -> bool:
        return bool(self.history) and self.history[-1].epoch > self.best_epoch


def evaluate_loss(network: Network, inputs: Sequence[np.ndarray], target: np.ndarray, batch_size: int = 4096) -> float:
    """MSE over the whole set, evaluated in fixed-order chunks."""
    n = target.shape[0]
    total = 0.0
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        pred = network._forward([a[sl] for a in inputs])[0]
        diff = (pred - target[sl]).reshape(pred.shape[0], -1)
        total += float(np.sum(diff * diff))
    return total / n


def train(
    network: Network,
    train_inputs: Sequence[np.ndarray],
    train_target: np.ndarray,
    val_inputs: Sequence[np.ndarray],
    val_target: np.ndarray,
    config: TrainConfig = TrainConfig(),
    stream: Sequence[int] = (),
) -> TrainResult:
    """
    Mini-batch Adam on training MSE with early stopping on validation MSE.

    The network is updated in place and finally holds the parameters of the
    best validation epoch. ``stream`` extends the seed so that different
    (model, fold) runs shuffle independently.
    """
    n = train_target.shape[0]
    if n == 0 or val_target.shape[0] == 0:
        raise SpecError("Training and validation sets must be non-empty")
    rng = make_rng(config.seed, *stream)
    params = network.parameter_arrays()
    state = AdamState.zeros_like(params)
    result = TrainResult(network=network)
    best_params = [p.copy() for p in params]
    wait = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = network.loss_and_gradients([a[idx] for a in train_inputs], train_target[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, f"{network.tag}: non-finite training loss")
            params, state = adam_step(params, grads, state, lr=config.learning_rate, clip=config.clip_norm)
            network.load_parameters(params)
            total += loss * idx.size
        val_loss = evaluate_loss(network, val_inputs, val_target)
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch, f"{network.tag}: non-finite validation loss")
        result.history.append(EpochRecord(epoch, total / n, val_loss))
        logger.debug("%s epoch %d: train %.6g val %.6g", network.tag, epoch, total / n, val_loss)

        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best_params = [p.copy() for p in params]
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                logger.info("%s: early stop at epoch %d (best %d)", network.tag, epoch, result.best_epoch)
                break

    network.load_parameters(best_params)
    return result
