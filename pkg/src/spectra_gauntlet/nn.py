"""Dense tanh networks with hand-written reverse-mode gradients.

Parameters are stored per layer as ``W`` of shape ``(fan_in, fan_out)`` and
``b`` of shape ``(fan_out,)``, so a layer maps row vectors ``h -> h @ W + b``.
The flat parameter vector concatenates ``W0, b0, W1, b1, ...`` (row-major).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .field import Grid, mode_weights
from .validation import check_finite_array, check_inputs, check_positive

logger = logging.getLogger(__name__)

DIVERGENCE_MSE = 1e6


class TrainingDivergedError(RuntimeError):
    """Training loss exceeded the divergence threshold."""


@dataclass(frozen=True)
class NetConfig:
    layer_sizes: tuple[int, ...] = (1, 128, 128, 128, 1)
    activation: str = "tanh"
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 3:
            raise ValueError("need an input size, at least one hidden width and an output size")
        if min(sizes) < 1:
            raise ValueError(f"layer widths must be >= 1, got {sizes}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}; only 'tanh' is available")
        if self.init_scale < 0 or not np.isfinite(self.init_scale):
            raise ValueError(f"init_scale must be finite and >= 0, got {self.init_scale}")
        object.__setattr__(self, "layer_sizes", sizes)


@dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, layer_sizes, theta: np.ndarray) -> "NetworkParams":
        theta = np.asarray(theta, dtype=np.float64)
        weights, biases, offset = [], [], 0
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(theta[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            offset += fan_in * fan_out
            biases.append(theta[offset:offset + fan_out].copy())
            offset += fan_out
        if offset != theta.size:
            raise ValueError(f"flat vector has {theta.size} entries, layout needs {offset}")
        return cls(weights, biases)

    def copy(self) -> "NetworkParams":
        return NetworkParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def init_network(config: NetConfig) -> NetworkParams:
    """Zero biases, ``W ~ N(0, (init_scale / sqrt(fan_in))**2)``."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(config.layer_sizes[:-1], config.layer_sizes[1:]):
        std = config.init_scale / np.sqrt(fan_in)
        weights.append(rng.standard_normal((fan_in, fan_out)) * std)
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases)


def _as_batch(params: NetworkParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    d_in = params.weights[0].shape[0]
    if X.ndim == 0 or (X.ndim == 1 and d_in == 1):
        X = X.reshape(-1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != d_in:
        raise ValueError(f"inputs have {X.shape[1]} features, network expects {d_in}")
    return X


def _forward_cache(params: NetworkParams, X: np.ndarray) -> list[np.ndarray]:
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        h = np.tanh(z) if i < last else z
        acts.append(h)
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite value in network forward pass")
    return acts


def predict(params: NetworkParams, X) -> np.ndarray:
    """Batched forward pass, returns shape ``(n_samples, n_outputs)``."""
    return _forward_cache(params, _as_batch(params, X))[-1]


def forward(params: NetworkParams, x: float) -> float:
    if not np.isfinite(x):
        raise ValueError(f"input must be finite, got {x}")
    out = predict(params, np.array([[float(x)]]))
    return float(out[0, 0])


def _backward(params: NetworkParams, acts: list[np.ndarray], g: np.ndarray):
    """Accumulate parameter gradients for output cotangent ``g`` (n, n_out)."""
    n_layers = len(params.weights)
    grad_W = [None] * n_layers
    grad_b = [None] * n_layers
    for i in reversed(range(n_layers)):
        grad_W[i] = acts[i].T @ g
        grad_b[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ params.weights[i].T) * (1.0 - acts[i] ** 2)
    return grad_W, grad_b


def jacobian(params: NetworkParams, X) -> np.ndarray:
    """Per-sample gradients of a scalar-output network, shape ``(n_samples, p)``.

    Column order matches :meth:`NetworkParams.flat`.
    """
    X = _as_batch(params, X)
    if params.weights[-1].shape[1] != 1:
        raise ValueError("jacobian requires a scalar-output network")
    acts = _forward_cache(params, X)
    n = X.shape[0]
    blocks = []
    g = np.ones((n, 1))
    per_layer = []
    for i in reversed(range(len(params.weights))):
        a = acts[i]
        per_layer.append(((a[:, :, None] * g[:, None, :]).reshape(n, -1), g))
        if i > 0:
            g = (g @ params.weights[i].T) * (1.0 - acts[i] ** 2)
    for dW, db in reversed(per_layer):
        blocks.append(dW)
        blocks.append(db)
    J = np.concatenate(blocks, axis=1)
    if not np.all(np.isfinite(J)):
        raise ValueError("non-finite parameter gradient")
    return J


def param_gradient(params: NetworkParams, x: float) -> np.ndarray:
    if not np.isfinite(x):
        raise ValueError(f"input must be finite, got {x}")
    return jacobian(params, np.array([[float(x)]]))[0]


@dataclass
class TrainRecord:
    step: int
    mse: float
    mode_errors: dict[int, float]


@dataclass
class TrainHistory:
    learning_rate: float
    tracked_modes: tuple[int, ...] = ()
    records: list[TrainRecord] = field(default_factory=list)
    convergence_steps: dict[int, int | None] = field(default_factory=dict)
    threshold: float | None = None
    optimizer: str = "gd"

    def to_rows(self):
        header = ["step", "mse"] + [f"err_k{k}" for k in self.tracked_modes]
        rows = [[r.step, r.mse] + [r.mode_errors[k] for k in self.tracked_modes] for r in self.records]
        return header, rows


def mode_amplitude_errors(residual: np.ndarray, modes) -> dict[int, float]:
    """Amplitude of each tracked Fourier mode of ``residual`` on a uniform grid.

    ``2 |c_k|`` for interior modes, so a unit sine has amplitude 1.
    """
    n = residual.shape[0]
    c = np.fft.rfft(residual) / n
    w = mode_weights(Grid(n, 1.0))
    return {int(k): float(w[k] * np.abs(c[k])) for k in modes}


class _Adam:
    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def direction(self, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = []
        for i, g in enumerate(grads):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            out.append(m_hat / (np.sqrt(v_hat) + self.eps))
        return out


def _check_uniform(x: np.ndarray) -> None:
    if x.size < 4 or (x.size & (x.size - 1)):
        raise ValueError(f"per-mode tracking needs a power-of-two number of samples, got {x.size}")
    dx = np.diff(x)
    if not np.allclose(dx, dx[0], rtol=1e-9, atol=1e-12):
        raise ValueError("per-mode tracking needs samples on a uniform grid")


def train_full_batch(
    params: NetworkParams,
    dataset,
    lr: float,
    steps: int,
    tracked_modes=(),
    *,
    record_stride: int = 100,
    optimizer: str = "gd",
    threshold: float | None = None,
    stop_when_converged: bool = False,
):
    """Full-batch training on ``L = (1/2n) sum (f(x_i) - y_i)^2``.

    ``optimizer="gd"`` is plain gradient descent ``theta -= lr * grad``;
    ``"adam"`` uses the standard bias-corrected Adam moments.  When
    ``threshold`` is given, the first step at which each tracked mode's
    amplitude error drops below it is recorded in
    ``history.convergence_steps`` (checked every step, independent of
    ``record_stride``).
    """
    X, Y = check_inputs(dataset)
    X = _as_batch(params, X)
    if Y.ndim == 1:
        Y = Y[:, None]
    check_positive(lr, "lr", allow_zero=True)
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if optimizer not in ("gd", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    tracked_modes = tuple(int(k) for k in tracked_modes)
    if tracked_modes:
        if X.shape[1] != 1 or Y.shape[1] != 1:
            raise ValueError("per-mode tracking requires scalar inputs and outputs")
        _check_uniform(X[:, 0])

    params = params.copy()
    history = TrainHistory(lr, tracked_modes, threshold=threshold, optimizer=optimizer)
    history.convergence_steps = {k: None for k in tracked_modes} if threshold is not None else {}
    adam = _Adam([p.shape for p in params.weights + params.biases]) if optimizer == "adam" else None
    n = X.shape[0]
    n_layers = len(params.weights)

    for step in range(steps + 1):
        acts = _forward_cache(params, X)
        r = acts[-1] - Y
        mse = float(np.mean(r ** 2))
        if not np.isfinite(mse) or mse > DIVERGENCE_MSE:
            raise TrainingDivergedError(
                f"training diverged at step {step}: mse={mse:.3e} (lr={lr}, optimizer={optimizer})"
            )
        errs = mode_amplitude_errors(r[:, 0], tracked_modes) if tracked_modes else {}
        if threshold is not None:
            for k, e in errs.items():
                if history.convergence_steps[k] is None and e < threshold:
                    history.convergence_steps[k] = step
        if step % record_stride == 0 or step == steps:
            history.records.append(TrainRecord(step, mse, errs))
        if step == steps:
            break
        if stop_when_converged and threshold is not None and all(
            v is not None for v in history.convergence_steps.values()
        ):
            if history.records[-1].step != step:
                history.records.append(TrainRecord(step, mse, errs))
            break
        grad_W, grad_b = _backward(params, acts, r / n)
        if adam is None:
            for i in range(n_layers):
                params.weights[i] -= lr * grad_W[i]
                params.biases[i] -= lr * grad_b[i]
        else:
            dirs = adam.direction(grad_W + grad_b)
            for i in range(n_layers):
                params.weights[i] -= lr * dirs[i]
                params.biases[i] -= lr * dirs[n_layers + i]
    return params, history


class DenseTanhRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`train_full_batch`.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Hidden widths; input/output sizes are inferred from the data.
    init_scale : float
        Weight standard deviation multiplier, ``std = init_scale / sqrt(fan_in)``.
    learning_rate : float
    n_steps : int
        Number of full-batch updates.
    optimizer : {"gd", "adam"}
    record_stride : int
    tracked_modes : tuple of int
        Fourier modes of the training residual to log (scalar 1-D data only).
    random_state : int
    """

    def __init__(
        self,
        hidden_layer_sizes=(128, 128, 128),
        init_scale=1.0,
        learning_rate=1e-3,
        n_steps=1000,
        optimizer="adam",
        record_stride=100,
        tracked_modes=(),
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.init_scale = init_scale
        self.learning_rate = learning_rate
        self.n_steps = n_steps
        self.optimizer = optimizer
        self.record_stride = record_stride
        self.tracked_modes = tracked_modes
        self.random_state = random_state

    def fit(self, X, y):
        X = check_finite_array(X, ensure_2d=True)
        y = check_finite_array(y)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} samples but y has {y.shape[0]}")
        n_out = 1 if y.ndim == 1 else y.shape[1]
        config = NetConfig(
            (X.shape[1], *self.hidden_layer_sizes, n_out),
            init_scale=self.init_scale,
            seed=self.random_state,
        )
        self.params_, self.history_ = train_full_batch(
            init_network(config),
            (X, y),
            self.learning_rate,
            self.n_steps,
            self.tracked_modes,
            record_stride=self.record_stride,
            optimizer=self.optimizer,
        )
        self.n_features_in_ = X.shape[1]
        self._single_output = y.ndim == 1
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_finite_array(X, ensure_2d=True)
        out = predict(self.params_, X)
        return out[:, 0] if self._single_output else out
