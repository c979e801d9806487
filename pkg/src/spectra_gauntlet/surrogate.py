"""Mode-truncated spectral one-step operator, rollouts and coarse-graining demos.

The operator maps a periodic state ``u`` to the next snapshot::

    v = lift_w * u + lift_b                                  (width channels)
    v = tanh(S_l v + W_l v + b_l)    for l = 0 .. n_layers-2
    v = S_L v + W_L v + b_L          (last layer stays linear)
    G(u) = proj_w . v + proj_b       (plus ``u`` when ``residual``)

where ``S_l`` multiplies the retained modes ``0 <= k <= k_max`` of every
channel by a complex ``width x width`` matrix and drops everything above.
Training runs in torch single precision; :func:`apply_operator` and every
diagnostic re-evaluate the exported weights in float64 numpy.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .field import Grid, PeriodicField, make_grid, mode_weights
from .io import read_operator, write_operator
from .ks import KsDataset, Trajectory
from .nn import DenseTanhRegressor, TrainingDivergedError
from .validation import check_finite_array, check_inputs, check_positive, check_positive_int

logger = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6

# Block order inside an SPGO checkpoint; per-layer entries repeat n_layers times.
PARAM_ORDER = ("lift_w", "lift_b", "spec_w[l]", "pw_w[l]", "pw_b[l]", "proj_w", "proj_b")


@dataclass(frozen=True)
class SpectralOperatorConfig:
    k_max: int = 32
    width: int = 64
    n_layers: int = 4
    lr: float = 1e-3
    steps: int = 6000
    batch_size: int = 32
    seed: int = 0
    residual: bool = True

    def __post_init__(self):
        check_positive_int(self.k_max, "k_max")
        check_positive_int(self.width, "width")
        check_positive_int(self.n_layers, "n_layers")
        check_positive(self.lr, "lr", allow_zero=True)
        check_positive_int(self.steps, "steps", minimum=0)
        check_positive_int(self.batch_size, "batch_size")

    def check_grid(self, n: int) -> None:
        if self.k_max > n // 2:
            raise ValueError(f"k_max={self.k_max} exceeds n/2={n // 2}")


@dataclass(eq=False)
class SpectralOperatorParams:
    n: int
    lift_w: np.ndarray
    lift_b: np.ndarray
    spec_w: list[np.ndarray]
    pw_w: list[np.ndarray]
    pw_b: list[np.ndarray]
    proj_w: np.ndarray
    proj_b: float
    residual: bool = True

    def __post_init__(self):
        self.lift_w = np.asarray(self.lift_w, dtype=np.float64)
        self.lift_b = np.asarray(self.lift_b, dtype=np.float64)
        self.spec_w = [np.asarray(w, dtype=np.complex128) for w in self.spec_w]
        self.pw_w = [np.asarray(w, dtype=np.float64) for w in self.pw_w]
        self.pw_b = [np.asarray(b, dtype=np.float64) for b in self.pw_b]
        self.proj_w = np.asarray(self.proj_w, dtype=np.float64)
        self.proj_b = float(self.proj_b)
        w = self.width
        m = self.k_max + 1
        if self.lift_w.shape != (w,) or self.lift_b.shape != (w,) or self.proj_w.shape != (w,):
            raise ValueError("lift/projection vectors must all have length width")
        if not (len(self.spec_w) == len(self.pw_w) == len(self.pw_b) >= 1):
            raise ValueError("per-layer weight lists must have equal, nonzero length")
        for l in range(self.n_layers):
            if self.spec_w[l].shape != (w, w, m):
                raise ValueError(f"layer {l}: spectral weights have shape {self.spec_w[l].shape}")
            if self.pw_w[l].shape != (w, w) or self.pw_b[l].shape != (w,):
                raise ValueError(f"layer {l}: pointwise weights have wrong shape")
        if m > self.n // 2 + 1:
            raise ValueError(f"k_max={self.k_max} exceeds n/2={self.n // 2}")
        if not all(np.all(np.isfinite(b)) for b in self.blocks()):
            raise ValueError("operator parameters contain NaN or Inf")

    @property
    def width(self) -> int:
        return self.lift_w.shape[0]

    @property
    def k_max(self) -> int:
        return self.spec_w[0].shape[-1] - 1

    @property
    def n_layers(self) -> int:
        return len(self.spec_w)

    def header(self) -> tuple[int, int, int, int, int]:
        return (self.k_max, self.width, self.n_layers, self.n, int(self.residual))

    def blocks(self) -> list[np.ndarray]:
        out = [self.lift_w, self.lift_b]
        for l in range(self.n_layers):
            out += [self.spec_w[l], self.pw_w[l], self.pw_b[l]]
        return out + [self.proj_w, np.array([self.proj_b])]

    def copy(self) -> "SpectralOperatorParams":
        return SpectralOperatorParams(
            self.n, self.lift_w.copy(), self.lift_b.copy(), [w.copy() for w in self.spec_w],
            [w.copy() for w in self.pw_w], [b.copy() for b in self.pw_b], self.proj_w.copy(),
            self.proj_b, self.residual,
        )


def zero_params(n: int, k_max: int, width: int, n_layers: int, residual: bool = False
                ) -> SpectralOperatorParams:
    w, m = width, k_max + 1
    return SpectralOperatorParams(
        n, np.zeros(w), np.zeros(w), [np.zeros((w, w, m), complex) for _ in range(n_layers)],
        [np.zeros((w, w)) for _ in range(n_layers)], [np.zeros(w) for _ in range(n_layers)],
        np.zeros(w), 0.0, residual,
    )


def save_operator(path, params: SpectralOperatorParams) -> None:
    write_operator(path, params.header(), params.blocks())


def _operator_shapes(header):
    k_max, width, n_layers, _, _ = header
    yield (width,), False
    yield (width,), False
    for _ in range(n_layers):
        yield (width, width, k_max + 1), True
        yield (width, width), False
        yield (width,), False
    yield (width,), False
    yield (1,), False


def load_operator(path) -> SpectralOperatorParams:
    header, blocks = read_operator(path, _operator_shapes)
    k_max, width, n_layers, n, residual = header
    it = iter(blocks)
    lift_w, lift_b = next(it), next(it)
    spec_w, pw_w, pw_b = [], [], []
    for _ in range(n_layers):
        spec_w.append(next(it))
        pw_w.append(next(it))
        pw_b.append(next(it))
    proj_w, proj_b = next(it), next(it)
    return SpectralOperatorParams(n, lift_w, lift_b, spec_w, pw_w, pw_b, proj_w, proj_b[0],
                                  bool(residual))


# --------------------------------------------------------------------- forward


def apply_operator_batch(params: SpectralOperatorParams, U: np.ndarray) -> np.ndarray:
    """Float64 forward pass on a batch ``(B, n)`` of states."""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[1] != params.n:
        raise ValueError(f"operator expects states of length {params.n}, got shape {U.shape}")
    n, m = params.n, params.k_max + 1
    v = params.lift_w[None, :, None] * U[:, None, :] + params.lift_b[None, :, None]
    for l in range(params.n_layers):
        vf = np.fft.rfft(v, axis=-1)
        of = np.zeros_like(vf)
        of[..., :m] = np.einsum("bik,iok->bok", vf[..., :m], params.spec_w[l])
        z = np.fft.irfft(of, n, axis=-1)
        z += np.einsum("oi,bix->box", params.pw_w[l], v) + params.pw_b[l][None, :, None]
        v = np.tanh(z) if l < params.n_layers - 1 else z
    out = np.einsum("i,bix->bx", params.proj_w, v) + params.proj_b
    return U + out if params.residual else out


def apply_operator(params: SpectralOperatorParams, u: PeriodicField) -> PeriodicField:
    if u.grid.n != params.n:
        raise ValueError(f"field has {u.grid.n} points but the operator was built for {params.n}")
    return PeriodicField(u.grid, apply_operator_batch(params, u.values[None])[0])


# -------------------------------------------------------------------- training


@dataclass
class OperatorTrainHistory:
    config: SpectralOperatorConfig
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    held_out_rel_l2: float | None = None
    held_out_source: str = "none"
    n_pairs: int = 0
    wall_time: float = 0.0

    def to_rows(self):
        return ["step", "loss"], [[s, l] for s, l in zip(self.steps, self.losses)]


def _torch_module(config: SpectralOperatorConfig, n: int):
    import torch

    class _Operator(torch.nn.Module):
        def __init__(self):
            super().__init__()
            w, m = config.width, config.k_max + 1
            bound = 1.0 / np.sqrt(w)
            scale = 1.0 / (w * w)

            def uniform(shape, b):
                return torch.nn.Parameter((torch.rand(shape) * 2.0 - 1.0) * b)

            self.lift_w = uniform((w,), 1.0)
            self.lift_b = uniform((w,), 1.0)
            self.spec_re = torch.nn.ParameterList(
                [torch.nn.Parameter(scale * torch.randn(w, w, m)) for _ in range(config.n_layers)])
            self.spec_im = torch.nn.ParameterList(
                [torch.nn.Parameter(scale * torch.randn(w, w, m)) for _ in range(config.n_layers)])
            self.pw_w = torch.nn.ParameterList([uniform((w, w), bound) for _ in range(config.n_layers)])
            self.pw_b = torch.nn.ParameterList([uniform((w,), bound) for _ in range(config.n_layers)])
            self.proj_w = uniform((w,), bound)
            self.proj_b = uniform((1,), bound)
            self.m = m

        def forward(self, u):
            v = self.lift_w[None, :, None] * u[:, None, :] + self.lift_b[None, :, None]
            for l in range(config.n_layers):
                vf = torch.fft.rfft(v)
                W = torch.complex(self.spec_re[l], self.spec_im[l])
                of = torch.zeros_like(vf)
                of[..., :self.m] = torch.einsum("bik,iok->bok", vf[..., :self.m], W)
                z = torch.fft.irfft(of, n)
                z = z + torch.einsum("oi,bix->box", self.pw_w[l], v) + self.pw_b[l][None, :, None]
                v = torch.tanh(z) if l < config.n_layers - 1 else z
            out = torch.einsum("i,bix->bx", self.proj_w, v) + self.proj_b
            return u + out if config.residual else out

        def export(self) -> SpectralOperatorParams:
            def f64(t):
                return t.detach().cpu().numpy().astype(np.float64)
            spec = [f64(r) + 1j * f64(i) for r, i in zip(self.spec_re, self.spec_im)]
            return SpectralOperatorParams(
                n, f64(self.lift_w), f64(self.lift_b), spec, [f64(w) for w in self.pw_w],
                [f64(b) for b in self.pw_b], f64(self.proj_w), float(f64(self.proj_b)[0]),
                config.residual,
            )

    return _Operator()


def init_operator(config: SpectralOperatorConfig, n: int) -> SpectralOperatorParams:
    """Parameters at initialisation, exactly as :func:`train_operator` starts from."""
    import torch

    config.check_grid(n)
    torch.manual_seed(config.seed)
    return _torch_module(config, n).export()


def _pairs(dataset):
    if isinstance(dataset, KsDataset):
        return dataset.inputs, dataset.targets
    return check_inputs(dataset)


def _held_out_pairs(dataset, held_out):
    if held_out is not None:
        X, Y = check_inputs(held_out)
        return X, Y, "explicit"
    if isinstance(dataset, KsDataset) and dataset.test_trajectories:
        snaps = [t.snapshots for t in dataset.test_trajectories]
        X = np.concatenate([s[:-1] for s in snaps])
        Y = np.concatenate([s[1:] for s in snaps])
        return X, Y, "test_trajectories"
    return None, None, "none"


def one_step_relative_error(params: SpectralOperatorParams, X, Y, batch: int = 256) -> float:
    """Mean over pairs of ``||G(x) - y|| / ||y||`` in float64."""
    errs = []
    for i in range(0, X.shape[0], batch):
        P = apply_operator_batch(params, X[i:i + batch])
        errs.append(np.linalg.norm(P - Y[i:i + batch], axis=1) / np.linalg.norm(Y[i:i + batch], axis=1))
    return float(np.mean(np.concatenate(errs)))


def train_operator(config: SpectralOperatorConfig, dataset, *, held_out=None, log_every: int = 500):
    """Minibatch Adam on the mean-square one-step error, cosine learning-rate decay.

    ``dataset`` is a :class:`~spectra_gauntlet.ks.KsDataset` or an ``(X, Y)``
    pair of ``(N, n)`` arrays.  The held-out one-step error is measured on
    ``held_out`` if given, else on the dataset's withheld test trajectories.
    """
    import torch

    X, Y = _pairs(dataset)
    X, Y = np.asarray(X, dtype=np.float64), np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or X.shape != Y.shape:
        raise ValueError(f"inputs {X.shape} and targets {Y.shape} must be matching (N, n) arrays")
    n = X.shape[1]
    config.check_grid(n)
    t_start = time.perf_counter()

    torch.manual_seed(config.seed)
    net = _torch_module(config, n)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, max(config.steps, 1))
    gen = torch.Generator().manual_seed(config.seed)
    Xt = torch.tensor(X, dtype=torch.float32)
    Yt = torch.tensor(Y, dtype=torch.float32)
    history = OperatorTrainHistory(config, n_pairs=X.shape[0])

    for step in range(config.steps):
        idx = torch.randint(0, X.shape[0], (min(config.batch_size, X.shape[0]),), generator=gen)
        loss = torch.mean((net(Xt[idx]) - Yt[idx]) ** 2)
        value = float(loss.item())
        if not np.isfinite(value) or value > DIVERGENCE_LOSS:
            raise TrainingDivergedError(f"operator training diverged at step {step}: loss={value:.3e}")
        if step % log_every == 0 or step == config.steps - 1:
            history.steps.append(step)
            history.losses.append(value)
            logger.info("operator step %d loss %.3e", step, value)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()

    params = net.export()
    Xh, Yh, source = _held_out_pairs(dataset, held_out)
    if Xh is not None:
        history.held_out_rel_l2 = one_step_relative_error(params, Xh, Yh)
        history.held_out_source = source
    history.wall_time = time.perf_counter() - t_start
    return params, history


# --------------------------------------------------------------------- rollout


def rollout(params: SpectralOperatorParams, u0: PeriodicField, n_steps: int, *,
            dt_snapshot: float = 0.25, t0: float = 0.0) -> Trajectory:
    """Iterate the operator on its own output; ``n_steps + 1`` snapshots.

    If a state becomes non-finite the trajectory is cut before it and
    ``failure_step`` records the step that failed.
    """
    if u0.grid.n != params.n:
        raise ValueError(f"field has {u0.grid.n} points but the operator was built for {params.n}")
    check_positive_int(n_steps, "n_steps", minimum=0)
    out = np.empty((n_steps + 1, params.n))
    out[0] = u0.values
    failure = None
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(1, n_steps + 1):
            nxt = apply_operator_batch(params, out[j - 1:j])[0]
            if not np.all(np.isfinite(nxt)):
                failure = j
                logger.warning("rollout became non-finite at step %d", j)
                break
            out[j] = nxt
    kept = out if failure is None else out[:failure]
    return Trajectory(u0.grid, kept, t0, dt_snapshot, failure_step=failure)


class SpectralOperatorRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``fit(X, Y)`` on one-step pairs of ``(N, n)`` states."""

    def __init__(self, k_max=32, width=64, n_layers=4, lr=1e-3, steps=6000, batch_size=32,
                 residual=True, random_state=0):
        self.k_max = k_max
        self.width = width
        self.n_layers = n_layers
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.residual = residual
        self.random_state = random_state

    def _config(self) -> SpectralOperatorConfig:
        return SpectralOperatorConfig(self.k_max, self.width, self.n_layers, self.lr, self.steps,
                                      self.batch_size, self.random_state, self.residual)

    def fit(self, X, Y):
        X = check_finite_array(X, ensure_2d=True)
        Y = check_finite_array(Y, ensure_2d=True)
        self.params_, self.history_ = train_operator(self._config(), (X, Y))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        return apply_operator_batch(self.params_, check_finite_array(X, ensure_2d=True))

    def rollout(self, u0, n_steps, dt_snapshot=0.25):
        check_is_fitted(self, "params_")
        u0 = np.asarray(u0, dtype=np.float64)
        field0 = PeriodicField(make_grid(u0.size, 1.0), u0)
        return rollout(self.params_, field0, n_steps, dt_snapshot=dt_snapshot).snapshots


# -------------------------------------------------------------- coarse graining

ROUNDOFF_REL = 1e-12


@dataclass(frozen=True)
class CoarseProjection:
    """Spectral truncation to ``|k| <= k_c``."""

    k_c: int

    def __post_init__(self):
        check_positive_int(self.k_c, "k_c")

    def check_grid(self, grid: Grid) -> None:
        if self.k_c >= grid.n // 2:
            raise ValueError(f"k_c={self.k_c} must be below n/2={grid.n // 2}")


def _project_values(values: np.ndarray, k_c: int) -> np.ndarray:
    c = np.fft.rfft(values, axis=-1)
    high = np.abs(c[..., k_c + 1:])
    scale = np.max(np.abs(c), axis=-1, keepdims=True)
    already = np.all(high <= ROUNDOFF_REL * scale, axis=-1)
    c[..., k_c + 1:] = 0.0
    out = np.fft.irfft(c, values.shape[-1], axis=-1)
    # Band-limited inputs (up to round-off) are returned untouched, so P is
    # bitwise idempotent.
    out[already] = values[already]
    return out


def coarse_project(u: PeriodicField, proj: CoarseProjection) -> PeriodicField:
    proj.check_grid(u.grid)
    return PeriodicField(u.grid, _project_values(u.values[None], proj.k_c)[0])


class CoarseProjector(TransformerMixin, BaseEstimator):
    """Row-wise coarse projection of ``(N, n)`` periodic samples."""

    def __init__(self, k_c=8):
        self.k_c = k_c

    def fit(self, X, y=None):
        X = check_finite_array(X, ensure_2d=True)
        CoarseProjection(self.k_c).check_grid(make_grid(X.shape[1], 1.0))
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_finite_array(X, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return _project_values(X, self.k_c)


# ------------------------------------------------------- conditional-mean demo

MIN_MEMBERS = 100


@dataclass(frozen=True)
class EnsembleSpec:
    """Synthetic fine-scale ensemble ``u = u_c(j) + h``, ``j`` a discrete latent.

    ``kind="two_pattern"``: ``h`` is ``+v_j`` or ``-v_j`` with equal counts.
    ``kind="gaussian"``: ``h`` has independent zero-mean Gaussian Fourier
    coefficients of variance ``sigma**2`` per mode above ``k_c``.
    """

    n: int = 64
    n_conditions: int = 8
    members_per_condition: int = 200
    kind: str = "two_pattern"
    coarse_amplitude: float = 1.0
    sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        make_grid(self.n, 1.0)
        check_positive_int(self.n_conditions, "n_conditions")
        if self.members_per_condition < MIN_MEMBERS:
            raise ValueError(f"need at least {MIN_MEMBERS} members per condition for a stable "
                             f"brute-force mean, got {self.members_per_condition}")
        if self.kind not in ("two_pattern", "gaussian"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.kind == "two_pattern" and self.members_per_condition % 2:
            raise ValueError("two-pattern ensembles need an even member count")
        check_positive(self.coarse_amplitude, "coarse_amplitude")
        check_positive(self.sigma, "sigma")


def _random_band(rng, n: int, k_lo: int, k_hi: int, amplitude: float) -> np.ndarray:
    """Real field whose modes ``k_lo..k_hi`` all have power ``amplitude**2 / 2``."""
    c = np.zeros(n // 2 + 1, complex)
    ks = np.arange(k_lo, k_hi + 1)
    c[ks] = 0.5 * amplitude * np.exp(2j * np.pi * rng.random(ks.size))
    if k_hi == n // 2:
        c[n // 2] = amplitude / np.sqrt(2.0) * rng.choice([-1.0, 1.0])
    return np.fft.irfft(c * n, n)


def make_ensemble(spec: EnsembleSpec, proj: CoarseProjection):
    """Return ``(coarse, members, labels)``; ``members`` is ``(C * M, n)``."""
    grid = make_grid(spec.n, 1.0)
    proj.check_grid(grid)
    rng = np.random.default_rng(spec.seed)
    C, M, n = spec.n_conditions, spec.members_per_condition, spec.n
    coarse = np.stack([_random_band(rng, n, 1, proj.k_c, spec.coarse_amplitude) for _ in range(C)])
    members = np.empty((C, M, n))
    for j in range(C):
        if spec.kind == "two_pattern":
            v = _random_band(rng, n, proj.k_c + 1, n // 2, spec.sigma * np.sqrt(2.0))
            signs = np.repeat([1.0, -1.0], M // 2)
            rng.shuffle(signs)
            members[j] = coarse[j] + signs[:, None] * v
        else:
            c = np.zeros((M, n // 2 + 1), complex)
            k = np.arange(proj.k_c + 1, n // 2)
            c[:, k] = spec.sigma / np.sqrt(2.0) * (rng.standard_normal((M, k.size))
                                                  + 1j * rng.standard_normal((M, k.size))) / np.sqrt(2.0)
            c[:, n // 2] = spec.sigma * rng.standard_normal(M)
            members[j] = coarse[j] + np.fft.irfft(c * n, n, axis=-1)
    labels = np.repeat(np.arange(C), M)
    return coarse, members.reshape(C * M, n), labels


def power_per_mode(U: np.ndarray) -> np.ndarray:
    """One-sided power ``w_k |c_k|^2`` along the last axis."""
    n = U.shape[-1]
    c = np.fft.rfft(U, axis=-1) / n
    return mode_weights(make_grid(n, 1.0)) * np.abs(c) ** 2


@dataclass
class ConditionalMeanRecord:
    spec: EnsembleSpec
    k_c: int
    relative_l2: list[float]
    max_relative_l2: float
    prediction_power: np.ndarray = field(repr=False)
    member_min_power: np.ndarray = field(repr=False)
    member_mean_power: np.ndarray = field(repr=False)
    below_every_member: bool = False
    high_band_energy_prediction: float = 0.0
    high_band_energy_members: float = 0.0
    oracle_margin: float = 0.0
    final_mse: float = float("nan")

    def to_json(self) -> dict:
        return {
            "kind": self.spec.kind,
            "k_c": self.k_c,
            "n": self.spec.n,
            "n_conditions": self.spec.n_conditions,
            "members_per_condition": self.spec.members_per_condition,
            "relative_l2": self.relative_l2,
            "max_relative_l2": self.max_relative_l2,
            "below_every_member": self.below_every_member,
            "high_band_energy_prediction": self.high_band_energy_prediction,
            "high_band_energy_members": self.high_band_energy_members,
            "oracle_margin": self.oracle_margin,
            "final_mse": self.final_mse,
            "prediction_power": self.prediction_power.tolist(),
            "member_min_power": self.member_min_power.tolist(),
        }


def conditional_mean_demo(spec: EnsembleSpec, proj: CoarseProjection,
                          regressor: DenseTanhRegressor | None = None) -> ConditionalMeanRecord:
    """Fit an MSE regressor ``P u -> u`` on the ensemble and compare its output
    with the brute-force per-condition mean and with the members' spectra."""
    coarse, members, labels = make_ensemble(spec, proj)
    C, n = spec.n_conditions, spec.n
    X = _project_values(members, proj.k_c)
    reg = regressor if regressor is not None else DenseTanhRegressor(
        hidden_layer_sizes=(64,), learning_rate=1e-3, n_steps=3000, random_state=spec.seed)
    reg.fit(X, members)

    brute = np.stack([members[labels == j].mean(axis=0) for j in range(C)])
    inputs = np.stack([X[labels == j][0] for j in range(C)])
    pred = reg.predict(inputs)
    rel = np.linalg.norm(pred - brute, axis=1) / np.linalg.norm(brute, axis=1)

    # Sanity check of the oracle: the brute-force mean beats perturbations of it.
    rng = np.random.default_rng(spec.seed + 1)
    margins = []
    for j in range(C):
        grp = members[labels == j]
        base = np.mean((grp - brute[j]) ** 2)
        for _ in range(4):
            pert = brute[j] + 0.01 * np.std(grp) * rng.standard_normal(n)
            margins.append(np.mean((grp - pert) ** 2) - base)

    hi = slice(proj.k_c + 1, None)
    p_pred = power_per_mode(pred)
    p_mem = power_per_mode(members).reshape(C, spec.members_per_condition, -1)
    p_min = p_mem.min(axis=1)
    below = bool(np.all(p_pred[:, hi] <= p_min[:, hi]))
    return ConditionalMeanRecord(
        spec=spec, k_c=proj.k_c, relative_l2=rel.tolist(), max_relative_l2=float(rel.max()),
        prediction_power=p_pred, member_min_power=p_min, member_mean_power=p_mem.mean(axis=1),
        below_every_member=below,
        high_band_energy_prediction=float(p_pred[:, hi].sum(axis=1).mean()),
        high_band_energy_members=float(p_mem[..., hi].sum(axis=-1).mean()),
        oracle_margin=float(min(margins)),
        final_mse=float(reg.history_.records[-1].mse),
    )
