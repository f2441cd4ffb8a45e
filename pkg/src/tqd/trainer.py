"""Toy flow-matching trainer with hand-written reverse-mode gradients.

The velocity model is a small tanh MLP over flattened video pixels plus
sinusoidal timestep features, trained to regress the straight-path
velocity target x1 - x0 at x_t = t*x1 + (1-t)*x0. Everything runs in
float64 and the backward pass is derived by hand, so gradients can be
checked against central finite differences at tight tolerance; that
check is this module's load-bearing test.

The model is deliberately not a video architecture. The sampling
mechanism under study lives entirely on the data side, so the network
only has to be differentiable and shape-faithful.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import CheckpointError, DataError, NumericError
from .quality import QualityRecord
from .sampler import SamplerConfig, TqdSampler
from .synth import ToyVideo

CHECKPOINT_MAGIC = b"TQDC"

_LAYER_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


def _param_layout(in_dim: int, hidden: int, out_dim: int):
    """Shapes and flat-vector slices for the fixed two-hidden-layer MLP."""
    shapes = {
        "W1": (in_dim, hidden), "b1": (hidden,),
        "W2": (hidden, hidden), "b2": (hidden,),
        "W3": (hidden, out_dim), "b3": (out_dim,),
    }
    layout = {}
    offset = 0
    for name in _LAYER_NAMES:
        n = int(np.prod(shapes[name]))
        layout[name] = (shapes[name], slice(offset, offset + n))
        offset += n
    return layout, offset


def param_count(data_dim: int, hidden_width: int, n_freqs: int) -> int:
    in_dim = data_dim + 2 * n_freqs
    _, total = _param_layout(in_dim, hidden_width, data_dim)
    return total


def time_features(t, n_freqs: int = 8) -> np.ndarray:
    """Sinusoidal features [sin(w_k t), cos(w_k t)] with w_k = 2*pi*2^k."""
    t = np.asarray(t, dtype=np.float64)
    freqs = 2.0 * np.pi * (2.0 ** np.arange(n_freqs, dtype=np.float64))
    angles = t[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


@dataclass
class VelocityModel:
    """Two-hidden-layer tanh MLP over flat pixels + timestep features.

    Parameters live in one flat float64 vector; views() hands out the
    reshaped weight matrices without copying, so optimizer updates on
    the flat vector are visible to the forward pass.
    """

    data_shape: tuple[int, int, int]
    hidden_width: int
    n_freqs: int
    theta: np.ndarray

    @property
    def data_dim(self) -> int:
        return int(np.prod(self.data_shape))

    @property
    def input_dim(self) -> int:
        return self.data_dim + 2 * self.n_freqs

    @property
    def param_count(self) -> int:
        return self.theta.size

    def views(self) -> dict:
        layout, total = _param_layout(self.input_dim, self.hidden_width, self.data_dim)
        if self.theta.size != total:
            raise DataError(
                f"parameter vector has {self.theta.size} entries, layout needs {total}")
        return {name: self.theta[sl].reshape(shape) for name, (shape, sl) in layout.items()}

    @classmethod
    def init(cls, data_shape, seed, hidden_width: int = 128, n_freqs: int = 8,
             zero_final: bool = True) -> "VelocityModel":
        """Random init scaled by 1/sqrt(fan-in); biases start at zero.

        zero_final zeroes the output layer so the untrained model is the
        zero velocity field. Gradient-exactness checks want zero_final
        False so every layer sits on a live gradient path.
        """
        data_shape = tuple(int(d) for d in data_shape)
        if len(data_shape) != 3 or any(d < 1 for d in data_shape):
            raise DataError(f"data_shape must be three positive dims, got {data_shape}")
        if hidden_width < 1 or n_freqs < 1:
            raise DataError("hidden_width and n_freqs must be >= 1")
        data_dim = int(np.prod(data_shape))
        in_dim = data_dim + 2 * n_freqs
        layout, total = _param_layout(in_dim, hidden_width, data_dim)
        rng = np.random.default_rng(seed)
        theta = np.zeros(total, dtype=np.float64)
        model = cls(data_shape=data_shape, hidden_width=hidden_width,
                    n_freqs=n_freqs, theta=theta)
        views = model.views()
        views["W1"][...] = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=views["W1"].shape)
        views["W2"][...] = rng.normal(0.0, 1.0 / np.sqrt(hidden_width), size=views["W2"].shape)
        if not zero_final:
            views["W3"][...] = rng.normal(0.0, 1.0 / np.sqrt(hidden_width),
                                          size=views["W3"].shape)
        return model

    def copy(self) -> "VelocityModel":
        return replace(self, theta=self.theta.copy())


def _as_flat_batch(model: VelocityModel, x, name: str) -> np.ndarray:
    """Coerce a video, flat vector, or batch thereof to shape (B, D)."""
    if isinstance(x, ToyVideo):
        x = x.frames
    arr = np.asarray(x, dtype=np.float64)
    d = model.data_dim
    if arr.shape == model.data_shape or arr.shape == (d,):
        return arr.reshape(1, d)
    if arr.ndim == 4 and arr.shape[1:] == model.data_shape:
        return arr.reshape(arr.shape[0], d)
    if arr.ndim == 2 and arr.shape[1] == d:
        return arr
    raise DataError(
        f"{name} shape {arr.shape} does not match model data shape {model.data_shape}")


def _check_finite(arr: np.ndarray, layer: int, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in layer {layer} ({name})")


def _forward_batch(model: VelocityModel, xt_flat: np.ndarray, t: np.ndarray):
    """Batched forward pass; returns output plus the backward cache."""
    views = model.views()
    feats = time_features(t, model.n_freqs)
    x = np.concatenate([xt_flat, feats], axis=1)
    z1 = x @ views["W1"] + views["b1"]
    _check_finite(z1, 1, "W1")
    a1 = np.tanh(z1)
    z2 = a1 @ views["W2"] + views["b2"]
    _check_finite(z2, 2, "W2")
    a2 = np.tanh(z2)
    out = a2 @ views["W3"] + views["b3"]
    _check_finite(out, 3, "W3")
    return out, (x, a1, a2, views)


def forward(model: VelocityModel, x_t, t: float) -> np.ndarray:
    """Predicted velocity for one interpolant; output shape matches x_t."""
    if not 0.0 <= float(t) <= 1.0:
        raise DataError(f"t must be in [0, 1], got {t}")
    arr = x_t.frames if isinstance(x_t, ToyVideo) else np.asarray(x_t, dtype=np.float64)
    flat = _as_flat_batch(model, arr, "x_t")
    if flat.shape[0] != 1:
        raise DataError("forward takes a single interpolant; use loss_and_grad for batches")
    out, _ = _forward_batch(model, flat, np.array([float(t)]))
    return out.reshape(arr.shape)


def loss_and_grad(model: VelocityModel, x0, x1, t):
    """Flow-matching loss and its exact gradient w.r.t. the flat parameters.

    Per-sample loss is the mean squared error over coordinates between
    the predicted velocity at x_t = t*x1 + (1-t)*x0 and the target
    x1 - x0; the batch loss averages per-sample losses, so it is
    invariant to batch order. Accepts a single sample (video + scalar t)
    or a batch (stacked arrays + t vector).
    """
    x0f = _as_flat_batch(model, x0, "x0")
    x1f = _as_flat_batch(model, x1, "x1")
    if x0f.shape != x1f.shape:
        raise DataError(f"batch mismatch: x0 {x0f.shape} vs x1 {x1f.shape}")
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if t_arr.shape != (x0f.shape[0],):
        raise DataError(f"t has shape {t_arr.shape}, batch needs ({x0f.shape[0]},)")
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise DataError("timesteps must lie in [0, 1]")

    b, d = x0f.shape
    xt = t_arr[:, None] * x1f + (1.0 - t_arr[:, None]) * x0f
    target = x1f - x0f
    out, (x, a1, a2, views) = _forward_batch(model, xt, t_arr)

    resid = out - target
    loss = float(np.mean(resid * resid))

    # backward pass; d(loss)/d(out) = 2*resid / (B*D)
    d_out = (2.0 / (b * d)) * resid
    g_w3 = a2.T @ d_out
    g_b3 = d_out.sum(axis=0)
    d_a2 = d_out @ views["W3"].T
    d_z2 = d_a2 * (1.0 - a2 * a2)
    g_w2 = a1.T @ d_z2
    g_b2 = d_z2.sum(axis=0)
    d_a1 = d_z2 @ views["W2"].T
    d_z1 = d_a1 * (1.0 - a1 * a1)
    g_w1 = x.T @ d_z1
    g_b1 = d_z1.sum(axis=0)

    grad = np.concatenate([g_w1.ravel(), g_b1, g_w2.ravel(), g_b2, g_w3.ravel(), g_b3])
    return loss, grad


def grad_at_timestep(model: VelocityModel, x0, t: float, noise_seed: int,
                     n_noise: int = 16) -> np.ndarray:
    """Loss gradient at a fixed timestep, averaged over frozen noise draws.

    The noise endpoints x1 depend only on noise_seed, never on x0, so
    two calls with the same seed see identical draws. That common-
    random-numbers protocol is what makes gradient distances between an
    original and a degraded sample low-variance at small n_noise.
    """
    if not 0.0 < float(t) < 1.0:
        raise DataError(f"t must be in the open interval (0, 1), got {t}")
    if n_noise < 1:
        raise DataError(f"n_noise must be >= 1, got {n_noise}")
    x0f = _as_flat_batch(model, x0, "x0")
    if x0f.shape[0] != 1:
        raise DataError("grad_at_timestep takes a single sample")
    rng = np.random.default_rng(noise_seed)
    x1f = rng.standard_normal((n_noise, model.data_dim))
    x0rep = np.repeat(x0f, n_noise, axis=0)
    t_arr = np.full(n_noise, float(t))
    _, grad = loss_and_grad(model, x0rep, x1f, t_arr)
    return grad


# --- optimizer and training loop ---------------------------------------------

@dataclass(frozen=True)
class TrainerConfig:
    """Training-loop knobs. seed covers model init and every loop draw."""

    steps: int = 500
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden_width: int = 128
    n_freqs: int = 8
    seed: int = 0
    baseline: bool = False
    zero_final: bool = True

    def __post_init__(self):
        if self.steps < 0:
            raise DataError(f"steps must be >= 0, got {self.steps}")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise DataError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise DataError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise DataError(f"eps must be positive, got {self.eps}")
        if self.hidden_width < 1 or self.n_freqs < 1:
            raise DataError("hidden_width and n_freqs must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "TrainerConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class TrainState:
    """Model plus optimizer moments and per-step history."""

    model: VelocityModel
    m: np.ndarray
    v: np.ndarray
    step: int
    learning_rate: float
    loss_history: list = field(default_factory=list)
    mean_t_history: list = field(default_factory=list)
    acceptance_history: list = field(default_factory=list)


def adam_update(theta: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
                step: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> None:
    """One bias-corrected moment update, in place. step counts from 1.

    First-step identity: with a fresh state and unit gradient, the
    parameter displacement is lr/(1 + eps), i.e. the learning rate up to
    the damping epsilon.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


def train(dataset, sampler_config: SamplerConfig, trainer_config: TrainerConfig) -> TrainState:
    """Run the full quality-aware loop and return the final state.

    dataset is a list of (QualityRecord, ToyVideo) pairs; records must
    be normalized. Each step prepares a batch through the quality-aware
    sampler (or, with trainer_config.baseline, the uniform arm that
    skips dropout and forces the flat timestep law), draws fresh noise
    endpoints, and applies one optimizer update. Deterministic given
    trainer_config.seed; the sampler config's own seed is not consulted
    here.
    """
    if not dataset:
        raise DataError("dataset is empty")
    records = []
    videos = {}
    data_shape = None
    for rec, video in dataset:
        if not isinstance(rec, QualityRecord):
            raise DataError(f"dataset entries must pair QualityRecord with ToyVideo, got {type(rec)}")
        shape = video.frames.shape
        if data_shape is None:
            data_shape = shape
        elif shape != data_shape:
            raise DataError(f"video shape mismatch: {rec.id} has {shape}, expected {data_shape}")
        records.append(rec)
        videos[rec.id] = video

    sampler = TqdSampler(records, sampler_config)
    seed_seq = np.random.SeedSequence(trainer_config.seed)
    model_seed, loop_seed = seed_seq.spawn(2)
    model = VelocityModel.init(
        data_shape, seed=model_seed, hidden_width=trainer_config.hidden_width,
        n_freqs=trainer_config.n_freqs, zero_final=trainer_config.zero_final)
    rng = np.random.default_rng(loop_seed)

    state = TrainState(
        model=model,
        m=np.zeros_like(model.theta),
        v=np.zeros_like(model.theta),
        step=0,
        learning_rate=trainer_config.learning_rate,
    )
    for i in range(1, trainer_config.steps + 1):
        batch = sampler.prepare_batch(sampler_config.batch_size, rng,
                                      baseline=trainer_config.baseline)
        x0 = np.stack([videos[rec.id].flat() for rec, _ in batch.members])
        t_arr = batch.timesteps
        x1 = rng.standard_normal(x0.shape)
        loss, grad = loss_and_grad(model, x0, x1, t_arr)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at step {i}")
        adam_update(model.theta, grad, state.m, state.v, i,
                    trainer_config.learning_rate, trainer_config.beta1,
                    trainer_config.beta2, trainer_config.eps)
        if not np.all(np.isfinite(model.theta)):
            raise NumericError(f"non-finite parameters after update at step {i}")
        state.step = i
        state.loss_history.append(loss)
        state.mean_t_history.append(float(np.mean(t_arr)))
        state.acceptance_history.append(batch.acceptance_rate)
    return state


def final_loss(state: TrainState, window_frac: float = 0.1) -> float:
    """Mean loss over the trailing window (default last 10% of steps).

    Single-step losses are noisy at toy batch sizes; the trailing mean
    is the reading used for any between-run comparison.
    """
    if not state.loss_history:
        raise DataError("empty loss history")
    n = max(1, int(round(window_frac * len(state.loss_history))))
    return float(np.mean(state.loss_history[-n:]))


# --- artifacts ----------------------------------------------------------------

def write_training_log(state: TrainState, path) -> None:
    """CSV log: step, loss, mean_t, batch_acceptance_rate. Floats are
    written with repr so re-reading reproduces them bit-exactly."""
    lines = ["step,loss,mean_t,batch_acceptance_rate"]
    for i, (loss, mean_t, acc) in enumerate(
            zip(state.loss_history, state.mean_t_history, state.acceptance_history), 1):
        lines.append(f"{i},{float(loss)!r},{float(mean_t)!r},{float(acc)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_checkpoint(model: VelocityModel, path, step: int = 0, seed=None) -> None:
    """Flat binary of theta behind a JSON header (widths, step, seed)."""
    header = {
        "data_shape": list(model.data_shape),
        "hidden_width": model.hidden_width,
        "n_freqs": model.n_freqs,
        "param_count": model.param_count,
        "step": step,
        "seed": seed,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(model.theta.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple:
    """Read a checkpoint back; returns (model, header).

    Raises CheckpointError on bad magic, malformed header, or a
    parameter payload that disagrees with the header's architecture.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise CheckpointError(f"truncated checkpoint header in {path}")
    try:
        header = json.loads(raw[8:8 + hlen].decode("utf-8"))
        data_shape = tuple(int(d) for d in header["data_shape"])
        hidden_width = int(header["hidden_width"])
        n_freqs = int(header["n_freqs"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint header in {path}: {exc}") from exc
    expected = param_count(int(np.prod(data_shape)), hidden_width, n_freqs)
    body = raw[8 + hlen:]
    if len(body) != 8 * expected:
        raise CheckpointError(
            f"checkpoint {path} carries {len(body) // 8} parameters, "
            f"architecture needs {expected}")
    theta = np.frombuffer(body, dtype="<f8").astype(np.float64)
    model = VelocityModel(data_shape=data_shape, hidden_width=hidden_width,
                          n_freqs=n_freqs, theta=theta)
    if int(header.get("param_count", expected)) != expected:
        raise CheckpointError(
            f"checkpoint {path} header param_count {header.get('param_count')} "
            f"does not match architecture ({expected})")
    return model, header
