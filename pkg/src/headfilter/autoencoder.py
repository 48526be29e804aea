"""Feed-forward de-noising autoencoder over 150-d motion windows.

The network maps a normalized window to a reconstruction of the same size
through alternating affine maps and a hidden non-linearity; the output layer
is linear. Gradients are computed by hand and the trainer is plain Adam.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import (
    N_CHANNELS,
    STD_FLOOR,
    WINDOW_DIM,
    HOP,
    WINDOW_LEN,
    NormStats,
    Trajectory,
    denormalize,
    normalize,
    overlap_add,
    segment_windows,
)
from .noise import NoiseSpec, corrupt

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
ACTIVATIONS = ("tanh", "relu")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch


class ModelFormatError(ValueError):
    """Base class for model-file load failures."""


class ModelParseError(ModelFormatError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelShapeError(ModelFormatError):
    pass


class ModelNonFiniteError(ModelFormatError):
    pass


def parse_arch(text: str) -> list[int]:
    """``"150-3000-180"`` -> ``[150, 3000, 180, 3000, 150]`` (mirrored decoder)."""
    parts = text.split("-")
    try:
        widths = [int(p) for p in parts]
    except ValueError:
        raise ValueError(f"malformed architecture {text!r}") from None
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise ValueError(f"malformed architecture {text!r}")
    if widths[0] != WINDOW_DIM:
        raise ValueError(f"architecture must start at {WINDOW_DIM}, got {widths[0]}")
    return widths + widths[-2::-1]


def format_arch(layer_sizes: Sequence[int]) -> str:
    """Inverse of :func:`parse_arch` for mirrored layouts."""
    half = len(layer_sizes) // 2 + 1
    return "-".join(str(s) for s in layer_sizes[:half])


@dataclass(frozen=True, eq=False)
class MlpModel:
    """Weights are ``(fan_in, fan_out)`` matrices, one per layer transition."""

    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    hidden_activation: str = "relu"
    input_dropout_rate: float = 0.0
    norm_stats: NormStats | None = None
    sample_rate: float = 100.0
    format_version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("need at least one layer transition")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if not 0.0 <= self.input_dropout_rate < 1.0:
            raise ValueError("input_dropout_rate must lie in [0, 1)")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("dimension mismatch: one weight/bias per transition")
        ws, bs = [], []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            W = np.array(W, dtype=float)
            b = np.array(b, dtype=float)
            if W.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(
                    f"dimension mismatch in layer {i}: weight {W.shape}, bias {b.shape}, "
                    f"expected ({sizes[i]}, {sizes[i + 1]})"
                )
            W.setflags(write=False)
            b.setflags(write=False)
            ws.append(W)
            bs.append(b)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))


def init_model(
    layer_sizes: Sequence[int],
    seed=0,
    hidden_activation: str = "relu",
    input_dropout_rate: float = 0.0,
    norm_stats: NormStats | None = None,
    sample_rate: float = 100.0,
) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(
        tuple(layer_sizes),
        tuple(weights),
        tuple(biases),
        hidden_activation,
        input_dropout_rate,
        norm_stats,
        sample_rate,
    )


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    return 1.0 - a * a if name == "tanh" else (z > 0).astype(float)


def _check_input(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.layer_sizes[0]:
        raise ValueError(
            f"dimension mismatch: input has {x.shape[-1]} components, "
            f"model expects {model.layer_sizes[0]}"
        )
    return x


def _apply_input_dropout(
    model: MlpModel, x: np.ndarray, keep: np.ndarray | None
) -> np.ndarray:
    if keep is None or model.input_dropout_rate == 0.0:
        return x
    return x * keep / (1.0 - model.input_dropout_rate)


def _forward_cached(model: MlpModel, x: np.ndarray):
    zs, acts = [], [x]
    a = x
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        a = z if i == last else _act(model.hidden_activation, z)
        zs.append(z)
        acts.append(a)
    return zs, acts


def forward(model: MlpModel, x: np.ndarray, keep: np.ndarray | None = None) -> np.ndarray:
    """Run one window ``(150,)`` or a batch ``(n, 150)`` through the network.

    ``keep`` is a training-time input-dropout keep-mask; leave it ``None`` for
    inference, where no dropout is ever applied.
    """
    x = _check_input(model, x)
    x = _apply_input_dropout(model, x, keep)
    return _forward_cached(model, x)[1][-1]


def component_variance(target_variance, dim: int = WINDOW_DIM) -> np.ndarray:
    """Expand a scalar, per-channel (3) or per-component variance to ``dim``."""
    v = np.asarray(target_variance, dtype=float)
    if v.ndim == 0:
        v = np.full(dim, float(v))
    elif v.shape == (N_CHANNELS,) and dim != N_CHANNELS:
        v = np.tile(v, dim // N_CHANNELS)
    if v.shape != (dim,):
        raise ValueError(f"dimension mismatch: variance shape {v.shape} for {dim} components")
    if np.any(v <= 0):
        raise ValueError("target variance must be positive")
    return v


def window_variance(windows: np.ndarray) -> np.ndarray:
    """Per-channel variance of flattened windows, floored like NormStats."""
    frames = np.asarray(windows, dtype=float).reshape(-1, N_CHANNELS)
    return np.maximum(frames.var(axis=0), STD_FLOOR**2)


def loss(predicted: np.ndarray, target: np.ndarray, target_variance=1.0) -> float:
    """Mean squared error divided by the ground-truth variance of each component."""
    predicted = np.atleast_2d(np.asarray(predicted, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    if predicted.shape != target.shape:
        raise ValueError(f"dimension mismatch: {predicted.shape} vs {target.shape}")
    v = component_variance(target_variance, predicted.shape[-1])
    return float(np.mean((predicted - target) ** 2 / v))


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for pair in zip(self.weights, self.biases) for g in pair])


def backward(
    model: MlpModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    target_variance=1.0,
    keep: np.ndarray | None = None,
) -> tuple[float, Gradients]:
    """Loss and its exact gradient w.r.t. every weight and bias."""
    x = np.atleast_2d(_check_input(model, inputs))
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    if len(x) == 0:
        raise ValueError("empty batch")
    if keep is not None:
        keep = np.atleast_2d(keep)
    x = _apply_input_dropout(model, x, keep)
    zs, acts = _forward_cached(model, x)
    y = acts[-1]
    if y.shape != t.shape:
        raise ValueError(f"dimension mismatch: output {y.shape} vs target {t.shape}")
    v = component_variance(target_variance, y.shape[-1])
    diff = (y - t) / v
    value = float(np.mean((y - t) * diff))

    delta = 2.0 * diff / y.size
    n_layers = len(model.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        if i != n_layers - 1:
            delta = delta * _act_grad(model.hidden_activation, zs[i], acts[i + 1])
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = delta @ model.weights[i].T
    return value, Gradients(gw, gb)


# Training ---------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Adam hyper-parameters and the training schedule.

    ``noise`` may hold several specs; each training window is then corrupted
    by one of them chosen at random. Validation inputs get the same treatment
    with a fixed seed so that model selection scores de-noising.
    """

    epochs: int = 100
    learning_rate: float = 1e-4
    batch_size: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    noise: tuple[NoiseSpec, ...] = ()
    early_stop_patience: int = 20

    def __post_init__(self) -> None:
        if isinstance(self.noise, NoiseSpec):
            object.__setattr__(self, "noise", (self.noise,))
        elif self.noise is None:
            object.__setattr__(self, "noise", ())
        else:
            object.__setattr__(self, "noise", tuple(self.noise))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss)):
            lines.append(f"{i},{tr!r},{va!r}")
        return "\n".join(lines) + "\n"


def corrupt_batch(
    windows: np.ndarray, specs: Sequence[NoiseSpec], seed
) -> np.ndarray:
    """Corrupt each window with one of ``specs`` picked uniformly at random."""
    if not specs:
        return windows
    rng = np.random.default_rng(seed)
    choice = rng.integers(0, len(specs), size=len(windows))
    out = np.array(windows, dtype=float)
    for k, spec in enumerate(specs):
        rows = np.flatnonzero(choice == k)
        if rows.size:
            sub_seed = [int(spec.seed), int(rng.integers(0, 2**63))]
            out[rows] = corrupt(out[rows], spec, seed=sub_seed)
    return out


def _adam_step(params, grads, m, v, step, cfg: TrainConfig) -> None:
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    lr_t = cfg.learning_rate * math.sqrt(1.0 - b2**step) / (1.0 - b1**step)
    eps_t = cfg.adam_epsilon * math.sqrt(1.0 - b2**step)
    for p, g, mi, vi in zip(params, grads, m, v):
        mi *= b1
        mi += (1.0 - b1) * g
        vi *= b2
        vi += (1.0 - b2) * (g * g)
        p -= lr_t * mi / (np.sqrt(vi) + eps_t)


def train(
    train_windows: np.ndarray,
    val_windows: np.ndarray,
    config: TrainConfig,
    layer_sizes: Sequence[int],
    hidden_activation: str = "relu",
    input_dropout_rate: float = 0.0,
    norm_stats: NormStats | None = None,
    sample_rate: float = 100.0,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> tuple[MlpModel, TrainHistory]:
    """Mini-batch Adam on the variance-normalized reconstruction loss.

    ``train_windows`` and ``val_windows`` are clean, already normalized
    windows; they are also the targets. Returns the parameters from the epoch
    with the lowest validation loss.
    """
    X = np.asarray(train_windows, dtype=float)
    V = np.asarray(val_windows, dtype=float)
    if len(X) < 2 * config.batch_size:
        raise ValueError(
            f"need at least {2 * config.batch_size} training windows, got {len(X)}"
        )
    if len(V) == 0:
        raise ValueError("empty validation set")

    rng = np.random.default_rng(config.seed)
    model = init_model(
        layer_sizes,
        seed=rng.integers(0, 2**63),
        hidden_activation=hidden_activation,
        input_dropout_rate=input_dropout_rate,
        norm_stats=norm_stats,
        sample_rate=sample_rate,
    )
    variance = window_variance(X)
    params = [np.array(p) for pair in zip(model.weights, model.biases) for p in pair]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    n_layers = len(model.weights)

    def current() -> MlpModel:
        return replace(model, weights=tuple(params[0::2]), biases=tuple(params[1::2]))

    val_inputs = corrupt_batch(V, config.noise, [config.seed, 1])
    history = TrainHistory()
    best_val = math.inf
    best_params = [p.copy() for p in params]
    step = 0
    for epoch in range(config.epochs):
        inputs = corrupt_batch(X, config.noise, [config.seed, 2, epoch])
        order = rng.permutation(len(X))
        total, count = 0.0, 0
        for lo in range(0, len(X), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            keep = None
            if input_dropout_rate > 0:
                keep = rng.random((len(idx), layer_sizes[0])) >= input_dropout_rate
            value, grads = backward(current(), inputs[idx], X[idx], variance, keep)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch)
            step += 1
            flat_grads = [g for i in range(n_layers) for g in (grads.weights[i], grads.biases[i])]
            _adam_step(params, flat_grads, m, v, step, config)
            total += value * len(idx)
            count += len(idx)
        train_value = total / count
        val_value = loss(forward(current(), val_inputs), V, variance)
        if not (math.isfinite(train_value) and math.isfinite(val_value)):
            raise TrainingDiverged(epoch)
        history.train_loss.append(train_value)
        history.val_loss.append(val_value)
        log.info("epoch %d train %.6f val %.6f", epoch, train_value, val_value)
        if on_epoch is not None:
            on_epoch(epoch, train_value, val_value)
        if val_value < best_val:
            best_val = val_value
            history.best_epoch = epoch
            best_params = [p.copy() for p in params]
        elif epoch - history.best_epoch >= config.early_stop_patience:
            break

    final = replace(model, weights=tuple(best_params[0::2]), biases=tuple(best_params[1::2]))
    return final, history


def architecture_sweep(
    archs: Sequence[str],
    train_windows: np.ndarray,
    val_windows: np.ndarray,
    test_sets: dict[str, tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    hidden_activation: str = "relu",
    input_dropout_rate: float = 0.0,
) -> dict[str, dict[str, float]]:
    """Train one model per architecture string and score it on each test set.

    ``test_sets`` maps a name to ``(noisy_inputs, clean_targets)``. The result
    is ``{arch: {test_name: loss}}`` in the variance-normalized loss, plus an
    ``"unfiltered"`` row scoring the noisy inputs themselves.
    """
    variance = window_variance(train_windows)
    grid = {"unfiltered": {k: loss(x, y, variance) for k, (x, y) in test_sets.items()}}
    for arch in archs:
        model, _ = train(
            train_windows,
            val_windows,
            config,
            parse_arch(arch),
            hidden_activation=hidden_activation,
            input_dropout_rate=input_dropout_rate,
        )
        grid[arch] = {k: loss(forward(model, x), y, variance) for k, (x, y) in test_sets.items()}
    return grid


def trajectory_windows(
    trajs: Sequence[Trajectory], stats: NormStats | None = None
) -> np.ndarray:
    """Normalized 50/25 windows from every trajectory, stacked."""
    blocks = []
    for t in trajs:
        if stats is not None:
            t = normalize(t, stats)
        blocks.append(segment_windows(t, WINDOW_LEN, HOP)[0])
    return np.concatenate(blocks, axis=0)


def filter_trajectory(model: MlpModel, traj: Trajectory) -> Trajectory:
    """Normalize, window, reconstruct each window, overlap-add, denormalize."""
    if model.layer_sizes[0] != WINDOW_DIM:
        raise ValueError("dimension mismatch: model input is not a 50-frame window")
    if abs(traj.sample_rate - model.sample_rate) > 1e-9:
        raise ValueError(
            f"sample rate mismatch: trajectory {traj.sample_rate} Hz, "
            f"model trained at {model.sample_rate} Hz"
        )
    work = normalize(traj, model.norm_stats) if model.norm_stats is not None else traj
    windows, starts = segment_windows(work, WINDOW_LEN, HOP)
    out = overlap_add(forward(model, windows), starts, len(traj), traj.sample_rate, traj.speaking_mask)
    return denormalize(out, model.norm_stats) if model.norm_stats is not None else out


def model_filter(model: MlpModel) -> Callable[[Trajectory], Trajectory]:
    return lambda traj: filter_trajectory(model, traj)


# Serialization ----------------------------------------------------------------


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format_version": model.format_version,
        "layer_sizes": list(model.layer_sizes),
        "hidden_activation": model.hidden_activation,
        "output_activation": "linear",
        "input_dropout_rate": model.input_dropout_rate,
        "sample_rate": model.sample_rate,
        "window_layout": "frame-major (f0.rx, f0.ry, f0.rz, f1.rx, ...)",
        "norm_stats": None if model.norm_stats is None else model.norm_stats.to_dict(),
        "weights": [W.tolist() for W in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def save_model(model: MlpModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), allow_nan=False))


def model_from_dict(doc: dict) -> MlpModel:
    if not isinstance(doc, dict):
        raise ModelParseError("parse error: top level is not an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(
            f"unsupported format_version {version!r} (expected {FORMAT_VERSION})"
        )
    try:
        sizes = [int(s) for s in doc["layer_sizes"]]
        raw_w = doc["weights"]
        raw_b = doc["biases"]
        activation = doc["hidden_activation"]
        rate = float(doc.get("input_dropout_rate", 0.0))
        sample_rate = float(doc.get("sample_rate", 100.0))
        stats_doc = doc.get("norm_stats")
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelParseError(f"parse error: {exc}") from None
    if len(raw_w) != len(sizes) - 1 or len(raw_b) != len(sizes) - 1:
        raise ModelShapeError(
            f"dimension mismatch: {len(sizes) - 1} transitions but "
            f"{len(raw_w)} weight and {len(raw_b)} bias arrays"
        )
    weights, biases = [], []
    for i, (w, b) in enumerate(zip(raw_w, raw_b)):
        try:
            W = np.array(w, dtype=float)
            B = np.array(b, dtype=float)
        except (TypeError, ValueError):
            raise ModelShapeError(f"dimension mismatch in layer {i}: ragged array") from None
        if W.shape != (sizes[i], sizes[i + 1]) or B.shape != (sizes[i + 1],):
            raise ModelShapeError(
                f"dimension mismatch in layer {i}: weight {W.shape}, bias {B.shape}, "
                f"expected ({sizes[i]}, {sizes[i + 1]})"
            )
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(B))):
            raise ModelNonFiniteError(f"non-finite parameter in layer {i}")
        weights.append(W)
        biases.append(B)
    stats = None
    if stats_doc is not None:
        try:
            stats = NormStats.from_dict(stats_doc)
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelParseError(f"parse error in norm_stats: {exc}") from None
    try:
        return MlpModel(tuple(sizes), tuple(weights), tuple(biases), activation, rate, stats, sample_rate)
    except ValueError as exc:
        raise ModelParseError(f"parse error: {exc}") from None


def load_model(path) -> MlpModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"parse error: {exc}") from None
    return model_from_dict(doc)
