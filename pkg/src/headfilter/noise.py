"""Corruption processes and a synthetic head-motion generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import N_CHANNELS, NormStats, Trajectory, denormalize, normalize

NOISE_KINDS = ("frame_dropout", "additive_gaussian")


@dataclass(frozen=True)
class NoiseSpec:
    """Frame dropout at ``rate`` or additive Gaussian noise of std ``sigma``.

    ``exact_count`` switches dropout from Bernoulli-per-frame to zeroing
    exactly ``round(rate * n_frames)`` frames.
    """

    kind: str
    rate: float | None = None
    sigma: float | None = None
    seed: int = 0
    exact_count: bool = False

    def __post_init__(self) -> None:
        if self.kind == "frame_dropout":
            if self.rate is None or self.sigma is not None:
                raise ValueError("frame_dropout takes rate only")
            if not 0.0 <= self.rate <= 1.0:
                raise ValueError("rate must lie in [0, 1]")
        elif self.kind == "additive_gaussian":
            if self.sigma is None or self.rate is not None:
                raise ValueError("additive_gaussian takes sigma only")
            if not self.sigma > 0:
                raise ValueError("sigma must be positive")
        else:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "NoiseSpec | None":
        """``none``, ``dropout:0.5``, ``dropout-exact:0.5`` or ``gauss:0.2``."""
        if text == "none":
            return None
        kind, sep, value = text.partition(":")
        if not sep:
            raise ValueError(f"expected KIND:VALUE, got {text!r}")
        if kind in ("dropout", "frame_dropout"):
            return cls("frame_dropout", rate=float(value), seed=seed)
        if kind == "dropout-exact":
            return cls("frame_dropout", rate=float(value), seed=seed, exact_count=True)
        if kind in ("gauss", "gaussian", "additive_gaussian"):
            return cls("additive_gaussian", sigma=float(value), seed=seed)
        raise ValueError(f"unknown noise kind {kind!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "rate": self.rate,
            "sigma": self.sigma,
            "seed": self.seed,
            "exact_count": self.exact_count,
        }


def _frames(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] % N_CHANNELS:
        raise ValueError("dimension mismatch: window length not a multiple of 3")
    return x.reshape(x.shape[:-1] + (x.shape[-1] // N_CHANNELS, N_CHANNELS))


def dropout_mask(
    n_frames: int, rate: float, rng: np.random.Generator, exact_count: bool = False
) -> np.ndarray:
    """Boolean array, ``True`` for frames to zero."""
    if exact_count:
        mask = np.zeros(n_frames, dtype=bool)
        mask[rng.permutation(n_frames)[: int(round(rate * n_frames))]] = True
        return mask
    return rng.random(n_frames) < rate


def frame_dropout(
    window: np.ndarray, rate: float, seed, exact_count: bool = False
) -> np.ndarray:
    """Zero whole frames (all three channels) of one or more flattened windows.

    Accepts a single window ``(150,)`` or a batch ``(n, 150)``; frames are
    dropped independently in every window.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    frames = _frames(window).copy()
    lead = frames.shape[:-2]
    n_frames = frames.shape[-2]
    flat = frames.reshape(-1, n_frames, N_CHANNELS)
    for block in flat:
        block[dropout_mask(n_frames, rate, rng, exact_count)] = 0.0
    return flat.reshape(lead + (n_frames * N_CHANNELS,))


def add_gaussian(window: np.ndarray, sigma: float, seed) -> np.ndarray:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    window = np.asarray(window, dtype=float)
    rng = np.random.default_rng(seed)
    return window + rng.normal(0.0, sigma, size=window.shape)


def corrupt(windows: np.ndarray, spec: NoiseSpec, seed=None) -> np.ndarray:
    """Apply ``spec`` to windows; ``seed`` overrides ``spec.seed`` when given."""
    seed = spec.seed if seed is None else seed
    if spec.kind == "frame_dropout":
        return frame_dropout(windows, spec.rate, seed, spec.exact_count)
    return add_gaussian(windows, spec.sigma, seed)


def corrupt_trajectory(
    traj: Trajectory, spec: NoiseSpec, stats: NormStats | None = None
) -> Trajectory:
    """Corrupt a whole trajectory frame by frame.

    With ``stats`` the noise is applied in normalized space, so a dropped
    frame lands on the channel means rather than on physical zero.
    """
    work = normalize(traj, stats) if stats is not None else traj
    noisy = corrupt(work.samples.reshape(-1), spec).reshape(-1, N_CHANNELS)
    out = work.with_samples(noisy)
    return denormalize(out, stats) if stats is not None else out


def synth_trajectory(
    seed,
    duration_s: float,
    sample_rate: float = 100.0,
    nod_rate: float = 0.3,
) -> Trajectory:
    """Synthetic head motion with unit per-channel variance.

    Each channel is a sum of 3-6 sinusoids between 0.2 and 2 Hz. Nod events
    arrive as a Poisson process (``nod_rate`` per second); each is a 2-4 Hz
    burst under a Gaussian envelope, projected onto a random 3-D direction so
    that it moves several channels together. A speaking mask alternates
    speaking and listening segments of 2-8 s.
    """
    if duration_s < 1:
        raise ValueError("duration_s must be at least 1 second")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    x = np.zeros((n, N_CHANNELS))
    for c in range(N_CHANNELS):
        for _ in range(rng.integers(3, 7)):
            freq = rng.uniform(0.2, 2.0)
            amp = rng.uniform(0.2, 1.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            x[:, c] += amp * np.sin(2.0 * np.pi * freq * t + phase)

    n_nods = rng.poisson(nod_rate * duration_s)
    for _ in range(n_nods):
        center = rng.uniform(0.0, duration_s)
        freq = rng.uniform(2.0, 4.0)
        width = rng.uniform(0.1, 0.25)
        amp = rng.uniform(0.5, 1.5)
        direction = rng.normal(size=N_CHANNELS)
        direction /= np.linalg.norm(direction)
        burst = amp * np.exp(-0.5 * ((t - center) / width) ** 2) * np.sin(
            2.0 * np.pi * freq * (t - center)
        )
        x += burst[:, None] * direction[None, :]

    x -= x.mean(axis=0)
    x /= x.std(axis=0)

    mask = np.zeros(n, dtype=bool)
    speaking = bool(rng.integers(0, 2))
    pos = 0
    while pos < n:
        seg = int(round(rng.uniform(2.0, 8.0) * sample_rate))
        mask[pos : pos + seg] = speaking
        speaking = not speaking
        pos += seg
    return Trajectory(x, sample_rate, mask)
