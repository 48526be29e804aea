"""Trajectory types, per-channel normalization, windowing and rotation ingestion.

Windows are flattened frame-major: frame 0's (rx, ry, rz), then frame 1's,
and so on, giving a ``window_len * 3`` vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.signal.windows import triang

N_CHANNELS = 3
WINDOW_LEN = 50
HOP = 25
WINDOW_DIM = WINDOW_LEN * N_CHANNELS
STD_FLOOR = 1e-9
CHANNEL_NAMES = ("rx", "ry", "rz")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Head rotation-vector time series.

    Attributes:
        samples: ``(n_frames, 3)`` array of rotation-vector components in radians.
        sample_rate: Frames per second.
        speaking_mask: Optional boolean array, ``True`` where the speaker talks.
    """

    samples: np.ndarray
    sample_rate: float = 100.0
    speaking_mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        samples = np.array(self.samples, dtype=float)
        if samples.ndim != 2 or samples.shape[1] != N_CHANNELS:
            raise ValueError(f"samples must have shape (n, 3), got {samples.shape}")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", _frozen(samples))
        if self.speaking_mask is not None:
            mask = np.array(self.speaking_mask, dtype=bool)
            if mask.shape != (samples.shape[0],):
                raise ValueError(
                    f"speaking_mask length {mask.size} != frame count {samples.shape[0]}"
                )
            object.__setattr__(self, "speaking_mask", _frozen(mask))

    def __len__(self) -> int:
        return self.samples.shape[0]

    def with_samples(self, samples: np.ndarray) -> "Trajectory":
        """Same rate and mask, new samples."""
        return Trajectory(samples, self.sample_rate, self.speaking_mask)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True, eq=False)
class NormStats:
    """Per-channel mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).reshape(N_CHANNELS)
        std = np.array(self.std, dtype=float).reshape(N_CHANNELS)
        if not np.all(std > 0):
            raise ValueError("std components must be strictly positive")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "std", _frozen(std))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(d["mean"], d["std"])


def compute_stats(trajs: Iterable[Trajectory]) -> NormStats:
    """Pool all frames of ``trajs`` and return per-channel mean/std.

    Channels whose std falls below 1e-9 are clamped to 1e-9.
    """
    frames = [t.samples for t in trajs]
    if not frames or sum(len(f) for f in frames) == 0:
        raise ValueError("no data")
    data = np.concatenate(frames, axis=0)
    if len(data) < 2:
        raise ValueError("no data: need at least 2 frames")
    mean = data.mean(axis=0)
    std = np.maximum(data.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)


def normalize(traj: Trajectory, stats: NormStats) -> Trajectory:
    return traj.with_samples((traj.samples - stats.mean) / stats.std)


def denormalize(traj: Trajectory, stats: NormStats) -> Trajectory:
    return traj.with_samples(traj.samples * stats.std + stats.mean)


def window_starts(n_frames: int, window_len: int = WINDOW_LEN, hop: int = HOP) -> np.ndarray:
    """Start frames of the analysis windows for a trajectory of ``n_frames``.

    Windows start every ``hop`` frames; if the last regular window stops short
    of the end, one more window is added that ends exactly on the last frame.
    """
    if window_len <= 0:
        raise ValueError("window_len must be positive")
    if not 0 < hop <= window_len:
        raise ValueError("hop must satisfy 0 < hop <= window_len")
    if n_frames < window_len:
        raise ValueError(
            f"trajectory too short: {n_frames} frames < window of {window_len}"
        )
    starts = list(range(0, n_frames - window_len + 1, hop))
    if starts[-1] + window_len < n_frames:
        starts.append(n_frames - window_len)
    return np.array(starts, dtype=int)


def segment_windows(
    traj: Trajectory, window_len: int = WINDOW_LEN, hop: int = HOP
) -> tuple[np.ndarray, np.ndarray]:
    """Cut ``traj`` into flattened windows.

    Returns:
        ``(windows, starts)`` where ``windows`` has shape
        ``(n_windows, window_len * 3)`` and ``starts`` holds the first frame of
        each window.
    """
    starts = window_starts(len(traj), window_len, hop)
    idx = starts[:, None] + np.arange(window_len)[None, :]
    windows = traj.samples[idx].reshape(len(starts), window_len * N_CHANNELS)
    return windows, starts


def overlap_add(
    windows: np.ndarray,
    starts: Sequence[int],
    total_len: int,
    sample_rate: float = 100.0,
    speaking_mask: np.ndarray | None = None,
) -> Trajectory:
    """Rebuild a trajectory from flattened windows by weighted overlap-add.

    Each window is weighted by a triangular taper (strictly positive at the
    ends) and every output frame is divided by the sum of weights that reach
    it, so unmodified windows reproduce the original signal exactly.
    """
    windows = np.asarray(windows, dtype=float)
    if windows.ndim == 1:
        windows = windows[None, :]
    starts = np.asarray(starts, dtype=int)
    if windows.shape[1] % N_CHANNELS:
        raise ValueError("dimension mismatch: window length not a multiple of 3")
    if len(starts) != len(windows):
        raise ValueError("one start index per window required")
    window_len = windows.shape[1] // N_CHANNELS
    frames = windows.reshape(len(windows), window_len, N_CHANNELS)
    weight = triang(window_len)

    acc = np.zeros((total_len, N_CHANNELS))
    wsum = np.zeros(total_len)
    for start, block in zip(starts, frames):
        if start < 0 or start + window_len > total_len:
            raise ValueError(f"window at {start} falls outside [0, {total_len})")
        acc[start : start + window_len] += weight[:, None] * block
        wsum[start : start + window_len] += weight
    gaps = np.flatnonzero(wsum == 0)
    if gaps.size:
        raise ValueError(f"coverage gap at frames {gaps[:5].tolist()}")
    return Trajectory(acc / wsum[:, None], sample_rate, speaking_mask)


# Rotations --------------------------------------------------------------------


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rotvec_to_rotmat(rotvec: np.ndarray) -> np.ndarray:
    """Rodrigues' formula."""
    rotvec = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(rotvec)
    K = _skew(rotvec)
    if theta < 1e-8:
        # second-order Taylor expansion
        return np.eye(3) + K + 0.5 * K @ K
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * K
        + ((1.0 - np.cos(theta)) / theta**2) * (K @ K)
    )


def rotmat_to_rotvec(R: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Matrix logarithm of a rotation, as axis * angle with angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    if (
        R.shape != (3, 3)
        or not np.allclose(R.T @ R, np.eye(3), atol=tol)
        or abs(np.linalg.det(R) - 1.0) > tol
    ):
        raise ValueError("not a rotation matrix")

    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])

    if theta < 1e-8:
        return 0.5 * w
    if np.pi - theta > 1e-4:
        return theta / (2.0 * np.sin(theta)) * w

    # Near pi the antisymmetric part vanishes; recover the axis from the
    # symmetric part, sym(R) = cos(theta) I + (1 - cos(theta)) a a^T.
    B = (0.5 * (R + R.T) - cos_theta * np.eye(3)) / (1.0 - cos_theta)
    k = int(np.argmax(np.diag(B)))
    axis = B[:, k] / np.sqrt(B[k, k])
    if axis @ w < 0:
        axis = -axis
    axis /= np.linalg.norm(axis)
    return theta * axis


def markers_to_rotation(reference: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Least-squares rotation taking ``reference`` markers onto ``frame`` markers.

    Orthogonal Procrustes (Kabsch): SVD of the cross-covariance of the two
    mean-centred clouds, with a sign fix so that det(R) = +1.
    """
    P = np.asarray(reference, dtype=float)
    Q = np.asarray(frame, dtype=float)
    if P.ndim != 2 or P.shape[1] != 3 or P.shape != Q.shape:
        raise ValueError("dimension mismatch: marker clouds must both be (N, 3)")
    if len(P) < 3:
        raise ValueError("degenerate marker set: need at least 3 markers")
    Pc = P - P.mean(axis=0)
    Qc = Q - Q.mean(axis=0)
    scale = max(np.abs(Pc).max(), np.abs(Qc).max(), 1e-300)
    for cloud in (Pc, Qc):
        sv = np.linalg.svd(cloud, compute_uv=False)
        if sv[1] <= 1e-9 * scale * np.sqrt(len(P)):
            raise ValueError("degenerate marker set: markers are collinear")

    H = Pc.T @ Qc
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d])
    return Vt.T @ D @ U.T
