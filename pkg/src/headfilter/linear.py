"""Per-channel linear smoothing baselines and the impulse probe."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import N_CHANNELS, Trajectory

GAUSS_TRUNCATE = 4.0
KINDS = ("gaussian", "moving_average")


@dataclass(frozen=True)
class LinearFilterSpec:
    """A Gaussian (``param`` = sigma in frames) or moving-average
    (``param`` = odd window width in frames) smoother."""

    kind: str
    param: float

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not self.param > 0:
            raise ValueError("filter parameter must be positive")
        if self.kind == "moving_average":
            if self.param != int(self.param) or int(self.param) % 2 == 0:
                raise ValueError("moving_average width must be an odd integer")
            object.__setattr__(self, "param", int(self.param))

    @classmethod
    def parse(cls, text: str) -> "LinearFilterSpec":
        """Parse ``gaussian:8`` or ``mva:35`` / ``moving_average:35``."""
        kind, sep, value = text.partition(":")
        if not sep:
            raise ValueError(f"expected KIND:PARAM, got {text!r}")
        kind = {"mva": "moving_average", "gauss": "gaussian"}.get(kind, kind)
        return cls(kind, float(value))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "param": self.param}


def gaussian_kernel(sigma: float, truncate: float = GAUSS_TRUNCATE) -> np.ndarray:
    """Sampled Gaussian over integer offsets |k| <= truncate * sigma, summing to 1."""
    half = int(np.floor(truncate * sigma))
    k = np.arange(-half, half + 1, dtype=float)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    return w / w.sum()


def box_kernel(width: int) -> np.ndarray:
    return np.full(width, 1.0 / width)


def kernel_for(spec: LinearFilterSpec) -> np.ndarray:
    if spec.kind == "gaussian":
        return gaussian_kernel(spec.param)
    return box_kernel(int(spec.param))


def smooth_1d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve with a symmetric odd-length kernel using reflect padding."""
    half = len(kernel) // 2
    if half == 0:
        return np.array(x, dtype=float)
    padded = np.pad(np.asarray(x, dtype=float), half, mode="reflect")
    return np.convolve(padded, kernel, mode="valid")


def apply_linear(traj: Trajectory, spec: LinearFilterSpec) -> Trajectory:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    kernel = kernel_for(spec)
    out = np.column_stack([smooth_1d(traj.samples[:, c], kernel) for c in range(N_CHANNELS)])
    return traj.with_samples(out)


def linear_filter(spec: LinearFilterSpec) -> Callable[[Trajectory], Trajectory]:
    return lambda traj: apply_linear(traj, spec)


def impulse_probe(
    filt: Callable[[Trajectory], Trajectory],
    channel: int,
    length: int = 200,
    amplitude: float = 1.0,
    sample_rate: float = 100.0,
    subtract_baseline: bool = False,
) -> Trajectory:
    """Response of ``filt`` to a single spike at the midpoint of ``channel``.

    With ``subtract_baseline`` the response to the all-zero input is removed,
    which isolates the spike's effect for filters with a nonzero offset.
    """
    if channel not in range(N_CHANNELS):
        raise ValueError(f"channel must be 0, 1 or 2, got {channel}")
    if length < 1:
        raise ValueError("length must be at least 1")
    zeros = np.zeros((length, N_CHANNELS))
    x = zeros.copy()
    x[length // 2, channel] = amplitude
    response = filt(Trajectory(x, sample_rate))
    if subtract_baseline:
        base = filt(Trajectory(zeros, sample_rate))
        return response.with_samples(response.samples - base.samples)
    return response
