"""Objective metrics and linear-filter calibration.

All region-aware metrics take ``region="speaking"`` (frames where the speaking
mask is true) or ``region="full"``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import periodogram

from .core import HOP, N_CHANNELS, WINDOW_LEN, Trajectory, window_starts
from .linear import LinearFilterSpec, apply_linear

REGIONS = ("speaking", "full")
CCA_RCOND = 1e-10
KL_SMOOTHING = 1e-6
HF_CUTOFF_HZ = 5.0
CALIBRATION_SLACK = 1e-3
SIGMA_BOUNDS = (1e-3, 200.0)
MAX_WIDTH = 501


class NoMovementError(ValueError):
    """Raised by :func:`sparc` on a signal whose speed is zero everywhere."""


class CalibrationError(ValueError):
    pass


def region_mask(traj: Trajectory, region: str) -> np.ndarray:
    if region == "full":
        return np.ones(len(traj), dtype=bool)
    if region != "speaking":
        raise ValueError(f"unknown region {region!r}")
    if traj.speaking_mask is None:
        raise ValueError("speaking region requested but trajectory has no speaking mask")
    return np.asarray(traj.speaking_mask, dtype=bool)


def _pair_mask(pred: Trajectory, gt: Trajectory, region: str) -> np.ndarray:
    if len(pred) != len(gt):
        raise ValueError(f"length mismatch: pred {len(pred)} frames, gt {len(gt)} frames")
    # the ground truth owns the speaking annotation
    src = gt if gt.speaking_mask is not None or region == "full" else pred
    mask = region_mask(src, region)
    if not mask.any():
        raise ValueError("region is empty")
    return mask


def contiguous_segments(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ``(start, stop)`` runs where ``mask`` is true."""
    padded = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    edges = np.flatnonzero(np.diff(padded.astype(int)))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def normalized_mse(pred: Trajectory, gt: Trajectory, region: str = "full") -> float:
    """Squared error over the region, divided by each channel's gt variance there."""
    mask = _pair_mask(pred, gt, region)
    p = pred.samples[mask]
    g = gt.samples[mask]
    var = np.maximum(g.var(axis=0), 1e-18)
    return float(np.mean((p - g) ** 2 / var))


def _orthonormal_basis(block: np.ndarray, rcond: float = CCA_RCOND) -> np.ndarray:
    centred = block - block.mean(axis=0)
    U, sv, _ = np.linalg.svd(centred, full_matrices=False)
    if sv.size == 0 or sv[0] == 0.0:
        return U[:, :0]
    return U[:, sv > rcond * sv[0]]


def first_canonical_correlation(X: np.ndarray, Y: np.ndarray, rcond: float = CCA_RCOND) -> float:
    """Largest canonical correlation between the column blocks of X and Y.

    Rows are observations. Each centred block is whitened through its thin SVD;
    directions with singular value below ``rcond`` times the largest are
    dropped, which keeps the result invariant to invertible maps of either
    block. A block without variance correlates at 0.
    """
    Qx = _orthonormal_basis(np.asarray(X, dtype=float), rcond)
    Qy = _orthonormal_basis(np.asarray(Y, dtype=float), rcond)
    if Qx.shape[1] == 0 or Qy.shape[1] == 0:
        return 0.0
    return float(min(np.linalg.svd(Qx.T @ Qy, compute_uv=False)[0], 1.0))


def local_cca(
    pred: Trajectory,
    gt: Trajectory,
    window: int = WINDOW_LEN,
    hop: int = HOP,
    region: str = "full",
) -> float:
    """Mean first canonical correlation over 50-frame windows inside the region.

    Each window is treated as ``window`` observations of 3 variables per block.
    """
    mask = _pair_mask(pred, gt, region)
    starts = window_starts(len(gt), window, hop)
    values = []
    for s in starts:
        if not mask[s : s + window].all():
            continue
        values.append(
            first_canonical_correlation(pred.samples[s : s + window], gt.samples[s : s + window])
        )
    if not values:
        raise ValueError("no eligible windows in region")
    return float(np.clip(np.mean(values), 0.0, 1.0))


def sparc(
    signal: np.ndarray,
    sample_rate: float,
    cutoff_hz: float = 10.0,
    amp_threshold: float = 0.05,
    pad_level: int = 4,
) -> float:
    """Spectral arc length of the speed profile of a single channel.

    The speed is ``|diff(signal)| * sample_rate``; its magnitude spectrum is
    zero-padded to ``2 ** (ceil(log2(n)) + pad_level)`` points and scaled to 1
    at 0 Hz. The arc is measured from 0 Hz up to the last frequency below
    ``cutoff_hz`` whose magnitude still reaches ``amp_threshold``, with the
    frequency axis scaled by that adaptive cutoff. Returns a negative number;
    values nearer zero are smoother.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or len(x) < 10:
        raise ValueError("sparc needs a 1-D signal of at least 10 samples")
    speed = np.abs(np.diff(x)) * sample_rate
    if not np.any(speed > 0):
        raise NoMovementError("no movement")
    nfft = 2 ** (int(np.ceil(np.log2(len(speed)))) + pad_level)
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    mag = np.abs(np.fft.rfft(speed, nfft))
    mag = mag / mag[0]

    sel = freqs <= cutoff_hz
    freqs, mag = freqs[sel], mag[sel]
    above = np.flatnonzero(mag >= amp_threshold)
    stop = max(int(above[-1]), 1) + 1
    freqs, mag = freqs[:stop], mag[:stop]
    df = np.diff(freqs) / (freqs[-1] - freqs[0])
    return float(-np.sum(np.sqrt(df**2 + np.diff(mag) ** 2)))


def sparc_abs_region(
    traj: Trajectory,
    region: str = "full",
    window: int = WINDOW_LEN,
    hop: int = HOP,
    **kwargs,
) -> np.ndarray:
    """Per-channel |SPARC| averaged over the 50-frame motion windows in a region.

    Every window (50/25 framing within each contiguous run of the region) is
    scored as one discrete movement. Windows without movement in a channel
    count as 0 there.
    """
    mask = region_mask(traj, region)
    spans = []
    for a, b in contiguous_segments(mask):
        if b - a >= window:
            spans.extend(a + s for s in window_starts(b - a, window, hop))
    if not spans:
        raise ValueError(f"no region segment of at least {window} frames for SPARC")
    out = np.zeros(N_CHANNELS)
    for c in range(N_CHANNELS):
        vals = []
        for s in spans:
            try:
                vals.append(abs(sparc(traj.samples[s : s + window, c], traj.sample_rate, **kwargs)))
            except NoMovementError:
                vals.append(0.0)
        out[c] = np.mean(vals)
    return out


def _kl_sym(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum((p - q) * (np.log(p) - np.log(q))))


def _smoothed(hist: np.ndarray) -> np.ndarray:
    h = hist.astype(float) + KL_SMOOTHING
    return h / h.sum()


def sym_kl(
    pred: Trajectory,
    gt: Trajectory,
    bins: int = 50,
    region: str = "full",
    mode: str = "yz",
) -> float:
    """Symmetrised KL divergence between pred and gt value distributions.

    ``mode="yz"`` uses a joint 2-D histogram of the Y and Z channels;
    ``mode="per_channel"`` averages three 1-D divergences instead. Bin edges
    span the pooled range of both inputs.
    """
    mask = _pair_mask(pred, gt, region)
    p = pred.samples[mask]
    g = gt.samples[mask]
    pooled = np.vstack([p, g])
    lo, hi = pooled.min(axis=0), pooled.max(axis=0)

    def edges(c: int) -> np.ndarray:
        if not hi[c] > lo[c]:
            raise ValueError(f"degenerate range on channel {c}")
        return np.linspace(lo[c], hi[c], bins + 1)

    if mode == "yz":
        e = [edges(1), edges(2)]
        hp, _, _ = np.histogram2d(p[:, 1], p[:, 2], bins=e)
        hg, _, _ = np.histogram2d(g[:, 1], g[:, 2], bins=e)
        return _kl_sym(_smoothed(hp), _smoothed(hg))
    if mode == "per_channel":
        vals = []
        for c in range(N_CHANNELS):
            e = edges(c)
            vals.append(
                _kl_sym(_smoothed(np.histogram(p[:, c], e)[0]), _smoothed(np.histogram(g[:, c], e)[0]))
            )
        return float(np.mean(vals))
    raise ValueError(f"unknown KL mode {mode!r}")


def hf_ratio(traj: Trajectory, cutoff_hz: float = HF_CUTOFF_HZ) -> float:
    """Share of periodogram power above ``cutoff_hz``, averaged over channels."""
    n = len(traj)
    if n < 2 * traj.sample_rate / cutoff_hz:
        raise ValueError(
            f"trajectory too short for a {cutoff_hz} Hz split: {n} frames"
        )
    freqs, power = periodogram(traj.samples, fs=traj.sample_rate, detrend="constant", axis=0)
    total = power.sum(axis=0)
    if np.any(total <= 0):
        raise ValueError("zero total power")
    return float(np.mean(power[freqs > cutoff_hz].sum(axis=0) / total))


@dataclass(frozen=True)
class Calibration:
    spec: LinearFilterSpec
    target_ratio: float
    achieved_ratio: float

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "target_ratio": self.target_ratio,
            "achieved_ratio": self.achieved_ratio,
        }


def calibrate_linear(
    kind: str,
    reference: Trajectory,
    noisy: Trajectory,
    sigma_tol: float = 1e-3,
) -> Calibration:
    """Weakest linear filter whose output is no more jittery than ``reference``.

    Jitter is measured by :func:`hf_ratio`. Gaussian sigma is found by
    bisection to ``sigma_tol``; moving-average widths are scanned over odd
    integers.
    """
    target = hf_ratio(reference)
    goal = target + CALIBRATION_SLACK

    def ratio(spec: LinearFilterSpec) -> float:
        return hf_ratio(apply_linear(noisy, spec))

    if kind == "gaussian":
        lo, upper = SIGMA_BOUNDS
        lo_spec = LinearFilterSpec("gaussian", lo)
        if ratio(lo_spec) <= goal:
            return Calibration(lo_spec, target, ratio(lo_spec))
        # Bracket by doubling from below: with very wide kernels edge effects
        # make the ratio climb again, so the upper bound is not a safe bracket.
        hi = 0.25
        while ratio(LinearFilterSpec("gaussian", hi)) > goal:
            if hi >= upper:
                raise CalibrationError("target ratio unreachable")
            lo, hi = hi, min(2.0 * hi, upper)
        while hi - lo > sigma_tol:
            mid = 0.5 * (lo + hi)
            if ratio(LinearFilterSpec("gaussian", mid)) <= goal:
                hi = mid
            else:
                lo = mid
        spec = LinearFilterSpec("gaussian", hi)
        return Calibration(spec, target, ratio(spec))

    if kind in ("moving_average", "mva"):
        for width in range(1, MAX_WIDTH + 1, 2):
            spec = LinearFilterSpec("moving_average", width)
            achieved = ratio(spec)
            if achieved <= goal:
                return Calibration(spec, target, achieved)
        raise CalibrationError("target ratio unreachable")
    raise ValueError(f"unknown filter kind {kind!r}")


@dataclass(frozen=True)
class EvalReport:
    normalized_mse: float
    local_cca: float
    sparc_abs: tuple[float, float, float]
    sparc_abs_mean: float
    sym_kl: float
    hf_ratio: float
    region: str
    conventions: str = (
        "local CCA: 50-frame windows as observations of 3 variables, "
        "SVD whitening with rank cutoff 1e-10; sym-KL: 50x50 (Y,Z) histogram, "
        "smoothing 1e-6; SPARC: cutoff 10 Hz, threshold 0.05"
    )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sparc_abs"] = list(self.sparc_abs)
        return d


def evaluate(pred: Trajectory, gt: Trajectory, region: str = "speaking") -> EvalReport:
    """All metrics for one prediction against its ground truth."""
    mask = _pair_mask(pred, gt, region)
    pred_r = Trajectory(pred.samples, pred.sample_rate, mask)
    sp = sparc_abs_region(pred_r, "speaking")
    return EvalReport(
        normalized_mse=normalized_mse(pred, gt, region),
        local_cca=local_cca(pred, gt, region=region),
        sparc_abs=tuple(float(v) for v in sp),
        sparc_abs_mean=float(sp.mean()),
        sym_kl=sym_kl(pred, gt, region=region),
        hf_ratio=hf_ratio(pred),
        region=region,
    )
