"""Trajectory CSV files and run manifests.

CSV layout: header ``t,rx,ry,rz`` with an optional trailing ``speaking``
column (0/1); ``t`` is in seconds and advances by ``1 / sample_rate``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .core import Trajectory

BASE_HEADER = ["t", "rx", "ry", "rz"]


def format_trajectory_csv(traj: Trajectory) -> str:
    header = BASE_HEADER + (["speaking"] if traj.speaking_mask is not None else [])
    lines = [",".join(header)]
    for i, frame in enumerate(traj.samples):
        row = [repr(i / traj.sample_rate)] + [repr(float(v)) for v in frame]
        if traj.speaking_mask is not None:
            row.append("1" if traj.speaking_mask[i] else "0")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_trajectory_csv(traj))


def parse_trajectory_csv(text: str, sample_rate: float | None = None) -> Trajectory:
    """Parse CSV text; the sample rate is inferred from ``t`` unless given."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty CSV")
    header = [h.strip() for h in rows[0]]
    if header[:4] != BASE_HEADER or len(header) not in (4, 5) or (
        len(header) == 5 and header[4] != "speaking"
    ):
        raise ValueError(f"bad CSV header {header}; expected t,rx,ry,rz[,speaking]")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError("CSV has no data rows")
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ValueError(f"bad CSV value: {exc}") from None
    if data.shape[1] != len(header):
        raise ValueError("ragged CSV rows")
    t = data[:, 0]
    if sample_rate is None:
        if len(t) < 2:
            raise ValueError("cannot infer sample rate from a single row")
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise ValueError("t must increase monotonically")
        sample_rate = float(round(1.0 / np.median(dt), 9))
    mask = None
    if len(header) == 5:
        if not np.all(np.isin(data[:, 4], (0.0, 1.0))):
            raise ValueError("speaking column must hold 0 or 1")
        mask = data[:, 4] == 1.0
    return Trajectory(data[:, 1:4], sample_rate, mask)


def read_trajectory_csv(path, sample_rate: float | None = None) -> Trajectory:
    return parse_trajectory_csv(Path(path).read_text(encoding="utf-8"), sample_rate)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_manifest(
    out_dir, command: str, params: dict, inputs=(), outputs=(), tag: str | None = None
) -> Path:
    """Record resolved parameters and file hashes as ``manifest_<command>[_<tag>].json``.

    Commands that name their output file pass its stem as ``tag`` so that
    several runs into one directory keep separate manifests.
    """
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "params": params,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in sorted(outputs, key=lambda q: Path(q).name)},
    }
    name = command if tag is None else f"{command}_{tag}"
    path = out_dir / f"manifest_{name}.json"
    dump_json(manifest, path)
    return path
