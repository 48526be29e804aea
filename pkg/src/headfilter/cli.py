"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 training failure, 4 data/shape error,
5 calibration failure. Every command writes ``manifest_<command>_<tag>.json`` with
its resolved parameters and the SHA-256 of every input and output file. The
tag is the output file stem, the calibration kind or the impulse channel;
``synth`` writes plain ``manifest_synth.json``.
"""

from __future__ import annotations

import functools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import autoencoder as ae
from .core import CHANNEL_NAMES, compute_stats
from .io import (
    dump_json,
    read_trajectory_csv,
    write_manifest,
    write_trajectory_csv,
)
from .linear import LinearFilterSpec, apply_linear, impulse_probe, linear_filter
from .metrics import CalibrationError, calibrate_linear, evaluate, region_mask
from .noise import NoiseSpec, corrupt_trajectory, synth_trajectory
from .svg import grouped_bars, histogram_panels, line_panels

EXIT_TRAIN = 3
EXIT_DATA = 4
EXIT_CALIBRATION = 5


class Failure(click.ClickException):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


def common_options(default_format: str = "json"):
    """--seed, --sample-rate, --out-dir and --format, shared by every command."""

    def wrap(f):
        @click.option("--seed", type=int, default=0, show_default=True, help="RNG seed.")
        @click.option(
            "--sample-rate", type=click.FloatRange(min=0, min_open=True), default=None,
            help="Sample rate in Hz (default: 100 or inferred from CSV time column).",
        )
        @click.option(
            "--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
            help="Directory for outputs and the run manifest.",
        )
        @click.option(
            "--format", "fmt", type=click.Choice(["csv", "json"]), default=default_format,
            show_default=True, help="Format of the summary printed to stdout.",
        )
        @functools.wraps(f)
        def inner(*args, **kwargs):
            return f(*args, **kwargs)

        return inner

    return wrap


def _out_dir(out_dir: Path | None, fallback: Path | None = None) -> Path:
    d = out_dir if out_dir is not None else (fallback.parent if fallback else Path("."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _read(path: Path, sample_rate: float | None):
    try:
        return read_trajectory_csv(path, sample_rate)
    except (OSError, ValueError) as exc:
        raise Failure(f"{path}: {exc}", EXIT_DATA) from None


def _load_model(path: Path) -> ae.MlpModel:
    try:
        return ae.load_model(path)
    except (OSError, ValueError) as exc:
        raise Failure(f"{path}: {exc}", EXIT_DATA) from None


def _filter_from_option(text: str):
    """``model:PATH`` or a linear spec such as ``gaussian:8`` / ``mva:35``."""
    kind, _, value = text.partition(":")
    if kind == "model":
        model = _load_model(Path(value))
        return ae.model_filter(model), {"model": value}
    try:
        spec = LinearFilterSpec.parse(text)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--filter") from None
    return linear_filter(spec), spec.to_dict()


def _echo(obj: dict, fmt: str) -> None:
    if fmt == "json":
        click.echo(json.dumps(obj, sort_keys=True))
    else:
        keys = sorted(obj)
        click.echo(",".join(keys))
        click.echo(",".join(str(obj[k]) for k in keys))


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def main(verbose: int) -> None:
    """De-noise head-motion trajectories and score filters."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--duration", type=float, default=60.0, show_default=True, help="Seconds per file.")
@click.option("--count", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--nod-rate", type=click.FloatRange(min=0), default=0.3, show_default=True)
@common_options()
def synth(duration, count, nod_rate, seed, sample_rate, out_dir, fmt):
    """Write COUNT seeded synthetic trajectories as CSV."""
    if duration < 1:
        raise click.BadParameter("must be at least 1 second", param_hint="--duration")
    rate = sample_rate or 100.0
    out = _out_dir(out_dir)
    written = []
    for i in range(count):
        traj = synth_trajectory([seed, i], duration, rate, nod_rate)
        path = out / f"synth_{seed}_{i:03d}.csv"
        write_trajectory_csv(traj, path)
        written.append(path)
    params = {"seed": seed, "duration": duration, "count": count, "nod_rate": nod_rate,
              "sample_rate": rate}
    write_manifest(out, "synth", params, outputs=written)
    _echo({"files": len(written), "out_dir": str(out)}, fmt)


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              required=True)
@click.option("--noise", required=True, help="dropout:RATE, dropout-exact:RATE or gauss:SIGMA.")
@click.option("--stats-model", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None, help="Take normalization stats from this model file.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@common_options()
def corrupt(in_path, noise, stats_model, out_path, seed, sample_rate, out_dir, fmt):
    """Corrupt a trajectory in normalized space; writes CSV plus a JSON sidecar."""
    try:
        spec = NoiseSpec.parse(noise, seed=seed)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--noise") from None
    if spec is None:
        raise click.BadParameter("'none' is not a corruption", param_hint="--noise")
    traj = _read(in_path, sample_rate)
    stats = _load_model(stats_model).norm_stats if stats_model else compute_stats([traj])
    noisy = corrupt_trajectory(traj, spec, stats)
    out = _out_dir(out_dir, out_path)
    write_trajectory_csv(noisy, out_path)
    sidecar = out_path.with_suffix(".noise.json")
    dump_json({"noise": spec.to_dict(), "norm_stats": stats.to_dict()}, sidecar)
    write_manifest(out, "corrupt", {"noise": spec.to_dict(), "out": str(out_path)},
                   inputs=[in_path] + ([stats_model] if stats_model else []),
                   outputs=[out_path, sidecar], tag=out_path.stem)
    _echo({"frames": len(noisy), "out": str(out_path)}, fmt)


def _data_files(paths) -> list[Path]:
    files = []
    for p in paths:
        p = Path(p)
        files.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    return files


@main.command()
@click.option("--data", multiple=True, required=True,
              type=click.Path(exists=True, path_type=Path), help="CSV files or directories.")
@click.option("--val-split", type=click.FloatRange(0, 1, min_open=True, max_open=True),
              default=0.2, show_default=True)
@click.option("--arch", default="150-3000-180", show_default=True,
              help="Encoder widths; decoder mirrors them.")
@click.option("--epochs", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--lr", type=click.FloatRange(min=0, min_open=True), default=1e-4, show_default=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=64, show_default=True)
@click.option("--noise", "noises", multiple=True, default=("none",), show_default=True,
              help="Input corruption during training: none, dropout:0.5, gauss:0.2. Repeatable.")
@click.option("--input-dropout", is_flag=True, help="Dropout layer (rate 0.5) before the input.")
@click.option("--activation", type=click.Choice(ae.ACTIVATIONS), default="relu", show_default=True)
@click.option("--patience", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path),
              default=Path("model.json"), show_default=True)
@common_options()
def train(data, val_split, arch, epochs, lr, batch_size, noises, input_dropout, activation,
          patience, out_path, seed, sample_rate, out_dir, fmt):
    """Train the de-noising autoencoder on clean trajectories."""
    try:
        layer_sizes = ae.parse_arch(arch)
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--arch") from None
    specs = []
    for k, text in enumerate(noises):
        try:
            spec = NoiseSpec.parse(text, seed=seed + 1 + k)
        except ValueError as exc:
            raise click.BadParameter(str(exc), param_hint="--noise") from None
        if spec is not None:
            specs.append(spec)

    files = _data_files(data)
    if len(files) < 2:
        raise Failure("need at least two data files (train and validation)", EXIT_DATA)
    trajs = [_read(f, sample_rate) for f in files]
    rates = {t.sample_rate for t in trajs}
    if len(rates) != 1:
        raise Failure(f"data files disagree on sample rate: {sorted(rates)}", EXIT_DATA)
    order = np.random.default_rng(seed).permutation(len(trajs))
    n_val = max(1, int(round(val_split * len(trajs))))
    val = [trajs[i] for i in order[:n_val]]
    tr = [trajs[i] for i in order[n_val:]]
    if not tr:
        raise Failure("validation split leaves no training files", EXIT_DATA)

    stats = compute_stats(tr)
    try:
        X = ae.trajectory_windows(tr, stats)
        V = ae.trajectory_windows(val, stats)
    except ValueError as exc:
        raise Failure(str(exc), EXIT_DATA) from None
    config = ae.TrainConfig(epochs=epochs, learning_rate=lr, batch_size=batch_size, seed=seed,
                            noise=tuple(specs), early_stop_patience=patience)
    try:
        model, history = ae.train(X, V, config, layer_sizes, hidden_activation=activation,
                                  input_dropout_rate=0.5 if input_dropout else 0.0,
                                  norm_stats=stats, sample_rate=rates.pop())
    except ae.TrainingDiverged as exc:
        raise Failure(str(exc), EXIT_TRAIN) from None
    except ValueError as exc:
        raise Failure(str(exc), EXIT_DATA) from None

    out = _out_dir(out_dir, out_path)
    ae.save_model(model, out_path)
    hist_path = out_path.with_suffix(".history.csv")
    hist_path.write_text(history.to_csv(), encoding="utf-8")
    params = {"arch": arch, "layer_sizes": layer_sizes, "epochs": epochs, "lr": lr,
              "batch_size": batch_size, "noise": [s.to_dict() for s in specs],
              "input_dropout": input_dropout, "activation": activation, "patience": patience,
              "val_split": val_split, "seed": seed,
              "train_files": [str(files[i]) for i in order[n_val:]],
              "val_files": [str(files[i]) for i in order[:n_val]]}
    write_manifest(out, "train", params, inputs=files, outputs=[out_path, hist_path],
                   tag=out_path.stem)
    _echo({"epochs_run": len(history.train_loss), "best_epoch": history.best_epoch,
           "best_val_loss": history.val_loss[history.best_epoch],
           "train_windows": len(X), "model": str(out_path)}, fmt)


@main.command(name="filter")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None)
@click.option("--linear", "linear_text", default=None, help="gaussian:SIGMA or mva:WIDTH.")
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@common_options()
def filter_cmd(model_path, linear_text, in_path, out_path, seed, sample_rate, out_dir, fmt):
    """Apply the autoencoder or a linear smoother to one trajectory."""
    if (model_path is None) == (linear_text is None):
        raise click.UsageError("give exactly one of --model or --linear")
    traj = _read(in_path, sample_rate)
    if model_path is not None:
        model = _load_model(model_path)
        try:
            result = ae.filter_trajectory(model, traj)
        except ValueError as exc:
            raise Failure(str(exc), EXIT_DATA) from None
        params = {"model": str(model_path)}
        inputs = [in_path, model_path]
    else:
        try:
            spec = LinearFilterSpec.parse(linear_text)
        except ValueError as exc:
            raise click.BadParameter(str(exc), param_hint="--linear") from None
        result = apply_linear(traj, spec)
        params = {"linear": spec.to_dict()}
        inputs = [in_path]
    out = _out_dir(out_dir, out_path)
    write_trajectory_csv(result, out_path)
    write_manifest(out, "filter", {**params, "out": str(out_path)}, inputs=inputs,
                   outputs=[out_path], tag=out_path.stem)
    _echo({"frames": len(result), "out": str(out_path)}, fmt)


@main.command()
@click.option("--kind", type=click.Choice(["gaussian", "mva"]), required=True)
@click.option("--reference", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              required=True, help="Trajectory after the autoencoder filter.")
@click.option("--noisy", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              required=True, help="Trajectory before filtering.")
@common_options()
def calibrate(kind, reference, noisy, seed, sample_rate, out_dir, fmt):
    """Match a linear filter's high-frequency power ratio to a reference."""
    ref = _read(reference, sample_rate)
    raw = _read(noisy, sample_rate)
    try:
        result = calibrate_linear("moving_average" if kind == "mva" else kind, ref, raw)
    except CalibrationError as exc:
        raise Failure(str(exc), EXIT_CALIBRATION) from None
    except ValueError as exc:
        raise Failure(str(exc), EXIT_DATA) from None
    out = _out_dir(out_dir)
    path = out / f"calibration_{kind}.json"
    dump_json(result.to_dict(), path)
    write_manifest(out, "calibrate", {"kind": kind}, inputs=[reference, noisy], outputs=[path],
                   tag=kind)
    _echo({"kind": result.spec.kind, "param": result.spec.param,
           "target_ratio": result.target_ratio, "achieved_ratio": result.achieved_ratio}, fmt)


@main.command()
@click.option("--filter", "filter_text", required=True,
              help="model:PATH, gaussian:SIGMA or mva:WIDTH.")
@click.option("--channel", type=click.Choice(CHANNEL_NAMES), default="ry", show_default=True)
@click.option("--len", "length", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--amplitude", type=float, default=1.0, show_default=True)
@common_options()
def impulse(filter_text, channel, length, amplitude, seed, sample_rate, out_dir, fmt):
    """Response of a filter to a single spike on one channel."""
    filt, params = _filter_from_option(filter_text)
    rate = sample_rate or 100.0
    c = CHANNEL_NAMES.index(channel)
    try:
        raw = impulse_probe(filt, c, length, amplitude, rate)
        delta = impulse_probe(filt, c, length, amplitude, rate, subtract_baseline=True)
    except ValueError as exc:
        raise Failure(str(exc), EXIT_DATA) from None
    out = _out_dir(out_dir)
    csv_path = out / f"impulse_{channel}.csv"
    write_trajectory_csv(raw, csv_path)
    off = [k for k in range(3) if k != c]
    summary = {
        "filter": params,
        "channel": channel,
        "length": length,
        "amplitude": amplitude,
        "max_abs_response": {
            name: float(np.abs(raw.samples[:, k]).max()) for k, name in enumerate(CHANNEL_NAMES)
        },
        "max_abs_spike_effect": {
            name: float(np.abs(delta.samples[:, k]).max()) for k, name in enumerate(CHANNEL_NAMES)
        },
        "off_channel_max_abs": float(np.abs(raw.samples[:, off]).max()),
        "off_channel_max_abs_spike_effect": float(np.abs(delta.samples[:, off]).max()),
    }
    json_path = out / f"impulse_{channel}.json"
    dump_json(summary, json_path)
    svg_path = out / f"impulse_{channel}.svg"
    svg_path.write_text(
        line_panels([(name, raw.samples[:, k]) for k, name in enumerate(CHANNEL_NAMES)]),
        encoding="utf-8",
    )
    write_manifest(out, "impulse", {"filter": params, "channel": channel, "length": length,
                                    "amplitude": amplitude, "sample_rate": rate},
                   inputs=[Path(params["model"])] if "model" in params else [],
                   outputs=[csv_path, json_path, svg_path], tag=channel)
    _echo({"off_channel_max_abs": summary["off_channel_max_abs"],
           "off_channel_max_abs_spike_effect": summary["off_channel_max_abs_spike_effect"]}, fmt)


TABLE_COLUMNS = ["filter", "mse", "cca", "sym_kl", "sparc_abs_x", "sparc_abs_y", "sparc_abs_z",
                 "sparc_abs_mean", "hf_ratio"]


def _parse_pred(text: str) -> tuple[str, Path]:
    label, sep, path = text.partition("=")
    if not sep:
        return Path(text).stem, Path(text)
    return label, Path(path)


@main.command(name="evaluate")
@click.option("--pred", "preds", multiple=True, required=True,
              help="Prediction CSV, optionally LABEL=PATH. Repeat for a filter comparison.")
@click.option("--gt", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--region", type=click.Choice(["speaking", "full"]), default="speaking",
              show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False, path_type=Path),
              default=Path("report.json"), show_default=True)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@common_options(default_format="csv")
def evaluate_cmd(preds, gt, region, out_path, jobs, seed, sample_rate, out_dir, fmt):
    """Score predictions against ground truth with all four metrics."""
    pairs = [_parse_pred(p) for p in preds]
    for _, p in pairs:
        if not p.exists():
            raise click.BadParameter(f"{p} does not exist", param_hint="--pred")
    truth = _read(gt, sample_rate)

    def score(pair):
        label, path = pair
        pred = _read(path, sample_rate)
        if len(pred) != len(truth):
            raise Failure(
                f"length mismatch: {path} has {len(pred)} frames, {gt} has {len(truth)} frames",
                EXIT_DATA,
            )
        try:
            return label, path, pred, evaluate(pred, truth, region)
        except ValueError as exc:
            raise Failure(f"{path}: {exc}", EXIT_DATA) from None

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(score, pairs))

    out = _out_dir(out_dir, out_path)
    reports = [{"file": str(path), "filter": label, "gt": str(gt), **rep.to_dict()}
               for label, path, _, rep in results]
    dump_json(reports, out_path)

    rows = [",".join(TABLE_COLUMNS)]
    for label, _, _, rep in results:
        vals = [rep.normalized_mse, rep.local_cca, rep.sym_kl, *rep.sparc_abs,
                rep.sparc_abs_mean, rep.hf_ratio]
        rows.append(",".join([label] + [repr(float(v)) for v in vals]))
    table_path = out_path.with_suffix(".table.csv")
    table_path.write_text("\n".join(rows) + "\n", encoding="utf-8")

    mask = region_mask(truth, region)
    panels = []
    for title, traj in [("ground truth", truth)] + [(lab, p) for lab, _, p, _ in results]:
        y, z = traj.samples[mask, 1], traj.samples[mask, 2]
        hist, _, _ = np.histogram2d(y, z, bins=30)
        panels.append((title, hist))
    dist_path = out_path.with_suffix(".distribution.svg")
    dist_path.write_text(histogram_panels(panels), encoding="utf-8")

    groups = ["X", "Y", "Z"]
    series = [(lab, rep.sparc_abs) for lab, _, _, rep in results]
    smooth_path = out_path.with_suffix(".smoothness.svg")
    smooth_path.write_text(grouped_bars(groups, series, "|SPARC|"), encoding="utf-8")

    write_manifest(out, "evaluate", {"region": region, "preds": [[l, str(p)] for l, p in pairs]},
                   inputs=[gt] + [p for _, p in pairs],
                   outputs=[out_path, table_path, dist_path, smooth_path], tag=out_path.stem)
    if fmt == "csv":
        click.echo("\n".join(rows))
    else:
        click.echo(json.dumps(reports, sort_keys=True))


if __name__ == "__main__":
    main()
