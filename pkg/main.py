#!/usr/bin/env python3

# The MIT License (MIT)
#
# Copyright © 2026 The faultwave developers
#
# Permission is hereby granted, free of charge, to any person obtaining a copy of this software and associated
# documentation files (the “Software”), to deal in the Software without restriction, including without limitation the
# rights to use, copy, modify, merge, publish, distribute, sublicense, and/or sell copies of the Software,
# and to permit persons to whom the Software is furnished to do so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all copies or substantial portions of
# the Software. THE SOFTWARE IS PROVIDED “AS IS”, WITHOUT WARRANTY OF ANY KIND, EXPRESS OR IMPLIED, INCLUDING BUT NOT
# LIMITED TO THE WARRANTIES OF MERCHANTABILITY, FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT
# SHALL THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER LIABILITY, WHETHER IN AN ACTION OF
# CONTRACT, TORT OR OTHERWISE, ARISING FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS
# IN THE SOFTWARE.

from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from functools import wraps
from pathlib import Path
from typing import List, Optional, Sequence, Tuple
import logging
import os
import sys

import click

from datastore import (
    SPEC_EXTENSION,
    TRACE_EXTENSION,
    ManifestRecord,
    Modality,
    group_pairs,
    measurement_file_name,
    read_manifest,
    read_spectrogram,
    read_split,
    read_trace,
    stratified_split,
    trace_file_name,
    write_manifest,
    write_spectrogram,
    write_split,
    write_trace,
)
from dcnn import LabeledSet, Network, evaluate, fit, load_network, predict, save_network
from errors import ConfigurationError, FaultwaveError
from evalharness import class_names, confusion, metrics, sweep_distance, sweep_duration
from misc import atomic_write
from runconfig import RunConfig, read_run_config
from sigmodel import generate_dataset, nearfield_report, truncate
from spectro import Spectrogram, merge, render_pgm, trace_spectrogram, write_png

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]
MANIFEST_NAME = "manifest.tsv"
RUNCONFIG_NAME = "runconfig.txt"
HISTORY_SUFFIX = "_history.tsv"
SPLIT_SUFFIX = "_split.tsv"

log = logging.getLogger("faultwave")


def setup_logging():
    level = os.environ.get("FAULTWAVE_LOG", "WARNING").upper()
    if level not in LOG_LEVELS:
        click.echo(f"error: invalid value \"{level}\" for FAULTWAVE_LOG, use one of {', '.join(LOG_LEVELS)}",
                   err=True)
        sys.exit(ConfigurationError.exit_code)

    logging.basicConfig(level=level, format="%(asctime)s %(name)s [%(levelname)s] %(message)s")


def report_errors(command):
    """Turn the exceptions raised by a command into a message on stderr and an exit code"""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except FaultwaveError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(err.exit_code)
        except OSError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(2)

    return wrapper


def load_config(config_file: Optional[str], seed: Optional[int], threads: Optional[int]) -> RunConfig:
    """Read the configuration file (if any) and apply the command-line flags on top of it"""
    config = read_run_config(config_file) if config_file else RunConfig()
    if seed is not None:
        config.run.seed = seed
    if threads is not None:
        config.run.threads = threads
    return config


def write_run_config(config: RunConfig, out_dir: Path):
    with atomic_write(out_dir / RUNCONFIG_NAME, mode="w") as outf:
        outf.write(config.to_text())


def common_options(command):
    command = click.option("--threads", type=int, default=None,
                           help="Maximum number of worker processes (1 is bit-reproducible).")(command)
    command = click.option("--seed", type=int, default=None, help="Root seed of every random stream.")(command)
    command = click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), default=None,
                           help="Configuration file with section.key=value lines.")(command)
    return command


@click.group()
def cli():
    setup_logging()


@click.command("simulate")
@common_options
@click.option("--carrier", type=float, multiple=True, help="Carrier frequency in Hz (repeatable).")
@click.option("--distance-m", type=float, multiple=True, help="Antenna distance in meters (repeatable).")
@click.option("--duration-s", type=float, default=None, help="Duration of each trace in seconds.")
@click.option("--dry-run", is_flag=True, help="Print the dimensions of the plan and exit.")
@click.argument("out_dir", type=click.Path(file_okay=False))
@report_errors
def simulate(config_file, seed, threads, carrier, distance_m, duration_s, dry_run, out_dir):
    """Simulate a dataset of S-parameter traces and write it to OUT_DIR"""
    config = load_config(config_file, seed, threads)
    if carrier:
        config.sigmodel.carriers_hz = tuple(carrier)
    if distance_m:
        config.sigmodel.distances_m = tuple(distance_m)
    if duration_s is not None:
        config.sigmodel.duration_s = duration_s
    config.validate()

    plan = config.plan()
    if dry_run:
        names = ("conditions", "carriers", "distances", "trials", "S-parameters")
        click.echo(" × ".join(f"{size} {name}" for (name, size) in zip(names, plan.shape())) +
                   f" = {plan.num_of_traces()} traces of {plan.duration_s} s at {plan.sample_rate_hz:g} Hz")
        return

    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    traces = generate_dataset(plan, workers=config.run.threads)

    records = []
    for trace in traces:
        name = trace_file_name(trace.metadata)
        write_trace(trace, out_path / name)
        records.append(ManifestRecord.for_trace(name, trace))
    log.info("%d traces written to %s", len(records), out_path)

    counts = Counter((r.modality.value, r.carrier_hz, r.distance_m) for r in records)
    for (modality, carrier_hz, distance), count in sorted(counts.items()):
        click.echo(f"{modality} {carrier_hz / 1e9:g} GHz {distance * 100:g} cm: {count} traces")
    click.echo(f"{len(records)} traces written to {out_path}")

    write_run_config(config, out_path)
    write_manifest(records, out_path / MANIFEST_NAME)


def _spectrogram_job(job) -> Spectrogram:
    paths, stft, image_h, image_w, duration_s, offset_s = job
    images = []
    for path in paths:
        trace = read_trace(path)
        if duration_s is not None:
            trace = truncate(trace, duration_s, offset_s)
        images.append(trace_spectrogram(trace, stft, image_h, image_w))
    return images[0] if len(images) == 1 else merge(images[0], images[1], (image_h, image_w))


def _map(function, jobs: Sequence, workers: int) -> List:
    if workers <= 1:
        return [function(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(function, jobs))


def _write_image(spec: Spectrogram, path: Path, image_format: str):
    with atomic_write(path.with_suffix(f".{image_format}")) as outf:
        if image_format == "pgm":
            outf.write(render_pgm(spec))
        else:
            write_png(spec, outf)


@click.command("spectrogram")
@common_options
@click.option("--merge", "merge_pairs", is_flag=True, help="Stack the S11 and S21 spectrograms of each trial.")
@click.option("--modality", type=click.Choice(["s11", "s21", "both"], case_sensitive=False), default=None,
              help="Which traces to transform (default: all of them, or both with --merge).")
@click.option("--duration-s", type=float, default=None, help="Truncate traces to this duration first.")
@click.option("--emit-images", is_flag=True, help="Also save each spectrogram as an image.")
@click.option("--image-format", type=click.Choice(["pgm", "png"]), default="pgm", help="Format of the images.")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@report_errors
def spectrogram(config_file, seed, threads, merge_pairs, modality, duration_s, emit_images, image_format,
                manifest, out_dir):
    """Compute the spectrograms of the traces listed in MANIFEST and cache them in OUT_DIR"""
    config = load_config(config_file, seed, threads)
    config.validate()

    selected = Modality.parse(modality) if modality else (Modality.BOTH if merge_pairs else None)
    if merge_pairs and selected != Modality.BOTH:
        raise ConfigurationError("--merge requires --modality both")
    if selected == Modality.BOTH and not merge_pairs:
        raise ConfigurationError("--modality both requires --merge")

    manifest_path = Path(manifest)
    root = manifest_path.parent
    records = [r for r in read_manifest(manifest_path) if r.path.endswith(TRACE_EXTENSION)]

    if selected is None:
        groups = [(r.cell_key(), [r]) for r in records]
    else:
        groups = group_pairs(records, key_of=ManifestRecord.cell_key, modality_of=lambda r: r.modality,
                             modality=selected)

    stft = config.stft()
    jobs = [(tuple(root / r.path for r in items), stft, config.spectro.image_h, config.spectro.image_w,
             duration_s, config.evalharness.truncate_offset_s) for (_, items) in groups]
    spectrograms = _map(_spectrogram_job, jobs, config.run.threads)

    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    out_records = []
    for (_, items), spec in zip(groups, spectrograms):
        first = items[0]
        kind = Modality.BOTH if len(items) == 2 else first.modality
        name = measurement_file_name(first.fault, kind, first.carrier_hz, first.distance_m, first.trial,
                                     SPEC_EXTENSION)
        write_spectrogram(spec, out_path / name, dtype=config.datastore.cache_dtype)
        if emit_images:
            _write_image(spec, out_path / name, image_format)
        out_records.append(ManifestRecord(path=name, fault=first.fault, modality=kind, carrier_hz=first.carrier_hz,
                                          distance_m=first.distance_m, trial=first.trial))

    click.echo(f"{len(out_records)} spectrograms written to {out_path}")
    write_run_config(config, out_path)
    write_manifest(out_records, out_path / MANIFEST_NAME)


def load_labeled_set(manifest: str) -> Tuple[LabeledSet, List[ManifestRecord]]:
    """Read the spectrograms listed in a manifest, which must all share the same modality"""
    manifest_path = Path(manifest)
    records = [r for r in read_manifest(manifest_path) if r.path.endswith(SPEC_EXTENSION)]
    if not records:
        raise ConfigurationError(f"{manifest} does not list any spectrogram")

    modalities = {r.modality for r in records}
    if len(modalities) > 1:
        raise ConfigurationError(f"{manifest} mixes modalities {sorted(m.value for m in modalities)}")

    spectrograms = [read_spectrogram(manifest_path.parent / r.path) for r in records]
    return LabeledSet.from_spectrograms(spectrograms, [int(r.fault) for r in records]), records


def split_indices(config: RunConfig, dataset: LabeledSet, n_classes: int) -> Tuple[List[int], List[int]]:
    return stratified_split(list(range(len(dataset))), config.split_spec(),
                            label_of=lambda i: int(dataset.labels[i]), n_classes=n_classes)


def model_sidecar(model_path: Path, suffix: str) -> Path:
    """Return the path of a file written next to a model, e.g. ``net_split.tsv`` for ``net.fwnn``"""
    return model_path.with_name(model_path.stem + suffix)


@click.command("train")
@common_options
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("model", type=click.Path(dir_okay=False))
@report_errors
def train(config_file, seed, threads, manifest, model):
    """Train a classifier on the spectrograms listed in MANIFEST and save it to MODEL

    The split is saved next to MODEL (NAME_split.tsv), so that `evaluate` uses the same validation set."""
    config = load_config(config_file, seed, threads)
    config.validate()

    dataset, records = load_labeled_set(manifest)
    _, height, width = dataset.images.shape[1:]
    net_config = config.dcnn.to_network(height, width)
    train_idx, val_idx = split_indices(config, dataset, net_config.n_classes)
    click.echo(f"{len(train_idx)} spectrograms for training, {len(val_idx)} for validation")

    net = Network.initialize(net_config, config.train_seed())
    history = fit(net, dataset.subset(train_idx), dataset.subset(val_idx), config.train_config())

    last = history.records[-1]
    click.echo(f"Training completed: loss {last.train_loss:.4f}, validation accuracy {last.val_accuracy * 100:.1f}%")

    model_path = Path(model)
    with atomic_write(model_path) as outf:
        save_network(net, outf)
    with atomic_write(model_sidecar(model_path, HISTORY_SUFFIX), mode="w") as outf:
        outf.write(history.to_tsv())
    write_split([records[i].path for i in train_idx], [records[i].path for i in val_idx],
                model_sidecar(model_path, SPLIT_SUFFIX))
    write_run_config(config, model_path.parent)
    click.echo(f"Model written to {model_path}")


def validation_indices(records: Sequence[ManifestRecord], model_path: Path) -> List[int]:
    """Return the position of the records that were in the validation split when the model was trained"""
    split_path = model_sidecar(model_path, SPLIT_SUFFIX)
    if not split_path.exists():
        raise ConfigurationError(f"{split_path} not found, the validation split of {model_path} is unknown "
                                 "(use --split all to evaluate every spectrogram)")

    train_paths, val_paths = read_split(split_path)
    train_paths, val_paths = set(train_paths), set(val_paths)
    indices = [i for (i, record) in enumerate(records) if record.path in val_paths]
    if not indices:
        raise ConfigurationError(f"no spectrogram in the manifest belongs to the validation split in {split_path}")

    num_of_unseen = sum(1 for r in records if r.path not in val_paths and r.path not in train_paths)
    if num_of_unseen:
        log.info("%d spectrogram(s) of the manifest were not used by the training run and are skipped",
                 num_of_unseen)
    return indices


@click.command("evaluate")
@common_options
@click.option("--split", "which", type=click.Choice(["val", "all"]), default="val",
              help="Evaluate on the validation split saved with MODEL (default) or on every spectrogram.")
@click.option("--plot", is_flag=True, help="Also draw the confusion matrix as a PNG figure.")
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@report_errors
def evaluate_cmd(config_file, seed, threads, which, plot, manifest, model, out_dir):
    """Evaluate MODEL on the spectrograms in MANIFEST and write metrics to OUT_DIR"""
    config = load_config(config_file, seed, threads)
    config.validate()

    dataset, records = load_labeled_set(manifest)
    if which == "val":
        dataset = dataset.subset(validation_indices(records, Path(model)))

    with open(model, "rb") as inpf:
        net = load_network(inpf)

    result = evaluate(net, dataset)
    cm = confusion(result.predictions, dataset.labels, n_classes=net.config.n_classes)
    report = metrics(cm)

    click.echo(f"{len(dataset)} spectrograms evaluated")
    click.echo("accuracy\tprecision\trecall\tf1")
    click.echo(f"{report.accuracy * 100:.1f}%\t{report.precision * 100:.1f}%\t"
               f"{report.recall * 100:.1f}%\t{report.f1 * 100:.1f}%")

    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    with atomic_write(out_path / "metrics.tsv", mode="w") as outf:
        outf.write(report.to_tsv())
    with atomic_write(out_path / "confusion.tsv", mode="w") as outf:
        outf.write(cm.to_tsv())
    with atomic_write(out_path / "confusion.pgm") as outf:
        outf.write(cm.render_pgm())
    if plot:
        from plots import plot_confusion
        plot_confusion(cm, out_path / "confusion.png")

    write_run_config(config, out_path)


@click.command("predict")
@common_options
@click.argument("model", type=click.Path(exists=True, dir_okay=False))
@click.argument("inputs", type=click.Path(exists=True, dir_okay=False), nargs=-1, required=True)
@report_errors
def predict_cmd(config_file, seed, threads, model, inputs):
    """Classify spectrogram caches (.spec) or single traces (.sptr) with MODEL"""
    config = load_config(config_file, seed, threads)
    config.validate()

    with open(model, "rb") as inpf:
        net = load_network(inpf)

    names = class_names(net.config.n_classes)
    for input_name in inputs:
        if input_name.endswith(TRACE_EXTENSION):
            spec = trace_spectrogram(read_trace(input_name), config.stft(),
                                     config.spectro.image_h, config.spectro.image_w)
        else:
            spec = read_spectrogram(input_name)

        label, probabilities = predict(net, spec)
        click.echo(f"{input_name}\t{names[label]}\t" + ",".join(f"{p:.4f}" for p in probabilities))


@click.command("sweep")
@common_options
@click.option("--axis", type=click.Choice(["duration", "distance"]), required=True, help="Quantity to sweep.")
@click.option("--modality", type=click.Choice(["s11", "s21", "both"], case_sensitive=False), multiple=True,
              help="Modality to test (repeatable).")
@click.option("--carrier", type=float, multiple=True, help="Carrier frequency in Hz (repeatable).")
@click.option("--distance-m", type=float, multiple=True, help="Antenna distance in meters (repeatable).")
@click.option("--duration-s", type=float, multiple=True, help="Trace duration in seconds (repeatable).")
@click.option("--plot", is_flag=True, help="Also draw the sweep as a PNG figure.")
@click.argument("out_dir", type=click.Path(file_okay=False))
@report_errors
def sweep(config_file, seed, threads, axis, modality, carrier, distance_m, duration_s, plot, out_dir):
    """Measure the accuracy against trace duration or antenna distance"""
    config = load_config(config_file, seed, threads)
    if modality:
        config.evalharness.modalities = tuple(modality)
    config.validate()

    harness = config.evalharness
    modalities = harness.parsed_modalities()
    pipeline = config.pipeline()
    seeds = config.sweep_seeds()

    if axis == "duration":
        if len(carrier) > 1 or len(distance_m) > 1:
            raise ConfigurationError("a duration sweep takes a single --carrier and a single --distance-m")
        result = sweep_duration(
            pipeline,
            durations_s=tuple(duration_s) or harness.durations_s,
            modalities=modalities,
            seeds=seeds,
            carrier_hz=carrier[0] if carrier else harness.carrier_hz,
            distance_m=distance_m[0] if distance_m else harness.distance_m,
            workers=config.run.threads,
        )
    else:
        if len(duration_s) > 1:
            raise ConfigurationError("a distance sweep takes a single --duration-s")
        result = sweep_distance(
            pipeline,
            distances_m=tuple(distance_m) or harness.distances_m,
            carriers_hz=tuple(carrier) or harness.carriers_hz,
            modalities=modalities,
            seeds=seeds,
            duration_s=duration_s[0] if duration_s else None,
            workers=config.run.threads,
        )

    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    tsv_name = f"sweep_{result.axis}.tsv"
    with atomic_write(out_path / tsv_name, mode="w") as outf:
        outf.write(result.to_tsv())
    if plot:
        from plots import plot_sweep
        plot_sweep(result, out_path / f"sweep_{result.axis}.png")

    click.echo(result.to_tsv(), nl=False)
    write_run_config(config, out_path)


@click.command("nearfield")
def nearfield():
    """Print the radius of the reactive near field of the three antennas"""
    click.echo("carrier\tlength\tradius\tquoted")
    for entry in nearfield_report():
        note = ""
        if abs(entry.discrepancy_m) >= 0.005:
            note = f"\t(differs from the quoted value by {entry.discrepancy_m * 100:+.1f} cm)"
        click.echo(f"{entry.antenna.carrier_hz / 1e9:g} GHz\t{entry.antenna.length_m * 100:.1f} cm\t"
                   f"{entry.radius_m * 100:.1f} cm\t{entry.stated_radius_m * 100:.0f} cm{note}")


cli.add_command(simulate)
cli.add_command(spectrogram)
cli.add_command(train)
cli.add_command(evaluate_cmd, name="evaluate")
cli.add_command(predict_cmd, name="predict")
cli.add_command(sweep)
cli.add_command(nearfield)

if __name__ == "__main__":
    cli()
