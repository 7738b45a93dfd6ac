# -*- encoding: utf-8 -*-
#
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

"""Evaluation of the classifier: confusion matrices, metrics, and parameter sweeps

A sweep is a list of cells; each cell simulates a dataset, computes spectrograms,
splits them, trains a fresh network and measures its accuracy on the validation split.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import List, Optional, Sequence, Tuple

import numpy as np

from datastore import Modality, SplitSpec, group_pairs, stratified_split
from dcnn import LabeledSet, Network, NetworkConfig, TrainConfig, evaluate, fit
from errors import ConfigurationError, DomainError
from pcg import derive_seed
from sigmodel import (
    REFERENCE_ANTENNAS,
    AntennaConfig,
    DatasetPlan,
    FaultCondition,
    SParamTrace,
    antenna_for_carrier,
    generate_dataset,
    truncate,
)
from spectro import Spectrogram, StftConfig, merge, render_pgm, trace_spectrogram

log = logging.getLogger(__name__)

# Streams drawn from the seed of a cell
_DATA_STREAM = 0
_SPLIT_STREAM = 1
_TRAIN_STREAM = 2


def class_names(n_classes: int) -> List[str]:
    names = [f.name.lower() for f in FaultCondition]
    return [names[i] if i < len(names) else f"class{i}" for i in range(n_classes)]


@dataclass
class ConfusionMatrix:
    """Counts of (true class, predicted class) pairs: rows are true classes, columns predictions"""
    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))

    def row_normalized(self) -> np.ndarray:
        """Divide each row by its sum; rows with no samples stay at zero"""
        sums = np.sum(self.counts, axis=1, keepdims=True).astype(np.float64)
        return np.divide(self.counts, sums, out=np.zeros(self.counts.shape), where=sums > 0)

    def to_tsv(self) -> str:
        names = class_names(self.n_classes)
        lines = ["true\\predicted\t" + "\t".join(names)]
        for name, row in zip(names, self.counts):
            lines.append(name + "\t" + "\t".join(str(int(x)) for x in row))
        return "\n".join(lines) + "\n"

    def render_pgm(self) -> bytes:
        """Encode the row-normalized matrix as a grayscale image, one pixel per cell"""
        return render_pgm(Spectrogram(height=self.n_classes, width=self.n_classes, values=self.row_normalized()))


def confusion(preds: Sequence[int], truth: Sequence[int], n_classes: int = 4) -> ConfusionMatrix:
    """Count how many samples of each true class have been assigned to each class"""
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise DomainError(f"{preds.size} predictions cannot be compared with {truth.size} labels")
    for name, labels in (("prediction", preds), ("label", truth)):
        if np.any((labels < 0) | (labels >= n_classes)):
            raise DomainError(f"a {name} is outside 0..{n_classes - 1}")

    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (truth, preds), 1)
    return ConfusionMatrix(counts)


@dataclass(frozen=True)
class ClassMetrics:
    """Precision, recall, and F1 of one class

    `flagged` is true when precision or recall has an empty denominator
    (no sample of the class, or no prediction of it) and has been set to 0."""
    precision: float
    recall: float
    f1: float
    support: int
    flagged: bool


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: Tuple[ClassMetrics, ...]

    def to_tsv(self) -> str:
        lines = ["metric\tvalue"]
        for name in ("accuracy", "precision", "recall", "f1"):
            lines.append(f"{name}\t{getattr(self, name)!r}")

        lines.append("")
        lines.append("class\tprecision\trecall\tf1\tsupport\tflagged")
        for name, m in zip(class_names(len(self.per_class)), self.per_class):
            lines.append(f"{name}\t{m.precision!r}\t{m.recall!r}\t{m.f1!r}\t{m.support}\t{'yes' if m.flagged else 'no'}")
        return "\n".join(lines) + "\n"


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Compute accuracy and macro-averaged precision, recall, and F1

    Macro averages are unweighted means over all the classes of the matrix."""
    total = cm.total
    if total == 0:
        raise DomainError("cannot compute metrics on an empty confusion matrix")

    counts = cm.counts
    per_class = []
    for k in range(cm.n_classes):
        tp = int(counts[k, k])
        predicted = int(np.sum(counts[:, k]))
        actual = int(np.sum(counts[k, :]))
        precision = tp / predicted if predicted > 0 else 0.0
        recall = tp / actual if actual > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append(ClassMetrics(
            precision=precision,
            recall=recall,
            f1=f1,
            support=actual,
            flagged=(predicted == 0 or actual == 0),
        ))

    return MetricsReport(
        accuracy=int(np.trace(counts)) / total,
        precision=float(np.mean([m.precision for m in per_class])),
        recall=float(np.mean([m.recall for m in per_class])),
        f1=float(np.mean([m.f1 for m in per_class])),
        per_class=tuple(per_class),
    )


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to go from a dataset plan to a trained and evaluated classifier

    The antennas, distances and S-parameters of `plan` are overridden by each cell;
    `image_h` and `image_w` give the size of a single (unmerged) spectrogram."""
    plan: DatasetPlan = field(default_factory=lambda: DatasetPlan(
        antennas=(antenna_for_carrier(2.4e9),),
        distances_m=(0.0,),
    ))
    stft: StftConfig = StftConfig()
    image_h: int = 80
    image_w: int = 80
    network: NetworkConfig = NetworkConfig()
    train: TrainConfig = TrainConfig()
    split: SplitSpec = SplitSpec()
    truncate_offset_s: float = 0.0


@dataclass(frozen=True)
class CellSpec:
    """One cell of an experiment: a modality, an antenna position, a trace duration, and a seed"""
    modality: Modality
    carrier_hz: float
    distance_m: float
    duration_s: float
    seed: int


@dataclass
class CellResult:
    cell: CellSpec
    accuracy: float
    confusion: ConfusionMatrix
    epochs: int


def _antenna(plan: DatasetPlan, carrier_hz: float) -> AntennaConfig:
    for antenna in tuple(plan.antennas) + REFERENCE_ANTENNAS:
        if np.isclose(antenna.carrier_hz, carrier_hz, rtol=1e-9, atol=0.0):
            return antenna
    return antenna_for_carrier(carrier_hz)


def trace_key(trace: SParamTrace):
    meta = trace.metadata
    return int(meta.fault), meta.carrier_hz, meta.distance_m, meta.trial_index


def build_labeled_set(
        traces: Sequence[SParamTrace],
        modality: Modality,
        stft: StftConfig = StftConfig(),
        image_h: int = 80,
        image_w: int = 80,
        duration_s: Optional[float] = None,
        offset_s: float = 0.0,
) -> LabeledSet:
    """Turn traces into labelled spectrograms, merging S11 and S21 for ``Modality.BOTH``

    If `duration_s` is not ``None``, each trace is first truncated to that duration."""
    groups = group_pairs(
        traces,
        key_of=trace_key,
        modality_of=lambda t: Modality.from_kind(t.metadata.sparam_kind),
        modality=modality,
    )
    if not groups:
        raise ConfigurationError(f"no trace matches modality {modality.value}")

    def image_of(trace: SParamTrace) -> Spectrogram:
        if duration_s is not None:
            trace = truncate(trace, duration_s, offset_s)
        return trace_spectrogram(trace, stft, image_h, image_w)

    spectrograms, labels = [], []
    for key, items in groups:
        images = [image_of(t) for t in items]
        spectrograms.append(images[0] if len(images) == 1 else merge(images[0], images[1], (image_h, image_w)))
        labels.append(key[0])

    return LabeledSet.from_spectrograms(spectrograms, labels)


def network_config_for(config: PipelineConfig, modality: Modality) -> NetworkConfig:
    height = config.image_h * (2 if modality == Modality.BOTH else 1)
    return replace(config.network, input_h=height, input_w=config.image_w,
                   n_classes=len(FaultCondition))


def split_labeled_set(dataset: LabeledSet, spec: SplitSpec,
                      n_classes: int = len(FaultCondition)) -> Tuple[LabeledSet, LabeledSet]:
    train_idx, val_idx = stratified_split(
        list(range(len(dataset))), spec, label_of=lambda i: int(dataset.labels[i]), n_classes=n_classes,
    )
    return dataset.subset(train_idx), dataset.subset(val_idx)


def run_cell(config: PipelineConfig, cell: CellSpec) -> CellResult:
    """Simulate, transform, split, train, and evaluate a single cell

    The result only depends on `config` and `cell`: its seed feeds dataset generation,
    the split, the initialization of the network and the shuffling of mini-batches
    through independent streams."""
    kinds = [k for k in config.plan.sparam_kinds
             if cell.modality == Modality.BOTH or Modality.from_kind(k) == cell.modality]
    plan = replace(
        config.plan,
        antennas=(_antenna(config.plan, cell.carrier_hz),),
        distances_m=(cell.distance_m,),
        sparam_kinds=tuple(kinds),
        base_seed=derive_seed(cell.seed, _DATA_STREAM),
    )
    if cell.duration_s > plan.duration_s + 1e-12:
        raise ConfigurationError(f"cannot truncate {plan.duration_s} s traces to {cell.duration_s} s")

    traces = generate_dataset(plan)
    dataset = build_labeled_set(traces, cell.modality, config.stft, config.image_h, config.image_w,
                                duration_s=cell.duration_s, offset_s=config.truncate_offset_s)
    train, val = split_labeled_set(dataset, replace(config.split, seed=derive_seed(cell.seed, _SPLIT_STREAM)))

    train_seed = derive_seed(cell.seed, _TRAIN_STREAM)
    net = Network.initialize(network_config_for(config, cell.modality), train_seed)
    history = fit(net, train, val, replace(config.train, seed=train_seed))
    val_eval = evaluate(net, val)

    log.info("cell %s %.3g Hz %.3g m %.3g s seed %d: accuracy %.3f", cell.modality.value, cell.carrier_hz,
             cell.distance_m, cell.duration_s, cell.seed, val_eval.accuracy)
    return CellResult(
        cell=cell,
        accuracy=val_eval.accuracy,
        confusion=confusion(val_eval.predictions, val.labels, n_classes=len(FaultCondition)),
        epochs=len(history),
    )


def run_cells(config: PipelineConfig, cells: Sequence[CellSpec], workers: int = 1) -> List[CellResult]:
    """Run many cells, serially or with a pool of processes

    Results are returned in the order of `cells` in both cases."""
    run = partial(run_cell, config)
    if workers <= 1:
        return [run(cell) for cell in cells]

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, cells))


@dataclass(frozen=True)
class SweepRow:
    setting: float
    modality: Modality
    carrier_hz: float
    accuracy: float


@dataclass
class SweepResult:
    """Mean accuracy over seeds for each (setting, modality, carrier) combination

    `axis` names the swept quantity: ``duration_s`` or ``distance_m``."""
    axis: str
    rows: List[SweepRow] = field(default_factory=list)

    def to_tsv(self) -> str:
        lines = [f"{self.axis}\tmodality\tcarrier_hz\taccuracy"]
        for row in self.rows:
            lines.append(f"{row.setting!r}\t{row.modality.value}\t{row.carrier_hz!r}\t{row.accuracy!r}")
        return "\n".join(lines) + "\n"

    def mean_accuracy(self, setting: Optional[float] = None, modality: Optional[Modality] = None,
                      carrier_hz: Optional[float] = None) -> float:
        selected = [
            row.accuracy for row in self.rows
            if (setting is None or np.isclose(row.setting, setting))
            and (modality is None or row.modality == modality)
            and (carrier_hz is None or np.isclose(row.carrier_hz, carrier_hz))
        ]
        if not selected:
            raise ConfigurationError("no sweep row matches the selection")
        return float(np.mean(selected))

    def settings(self) -> List[float]:
        return sorted({row.setting for row in self.rows})


def _aggregate(axis: str, results: Sequence[CellResult], setting_of) -> SweepResult:
    """Average the accuracies of cells that differ only in their seed, keeping the first-seen order"""
    groups = {}
    for result in results:
        cell = result.cell
        key = (setting_of(cell), cell.modality, cell.carrier_hz)
        groups.setdefault(key, []).append(result.accuracy)

    return SweepResult(axis=axis, rows=[
        SweepRow(setting=setting, modality=modality, carrier_hz=carrier, accuracy=float(np.mean(accuracies)))
        for (setting, modality, carrier), accuracies in groups.items()
    ])


def _check_seeds(seeds: Sequence[int]):
    if len(seeds) < 1:
        raise ConfigurationError("a sweep needs at least one seed")


def sweep_duration(
        config: PipelineConfig,
        durations_s: Sequence[float] = (1.0, 2.0, 3.0, 4.0, 5.0),
        modalities: Sequence[Modality] = (Modality.S11, Modality.S21, Modality.BOTH),
        seeds: Sequence[int] = (0, 1, 2),
        carrier_hz: float = 2.4e9,
        distance_m: float = 0.0,
        workers: int = 1,
) -> SweepResult:
    """Measure the accuracy as a function of the duration of the traces

    Traces are simulated once at full length and truncated to each duration, starting
    from `config.truncate_offset_s`."""
    _check_seeds(seeds)
    min_duration = config.stft.window_len / config.plan.sample_rate_hz
    for duration in durations_s:
        if duration < min_duration:
            raise ConfigurationError(
                f"a {duration} s trace is shorter than one STFT window ({min_duration} s)"
            )

    cells = [CellSpec(modality=m, carrier_hz=carrier_hz, distance_m=distance_m, duration_s=d, seed=s)
             for d in durations_s for m in modalities for s in seeds]
    log.info("duration sweep: %d cells", len(cells))
    return _aggregate("duration_s", run_cells(config, cells, workers), lambda cell: cell.duration_s)


def sweep_distance(
        config: PipelineConfig,
        distances_m: Sequence[float] = (0.0, 0.05, 0.10),
        carriers_hz: Sequence[float] = (433e6, 2.4e9, 5.8e9),
        modalities: Sequence[Modality] = (Modality.S11, Modality.S21, Modality.BOTH),
        seeds: Sequence[int] = (0, 1, 2),
        duration_s: Optional[float] = None,
        workers: int = 1,
) -> SweepResult:
    """Measure the accuracy as a function of the antenna distance, for each carrier"""
    _check_seeds(seeds)
    if any(d < 0 for d in distances_m):
        raise ConfigurationError("distances cannot be negative")

    duration = config.plan.duration_s if duration_s is None else duration_s
    cells = [CellSpec(modality=m, carrier_hz=c, distance_m=d, duration_s=duration, seed=s)
             for d in distances_m for c in carriers_hz for m in modalities for s in seeds]
    log.info("distance sweep: %d cells", len(cells))
    return _aggregate("distance_m", run_cells(config, cells, workers), lambda cell: cell.distance_m)
