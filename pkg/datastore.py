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

"""Files on disk: traces, spectrogram caches, manifests, and train/validation splits

Binary formats are little endian and independent of the platform. A trace file
(extension ``.sptr``) has a 52-byte header followed by the samples as 64-bit floats:

    offset  size  field
         0     4  magic "SPTR"
         4     2  version (u16)
         6     1  fault code (u8)
         7     1  S-parameter kind (u8, 0 = S11, 1 = S21)
         8     8  carrier frequency in Hz (f64)
        16     8  antenna distance in meters (f64)
        24     8  sampling rate in Hz (f64)
        32     8  seed (u64)
        40     4  trial index (u32)
        44     8  number of samples (u64)
        52   8·n  samples (f64)

For instance, trial 1 of an inner-race S21 trace at 2.4 GHz and 5 cm, sampled at 1 kHz
with seed 42 and holding the two samples -12.5 dB and -12.25 dB, is 68 bytes long:

    00000000  53 50 54 52 01 00 02 01  00 00 00 00 a3 e1 e1 41  |SPTR...........A|
    00000010  9a 99 99 99 99 99 a9 3f  00 00 00 00 00 40 8f 40  |.......?.....@.@|
    00000020  2a 00 00 00 00 00 00 00  01 00 00 00 02 00 00 00  |*...............|
    00000030  00 00 00 00 00 00 00 00  00 00 29 c0 00 00 00 00  |..........).....|
    00000040  00 80 28 c0                                       |..(.|

"SPTR", version 1, fault 2, kind 1, then 2.4e9, 0.05 and 1000.0 as doubles, seed 42,
trial 1, two samples, and finally -12.5 and -12.25.

A manifest is a text file with one tab-separated line per file: the path (relative to the
manifest), the fault code, the modality (S11, S21 or both), the carrier in Hz, the distance
in meters, and the trial. The trace above is listed as

    inner_race_s21_2400mhz_50mm_t001.sptr	2	S21	2400000000.0	0.05	1

A spectrogram cache (extension ``.spec``) has a 15-byte header: magic "SPEC", u16 version,
u8 dtype flag (0 = f64, 1 = f32), u32 height, u32 width, then the values row by row.
"""

import logging
import struct
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

from errors import ConfigurationError, ParseError
from misc import atomic_write
from pcg import derive_seed, make_rng
from sigmodel import FaultCondition, SParamKind, SParamTrace, TraceMetadata
from spectro import Spectrogram

log = logging.getLogger(__name__)

TRACE_MAGIC = b"SPTR"
TRACE_VERSION = 1
TRACE_HEADER = struct.Struct("<4sHBBdddQIQ")

SPEC_MAGIC = b"SPEC"
SPEC_VERSION = 1
SPEC_HEADER = struct.Struct("<4sHBII")
_SPEC_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_SPEC_FLAGS = {"float64": 0, "float32": 1}

TRACE_EXTENSION = ".sptr"
SPEC_EXTENSION = ".spec"

# Byte offsets of a few header fields, used in error messages
_OFFSET_VERSION = 4
_OFFSET_FAULT = 6
_OFFSET_KIND = 7
_OFFSET_SAMPLE_RATE = 24
_OFFSET_NUM_OF_SAMPLES = 44


class Modality(Enum):
    """Which S-parameters feed the classifier; ``BOTH`` means S11 and S21 merged"""
    S11 = "S11"
    S21 = "S21"
    BOTH = "both"

    @staticmethod
    def from_kind(kind: SParamKind) -> "Modality":
        return Modality.S11 if kind == SParamKind.S11 else Modality.S21

    @staticmethod
    def parse(text: str) -> "Modality":
        for modality in Modality:
            if modality.value.lower() == text.lower():
                return modality
        raise ConfigurationError(f"unknown modality \"{text}\", use one of s11, s21, both")


def encode_trace(trace: SParamTrace) -> bytes:
    trace.validate()
    meta = trace.metadata
    header = TRACE_HEADER.pack(
        TRACE_MAGIC,
        TRACE_VERSION,
        int(meta.fault),
        int(meta.sparam_kind),
        meta.carrier_hz,
        meta.distance_m,
        trace.sample_rate_hz,
        meta.seed,
        meta.trial_index,
        len(trace.samples),
    )
    return header + np.ascontiguousarray(trace.samples, dtype="<f8").tobytes()


def decode_trace(data: bytes) -> SParamTrace:
    """Parse the content of a trace file, raising :class:`.ParseError` on any inconsistency"""
    if len(data) < TRACE_HEADER.size:
        raise ParseError(
            f"truncated header: expected {TRACE_HEADER.size} bytes, found {len(data)}", offset=len(data)
        )

    (magic, version, fault_code, kind_code, carrier_hz, distance_m, sample_rate_hz,
     seed, trial_index, num_of_samples) = TRACE_HEADER.unpack_from(data)

    if magic != TRACE_MAGIC:
        raise ParseError(f"invalid magic number: expected {TRACE_MAGIC!r}, found {magic!r}", offset=0)
    if version != TRACE_VERSION:
        raise ParseError(f"unsupported version {version}, expected {TRACE_VERSION}", offset=_OFFSET_VERSION)
    if fault_code not in {int(f) for f in FaultCondition}:
        raise ParseError(f"invalid fault code {fault_code}", offset=_OFFSET_FAULT)
    if kind_code not in {int(k) for k in SParamKind}:
        raise ParseError(f"invalid S-parameter kind {kind_code}", offset=_OFFSET_KIND)
    if not (np.isfinite(sample_rate_hz) and sample_rate_hz > 0):
        raise ParseError(f"invalid sampling rate {sample_rate_hz}", offset=_OFFSET_SAMPLE_RATE)
    if num_of_samples == 0:
        raise ParseError("the trace contains no samples", offset=_OFFSET_NUM_OF_SAMPLES)

    expected_len = 8 * num_of_samples
    actual_len = len(data) - TRACE_HEADER.size
    if actual_len != expected_len:
        raise ParseError(
            f"wrong payload length: expected {expected_len} bytes ({num_of_samples} samples), found {actual_len}",
            offset=TRACE_HEADER.size + min(actual_len, expected_len),
        )

    samples = np.frombuffer(data, dtype="<f8", offset=TRACE_HEADER.size).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(samples))
    if len(bad) > 0:
        raise ParseError(f"sample #{bad[0]} is not finite ({samples[bad[0]]})",
                         offset=TRACE_HEADER.size + 8 * int(bad[0]))

    return SParamTrace(
        samples=samples,
        sample_rate_hz=sample_rate_hz,
        metadata=TraceMetadata(
            fault=FaultCondition(fault_code),
            sparam_kind=SParamKind(kind_code),
            carrier_hz=carrier_hz,
            distance_m=distance_m,
            seed=seed,
            trial_index=trial_index,
        ),
    )


def write_trace(trace: SParamTrace, path: Union[str, Path]):
    with atomic_write(path) as outf:
        outf.write(encode_trace(trace))


def read_trace(path: Union[str, Path]) -> SParamTrace:
    with open(path, "rb") as inpf:
        return decode_trace(inpf.read())


def encode_spectrogram(spec: Spectrogram, dtype: str = "float64") -> bytes:
    spec.validate()
    if dtype not in _SPEC_FLAGS:
        raise ConfigurationError(f"unsupported cache dtype \"{dtype}\"")

    flag = _SPEC_FLAGS[dtype]
    header = SPEC_HEADER.pack(SPEC_MAGIC, SPEC_VERSION, flag, spec.height, spec.width)
    return header + np.ascontiguousarray(spec.values, dtype=_SPEC_DTYPES[flag]).tobytes()


def decode_spectrogram(data: bytes) -> Spectrogram:
    if len(data) < SPEC_HEADER.size:
        raise ParseError(
            f"truncated header: expected {SPEC_HEADER.size} bytes, found {len(data)}", offset=len(data)
        )

    magic, version, flag, height, width = SPEC_HEADER.unpack_from(data)
    if magic != SPEC_MAGIC:
        raise ParseError(f"invalid magic number: expected {SPEC_MAGIC!r}, found {magic!r}", offset=0)
    if version != SPEC_VERSION:
        raise ParseError(f"unsupported version {version}, expected {SPEC_VERSION}", offset=_OFFSET_VERSION)
    if flag not in _SPEC_DTYPES:
        raise ParseError(f"invalid dtype flag {flag}", offset=6)
    if height == 0 or width == 0:
        raise ParseError(f"invalid spectrogram size {height}×{width}", offset=7)

    dtype = _SPEC_DTYPES[flag]
    expected_len = height * width * dtype.itemsize
    actual_len = len(data) - SPEC_HEADER.size
    if actual_len != expected_len:
        raise ParseError(
            f"wrong payload length: expected {expected_len} bytes, found {actual_len}",
            offset=SPEC_HEADER.size + min(actual_len, expected_len),
        )

    values = np.frombuffer(data, dtype=dtype, offset=SPEC_HEADER.size).astype(np.float64).reshape(height, width)
    bad = np.flatnonzero(~((values >= 0.0) & (values <= 1.0)))
    if len(bad) > 0:
        raise ParseError(f"value #{bad[0]} is outside [0, 1]", offset=SPEC_HEADER.size + dtype.itemsize * int(bad[0]))

    return Spectrogram(height=height, width=width, values=values)


def write_spectrogram(spec: Spectrogram, path: Union[str, Path], dtype: str = "float64"):
    with atomic_write(path) as outf:
        outf.write(encode_spectrogram(spec, dtype))


def read_spectrogram(path: Union[str, Path]) -> Spectrogram:
    with open(path, "rb") as inpf:
        return decode_spectrogram(inpf.read())


def measurement_file_name(fault: FaultCondition, modality: "Modality", carrier_hz: float,
                          distance_m: float, trial: int, extension: str) -> str:
    """Return a file name that identifies a measurement within a dataset"""
    return (f"{fault.name.lower()}_{modality.value.lower()}_{carrier_hz / 1e6:g}mhz_"
            f"{int(round(distance_m * 1000))}mm_t{trial:03d}{extension}")


def trace_file_name(meta: TraceMetadata) -> str:
    return measurement_file_name(meta.fault, Modality.from_kind(meta.sparam_kind), meta.carrier_hz,
                                 meta.distance_m, meta.trial_index, TRACE_EXTENSION)


@dataclass(frozen=True)
class ManifestRecord:
    """One line of a manifest: a file (relative to the manifest) and what it contains"""
    path: str
    fault: FaultCondition
    modality: Modality
    carrier_hz: float
    distance_m: float
    trial: int

    @staticmethod
    def for_trace(path: str, trace: SParamTrace) -> "ManifestRecord":
        meta = trace.metadata
        return ManifestRecord(
            path=path,
            fault=meta.fault,
            modality=Modality.from_kind(meta.sparam_kind),
            carrier_hz=meta.carrier_hz,
            distance_m=meta.distance_m,
            trial=meta.trial_index,
        )

    def cell_key(self) -> Tuple[int, float, float, int]:
        """Identify the measurement independently of the S-parameter"""
        return int(self.fault), self.carrier_hz, self.distance_m, self.trial


def _check_unique(records: Sequence[ManifestRecord]):
    seen = set()
    for record in records:
        if record.path in seen:
            raise ConfigurationError(f"duplicate path \"{record.path}\" in manifest")
        seen.add(record.path)


def format_manifest(records: Sequence[ManifestRecord]) -> str:
    """Serialize a manifest: one tab-separated line per record, sorted by path"""
    _check_unique(records)
    lines = []
    for record in sorted(records, key=lambda r: r.path):
        if "\t" in record.path or "\n" in record.path:
            raise ConfigurationError(f"invalid character in path \"{record.path}\"")
        lines.append("\t".join([
            record.path,
            str(int(record.fault)),
            record.modality.value,
            repr(float(record.carrier_hz)),
            repr(float(record.distance_m)),
            str(record.trial),
        ]))
    return "".join(line + "\n" for line in lines)


def parse_manifest(text: str) -> List[ManifestRecord]:
    """Parse a manifest; the offset of a :class:`.ParseError` is the line number (starting from 1)"""
    records = []
    seen = set()
    for line_num, line in enumerate(text.splitlines(), start=1):
        fields = line.split("\t")
        if len(fields) != 6:
            raise ParseError(f"expected 6 tab-separated fields, found {len(fields)}", offset=line_num)

        path, fault, modality, carrier, distance, trial = fields
        try:
            record = ManifestRecord(
                path=path,
                fault=FaultCondition(int(fault)),
                modality=Modality(modality),
                carrier_hz=float(carrier),
                distance_m=float(distance),
                trial=int(trial),
            )
        except ValueError as err:
            raise ParseError(f"invalid manifest record: {err}", offset=line_num)

        if path in seen:
            raise ParseError(f"duplicate path \"{path}\"", offset=line_num)
        seen.add(path)
        records.append(record)

    return records


def write_manifest(records: Sequence[ManifestRecord], path: Union[str, Path]):
    with atomic_write(path, mode="w") as outf:
        outf.write(format_manifest(records))


def read_manifest(path: Union[str, Path]) -> List[ManifestRecord]:
    with open(path, "rt", encoding="utf-8") as inpf:
        return parse_manifest(inpf.read())


def validate_manifest(records: Sequence[ManifestRecord], root: Union[str, Path]):
    """Check that every file listed in a manifest exists, parses, and agrees with its record"""
    root = Path(root)
    _check_unique(records)
    for record in records:
        file_path = root / record.path
        if record.path.endswith(TRACE_EXTENSION):
            trace = read_trace(file_path)
            if ManifestRecord.for_trace(record.path, trace) != record:
                raise ConfigurationError(f"the header of {file_path} does not match its manifest record")
        elif record.path.endswith(SPEC_EXTENSION):
            read_spectrogram(file_path)
        else:
            raise ConfigurationError(f"unknown file type for \"{record.path}\"")


K = TypeVar("K")
T = TypeVar("T")


def group_pairs(
        items: Sequence[T],
        key_of: Callable[[T], K],
        modality_of: Callable[[T], Modality],
        modality: Modality,
) -> List[Tuple[K, List[T]]]:
    """Collect the inputs of each measurement for a given modality, sorted by key

    For ``S11`` and ``S21`` each group holds one item; for ``BOTH`` it holds the S11 item
    followed by its S21 partner. Measurements lacking the selected S-parameter are
    skipped for ``S11``/``S21``, while an unpaired measurement is an error for ``BOTH``."""
    groups = defaultdict(dict)
    for item in items:
        kind = modality_of(item)
        key = key_of(item)
        if kind in groups[key]:
            raise ConfigurationError(f"measurement {key} has more than one {kind.value} input")
        groups[key][kind] = item

    wanted = [Modality.S11, Modality.S21] if modality == Modality.BOTH else [modality]
    result = []
    missing = []
    for key in sorted(groups):
        present = groups[key]
        if modality != Modality.BOTH and modality not in present:
            continue
        absent = [kind.value for kind in wanted if kind not in present]
        if absent:
            missing.append(f"{key} (missing {', '.join(absent)})")
            continue
        result.append((key, [present[kind] for kind in wanted]))

    if missing:
        raise ConfigurationError(f"{len(missing)} unpaired measurement(s): " + "; ".join(missing))

    return result


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.70
    seed: int = 0

    def validate(self):
        if not (0 < self.train_fraction < 1):
            raise ConfigurationError(f"the training fraction must be in (0, 1), got {self.train_fraction}")


def stratified_split(
        items: Sequence[T],
        spec: SplitSpec = SplitSpec(),
        label_of: Callable[[T], int] = lambda record: int(record.fault),
        n_classes: Optional[int] = None,
) -> Tuple[List[T], List[T]]:
    """Partition `items` into a training and a validation list, class by class

    In each class of n items, round(train_fraction · n) items (rounding half up, and
    keeping at least one item on both sides) go to the training list. Items are shuffled
    with a generator seeded by the split seed and the class, so the partition does not
    depend on the other classes. If `n_classes` is given, every label in
    ``0..n_classes - 1`` must be present and no other label is accepted."""
    spec.validate()
    groups = defaultdict(list)
    for item in items:
        groups[int(label_of(item))].append(item)

    if n_classes is not None:
        unknown = sorted(label for label in groups if not 0 <= label < n_classes)
        if unknown:
            raise ConfigurationError(f"labels {unknown} are outside 0..{n_classes - 1}")
        absent = [label for label in range(n_classes) if label not in groups]
        if absent:
            raise ConfigurationError(f"no item of class(es) {absent} to split")

    train, val = [], []
    for label in sorted(groups):
        group = groups[label]
        if len(group) < 2:
            raise ConfigurationError(f"class {label} has {len(group)} item(s), at least 2 are needed to split it")

        num_of_train = int(np.floor(spec.train_fraction * len(group) + 0.5))
        num_of_train = min(max(num_of_train, 1), len(group) - 1)
        order = make_rng(derive_seed(spec.seed, label)).permutation(len(group))
        train.extend(group[i] for i in order[:num_of_train])
        val.extend(group[i] for i in order[num_of_train:])

    log.debug("split %d items into %d for training and %d for validation", len(items), len(train), len(val))
    return train, val


SPLIT_ROLES = ("train", "val")


def format_split(train_paths: Sequence[str], val_paths: Sequence[str]) -> str:
    """Serialize a train/validation split: one "path<TAB>role" line per file, sorted by path"""
    overlap = sorted(set(train_paths) & set(val_paths))
    if overlap:
        raise ConfigurationError(f"{len(overlap)} path(s) are both in the training and the validation split, "
                                 f"e.g. \"{overlap[0]}\"")

    lines = sorted([(path, "train") for path in train_paths] + [(path, "val") for path in val_paths])
    for path, _ in lines:
        if "\t" in path or "\n" in path:
            raise ConfigurationError(f"invalid character in path \"{path}\"")
    return "".join(f"{path}\t{role}\n" for (path, role) in lines)


def parse_split(text: str) -> Tuple[List[str], List[str]]:
    """Parse a split file; the offset of a :class:`.ParseError` is the line number (starting from 1)"""
    roles = {role: [] for role in SPLIT_ROLES}
    seen = set()
    for line_num, line in enumerate(text.splitlines(), start=1):
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(f"expected 2 tab-separated fields, found {len(fields)}", offset=line_num)

        path, role = fields
        if role not in roles:
            raise ParseError(f"invalid role \"{role}\", expected one of {', '.join(SPLIT_ROLES)}", offset=line_num)
        if path in seen:
            raise ParseError(f"duplicate path \"{path}\"", offset=line_num)
        seen.add(path)
        roles[role].append(path)

    return roles["train"], roles["val"]


def write_split(train_paths: Sequence[str], val_paths: Sequence[str], path: Union[str, Path]):
    with atomic_write(path, mode="w") as outf:
        outf.write(format_split(train_paths, val_paths))


def read_split(path: Union[str, Path]) -> Tuple[List[str], List[str]]:
    with open(path, "rt", encoding="utf-8") as inpf:
        return parse_split(inpf.read())
