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

"""Synthetic S-parameter traces of a motor with bearing faults

The measurement rig (antennas near a bearing block, read through a network analyzer) is
replaced by two models: a vibration model producing a unit-peak waveform for each operating
condition, and a channel model turning the waveform into the magnitude (in dB) of S11 or S21.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import partial
from typing import List, Tuple

import numpy as np

from errors import ConfigurationError, DomainError
from pcg import derive_seed, make_rng

log = logging.getLogger(__name__)

SPEED_OF_LIGHT_M_S = 299_792_458.0

# Reference distance of the S21 path-loss law
S21_REFERENCE_DISTANCE_M = 0.05

# Streams drawn from the seed of a trace
_VIBRATION_STREAM = 0
_NOISE_STREAM = 1


class FaultCondition(IntEnum):
    """The four operating conditions of the motor

    The integer values are the codes used in files and as class labels."""
    NORMAL = 0
    IMBALANCE = 1
    INNER_RACE = 2
    OUTER_RACE = 3


class SParamKind(IntEnum):
    """Which S-parameter is measured: reflection (S11) or transmission (S21)"""
    S11 = 0
    S21 = 1


@dataclass(frozen=True)
class MotorConfig:
    """Kinematics of the shaft and of the ball bearing under test

    Defaults describe a 4-pole machine at 1480 RPM and a bearing with eight balls
    whose diameter is 1/5 of the pitch diameter."""
    shaft_speed_hz: float = 24.67
    n_elements: int = 8
    ball_diameter_m: float = 0.008
    pitch_diameter_m: float = 0.040
    contact_angle_rad: float = 0.0

    def validate(self):
        if not (math.isfinite(self.shaft_speed_hz) and self.shaft_speed_hz >= 0):
            raise ConfigurationError(f"invalid shaft speed {self.shaft_speed_hz} Hz")
        if self.n_elements < 1:
            raise ConfigurationError(f"a bearing needs at least one rolling element, got {self.n_elements}")
        if not (0 < self.ball_diameter_m < self.pitch_diameter_m):
            raise ConfigurationError(
                f"ball diameter ({self.ball_diameter_m} m) must be positive and smaller "
                f"than the pitch diameter ({self.pitch_diameter_m} m)"
            )
        if not (0 <= self.contact_angle_rad < math.pi / 2):
            raise ConfigurationError(f"contact angle {self.contact_angle_rad} rad is outside [0, π/2)")


@dataclass(frozen=True)
class AntennaConfig:
    """An omni-directional antenna: operating frequency and largest dimension"""
    carrier_hz: float = 2.4e9
    length_m: float = 0.106

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT_M_S / self.carrier_hz

    def validate(self):
        for name, value in (("carrier frequency", self.carrier_hz), ("antenna length", self.length_m)):
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"the {name} must be a finite positive number, got {value}")


# The reference antennas, ordered by frequency
REFERENCE_ANTENNAS = (
    AntennaConfig(carrier_hz=433e6, length_m=0.115),
    AntennaConfig(carrier_hz=2.4e9, length_m=0.106),
    AntennaConfig(carrier_hz=5.8e9, length_m=0.172),
)

# Quoted near-field radii of the reference antennas, rounded to the centimeter
QUOTED_RADII_M = {433e6: 0.02, 2.4e9: 0.06, 5.8e9: 0.19}


def antenna_for_carrier(carrier_hz: float) -> AntennaConfig:
    """Return the reference antenna operating at `carrier_hz`"""
    for antenna in REFERENCE_ANTENNAS:
        if math.isclose(antenna.carrier_hz, carrier_hz, rel_tol=1e-9):
            return antenna

    known = ", ".join(f"{a.carrier_hz:g}" for a in REFERENCE_ANTENNAS)
    raise ConfigurationError(f"no antenna operates at {carrier_hz:g} Hz (known carriers: {known})")


@dataclass(frozen=True)
class ChannelConfig:
    """How vibrations perturb the magnitude of a S-parameter

    Fields:
    -   `sparam_kind`: S11 or S21
    -   `distance_m`: offset of the antenna from the bearing block
    -   `baseline_db`: static level of the S-parameter
    -   `modulation_depth_db`: peak deviation caused by a unit-peak vibration at distance 0
    -   `noise_std_db`: standard deviation of the additive Gaussian noise
    -   `nearfield_rolloff_m`: width of the smooth cutoff at the edge of the reactive near field (S11 only)
    """
    sparam_kind: SParamKind = SParamKind.S11
    distance_m: float = 0.0
    baseline_db: float = -12.0
    modulation_depth_db: float = 1.0
    noise_std_db: float = 0.6
    nearfield_rolloff_m: float = 0.005

    def validate(self):
        if not self.distance_m >= 0:
            raise ConfigurationError(f"negative antenna distance {self.distance_m} m")
        if not self.modulation_depth_db >= 0:
            raise ConfigurationError(f"negative modulation depth {self.modulation_depth_db} dB")
        if not self.noise_std_db >= 0:
            raise ConfigurationError(f"negative noise level {self.noise_std_db} dB")
        if not self.nearfield_rolloff_m > 0:
            raise ConfigurationError(f"the near-field rolloff must be positive, got {self.nearfield_rolloff_m} m")


def default_channel(kind: SParamKind, distance_m: float = 0.0) -> ChannelConfig:
    """Return the default channel for a S-parameter

    S11 is noisier than S21, which makes classifiers based on S21 more accurate."""
    if kind == SParamKind.S11:
        return ChannelConfig(sparam_kind=kind, distance_m=distance_m, baseline_db=-12.0, noise_std_db=0.6)

    return ChannelConfig(sparam_kind=kind, distance_m=distance_m, baseline_db=-35.0, noise_std_db=0.3)


@dataclass(frozen=True)
class VibrationConfig:
    """Shape of the synthetic vibration signatures

    Each bearing defect excites a structural resonance at `resonance_hz` that dies out
    with rate `decay_per_s`. `background_noise` is the standard deviation of the broadband
    mechanical noise added to every waveform (relative to its unit peak); set it to zero
    to get noise-free signatures. `slip_fraction` is the random jitter of impulse arrival
    times, as a fraction of the impulse period."""
    resonance_hz: float = 180.0
    decay_per_s: float = 40.0
    background_noise: float = 0.05
    slip_fraction: float = 0.01
    normal_tone_level: float = 0.2
    inner_modulation: float = 0.4

    def validate(self):
        if not (self.resonance_hz > 0 and self.decay_per_s > 0):
            raise ConfigurationError("resonance frequency and decay rate must be positive")
        if self.background_noise < 0 or self.normal_tone_level < 0:
            raise ConfigurationError("noise and tone levels cannot be negative")
        if not (0 <= self.slip_fraction < 0.5):
            raise ConfigurationError(f"slip fraction {self.slip_fraction} is outside [0, 0.5)")
        if not (0 <= self.inner_modulation <= 0.5):
            raise ConfigurationError(f"inner-race modulation {self.inner_modulation} is outside [0, 0.5]")


@dataclass(frozen=True)
class TraceMetadata:
    """Provenance of a S-parameter trace"""
    fault: FaultCondition = FaultCondition.NORMAL
    sparam_kind: SParamKind = SParamKind.S11
    carrier_hz: float = 2.4e9
    distance_m: float = 0.0
    seed: int = 0
    trial_index: int = 0


@dataclass
class SParamTrace:
    """A uniformly-sampled time series of the magnitude (in dB) of a S-parameter"""
    samples: np.ndarray
    sample_rate_hz: float
    metadata: TraceMetadata = field(default_factory=TraceMetadata)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def validate(self):
        if len(self.samples) == 0:
            raise DomainError("a trace must contain at least one sample")
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("a trace contains non-finite samples")
        if not self.sample_rate_hz > 0:
            raise DomainError(f"invalid sampling rate {self.sample_rate_hz} Hz")


def reactive_near_field_radius(antenna: AntennaConfig) -> float:
    """Return the radius (in meters) of the reactive near-field region around an antenna

    The radius is 0.62·sqrt(L³/λ), where L is the largest dimension of the antenna and λ
    is the wavelength at the carrier frequency."""
    antenna.validate()
    return 0.62 * math.sqrt(antenna.length_m ** 3 / antenna.wavelength_m)


@dataclass(frozen=True)
class NearFieldEntry:
    antenna: AntennaConfig
    radius_m: float
    stated_radius_m: float

    @property
    def discrepancy_m(self) -> float:
        return self.radius_m - self.stated_radius_m


def nearfield_report() -> List[NearFieldEntry]:
    """Compute the near-field radius of the three reference antennas next to the quoted values

    The 433 MHz antenna is the odd one: the formula gives 2.9 cm, while 2 cm is quoted."""
    return [
        NearFieldEntry(
            antenna=antenna,
            radius_m=reactive_near_field_radius(antenna),
            stated_radius_m=QUOTED_RADII_M[antenna.carrier_hz],
        )
        for antenna in REFERENCE_ANTENNAS
    ]


@dataclass(frozen=True)
class FaultFrequencies:
    shaft_hz: float
    bpfo_hz: float
    bpfi_hz: float


def fault_frequencies(motor: MotorConfig) -> FaultFrequencies:
    """Compute the shaft frequency and the ball-pass frequencies of the outer and inner races"""
    motor.validate()
    ratio = motor.ball_diameter_m / motor.pitch_diameter_m * math.cos(motor.contact_angle_rad)
    half_n = motor.n_elements / 2
    return FaultFrequencies(
        shaft_hz=motor.shaft_speed_hz,
        bpfo_hz=half_n * motor.shaft_speed_hz * (1 - ratio),
        bpfi_hz=half_n * motor.shaft_speed_hz * (1 + ratio),
    )


def check_nyquist(motor: MotorConfig, vibration: VibrationConfig, sample_rate_hz: float):
    """Raise a :class:`.ConfigurationError` if some vibration component cannot be sampled"""
    freqs = fault_frequencies(motor)
    for name, freq in (("BPFI", freqs.bpfi_hz), ("resonance", vibration.resonance_hz)):
        if sample_rate_hz <= 2 * freq:
            raise ConfigurationError(
                f"the sampling rate ({sample_rate_hz:g} Hz) must exceed twice the {name} "
                f"frequency ({freq:g} Hz)"
            )


def _impulse_train(
        num_of_samples: int,
        sample_rate_hz: float,
        rate_hz: float,
        amplitude_fn,
        vibration: VibrationConfig,
        rng: np.random.Generator,
) -> np.ndarray:
    """Sum of damped resonances excited at `rate_hz`, the k-th one scaled by `amplitude_fn(t_k)`"""
    result = np.zeros(num_of_samples)
    if rate_hz <= 0:
        return result

    period = 1.0 / rate_hz
    duration = num_of_samples / sample_rate_hz
    num_of_impulses = int(math.ceil(duration * rate_hz)) + 1

    start = rng.uniform(0.0, period)
    jitter = rng.uniform(-vibration.slip_fraction, vibration.slip_fraction, size=num_of_impulses) * period
    times = start + np.arange(num_of_impulses) * period + jitter
    times = times[(times >= 0.0) & (times < duration)]

    # Beyond this length the response is below 1e-6 of its peak
    support = int(math.ceil(math.log(1e6) / vibration.decay_per_s * sample_rate_hz)) + 1
    omega = 2 * math.pi * vibration.resonance_hz
    for t_k in times:
        first = int(math.ceil(t_k * sample_rate_hz))
        last = min(first + support, num_of_samples)
        if first >= last:
            continue

        tau = np.arange(first, last) / sample_rate_hz - t_k
        result[first:last] += amplitude_fn(t_k) * np.exp(-vibration.decay_per_s * tau) * np.sin(omega * tau)

    return result


def _normalize_peak(signal: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(signal)) if len(signal) > 0 else 0.0
    return signal / peak if peak > 0 else signal


def vibration_waveform(
        fault: FaultCondition,
        motor: MotorConfig,
        duration_s: float,
        sample_rate_hz: float,
        seed: int,
        vibration: VibrationConfig = VibrationConfig(),
) -> np.ndarray:
    """Synthesize the vibration produced by the motor in a given operating condition

    The waveform is normalized so that its peak magnitude is 1:

    -   ``NORMAL``: broadband noise plus a weak tone at the shaft frequency;
    -   ``IMBALANCE``: a sinusoid at the shaft frequency;
    -   ``OUTER_RACE``: constant-amplitude impulses at BPFO, each one exciting a damped resonance;
    -   ``INNER_RACE``: impulses at BPFI whose amplitude is modulated at the shaft frequency.

    The result only depends on the arguments: the same `seed` always gives the same samples."""
    if not (duration_s > 0 and sample_rate_hz > 0):
        raise DomainError(f"invalid duration ({duration_s} s) or sampling rate ({sample_rate_hz} Hz)")

    vibration.validate()
    check_nyquist(motor, vibration, sample_rate_hz)

    num_of_samples = int(round(duration_s * sample_rate_hz))
    if num_of_samples < 1:
        raise DomainError(f"a {duration_s} s waveform sampled at {sample_rate_hz} Hz has no samples")

    freqs = fault_frequencies(motor)
    rng = make_rng(derive_seed(seed, _VIBRATION_STREAM))
    t = np.arange(num_of_samples) / sample_rate_hz
    shaft_omega = 2 * math.pi * freqs.shaft_hz
    phase = rng.uniform(0.0, 2 * math.pi)

    if fault == FaultCondition.NORMAL:
        signal = (vibration.normal_tone_level * np.sin(shaft_omega * t + phase) +
                  rng.standard_normal(num_of_samples))
    elif fault == FaultCondition.IMBALANCE:
        signal = np.sin(shaft_omega * t + phase)
    elif fault == FaultCondition.OUTER_RACE:
        signal = _impulse_train(num_of_samples, sample_rate_hz, freqs.bpfo_hz,
                                lambda t_k: 1.0, vibration, rng)
    elif fault == FaultCondition.INNER_RACE:
        m = vibration.inner_modulation
        signal = _impulse_train(num_of_samples, sample_rate_hz, freqs.bpfi_hz,
                                lambda t_k: (1 - m) + m * math.cos(shaft_omega * t_k + phase),
                                vibration, rng)
    else:
        assert False, f"unknown fault condition {fault}"

    signal = _normalize_peak(signal)
    if vibration.background_noise > 0:
        signal = _normalize_peak(signal + vibration.background_noise * rng.standard_normal(num_of_samples))

    return signal


def coupling_depth(antenna: AntennaConfig, channel: ChannelConfig) -> float:
    """Return the fraction of the modulation depth that reaches the antenna at `channel.distance_m`

    For S11 this is a smooth cutoff at the edge of the reactive near field; for S21 it is a
    free-space-like decay 1/(1 + d/d₀)² with d₀ = 5 cm."""
    channel.validate()
    d = channel.distance_m
    if channel.sparam_kind == SParamKind.S21:
        return 1.0 / (1.0 + d / S21_REFERENCE_DISTANCE_M) ** 2

    x = (d - reactive_near_field_radius(antenna)) / channel.nearfield_rolloff_m
    # Logistic function, written so that exp() never overflows
    if x >= 0:
        e = math.exp(-x)
        return e / (1.0 + e)

    return 1.0 / (1.0 + math.exp(x))


def modulate_sparam(
        vib: np.ndarray,
        antenna: AntennaConfig,
        channel: ChannelConfig,
        seed: int,
        sample_rate_hz: float,
        fault: FaultCondition = FaultCondition.NORMAL,
        trial_index: int = 0,
) -> SParamTrace:
    """Turn a vibration waveform into the trace of a S-parameter seen by `antenna`

    The trace is baseline + depth(d)·modulation_depth·vib + Gaussian noise; see
    :func:`.coupling_depth` for depth(d)."""
    vib = np.asarray(vib, dtype=np.float64)
    if len(vib) == 0:
        raise DomainError("cannot modulate an empty vibration waveform")

    depth = coupling_depth(antenna, channel)
    samples = channel.baseline_db + depth * channel.modulation_depth_db * vib
    if channel.noise_std_db > 0:
        rng = make_rng(derive_seed(seed, _NOISE_STREAM))
        samples = samples + rng.normal(0.0, channel.noise_std_db, size=len(vib))

    trace = SParamTrace(
        samples=samples,
        sample_rate_hz=sample_rate_hz,
        metadata=TraceMetadata(
            fault=FaultCondition(fault),
            sparam_kind=channel.sparam_kind,
            carrier_hz=antenna.carrier_hz,
            distance_m=channel.distance_m,
            seed=seed,
            trial_index=trial_index,
        ),
    )
    trace.validate()
    return trace


def truncate(trace: SParamTrace, duration_s: float, offset_s: float = 0.0) -> SParamTrace:
    """Return the part of `trace` that starts at `offset_s` and lasts `duration_s`"""
    first = int(round(offset_s * trace.sample_rate_hz))
    count = int(round(duration_s * trace.sample_rate_hz))
    if first < 0 or count < 1 or first + count > len(trace.samples):
        raise DomainError(
            f"cannot extract {duration_s} s starting from {offset_s} s out of a {trace.duration_s} s trace"
        )

    return SParamTrace(
        samples=trace.samples[first:first + count].copy(),
        sample_rate_hz=trace.sample_rate_hz,
        metadata=trace.metadata,
    )


def normalized_cross_correlation_peak(a: np.ndarray, b: np.ndarray) -> float:
    """Return the largest magnitude of the normalized cross-correlation of two signals over all lags

    Both signals are made zero-mean first. The result lies in [0, 1]."""
    a = np.asarray(a, dtype=np.float64) - np.mean(a)
    b = np.asarray(b, dtype=np.float64) - np.mean(b)
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0:
        return 0.0

    return float(np.max(np.abs(np.correlate(a, b, mode="full"))) / norm)


@dataclass(frozen=True)
class TraceCell:
    """One cell of a dataset plan: the parameters of a single trace"""
    fault: FaultCondition
    sparam_kind: SParamKind
    antenna: AntennaConfig
    distance_m: float
    trial_index: int
    seed: int


@dataclass
class DatasetPlan:
    """The Cartesian product of conditions, antennas, distances, trials and S-parameters to simulate

    The default plan reproduces the size of the reference dataset: 4 conditions × 3 antennas ×
    3 distances × 40 trials × 2 S-parameters = 2880 traces, 5 s each."""
    conditions: Tuple[FaultCondition, ...] = tuple(FaultCondition)
    antennas: Tuple[AntennaConfig, ...] = REFERENCE_ANTENNAS
    distances_m: Tuple[float, ...] = (0.0, 0.05, 0.10)
    trials: int = 40
    sparam_kinds: Tuple[SParamKind, ...] = (SParamKind.S11, SParamKind.S21)
    duration_s: float = 5.0
    sample_rate_hz: float = 1000.0
    base_seed: int = 0
    motor: MotorConfig = MotorConfig()
    vibration: VibrationConfig = VibrationConfig()
    s11_channel: ChannelConfig = default_channel(SParamKind.S11)
    s21_channel: ChannelConfig = default_channel(SParamKind.S21)

    @staticmethod
    def reference_default() -> "DatasetPlan":
        return DatasetPlan()

    def channel_for(self, kind: SParamKind, distance_m: float) -> ChannelConfig:
        template = self.s11_channel if kind == SParamKind.S11 else self.s21_channel
        return replace(template, sparam_kind=kind, distance_m=distance_m)

    def shape(self) -> Tuple[int, int, int, int, int]:
        """Return the sizes of the five dimensions (conditions, carriers, distances, trials, kinds)"""
        return (len(self.conditions), len(self.antennas), len(self.distances_m),
                self.trials, len(self.sparam_kinds))

    def num_of_traces(self) -> int:
        return int(np.prod(self.shape()))

    def validate(self):
        for name, size in zip(("conditions", "carriers", "distances", "trials", "S-parameter kinds"),
                              self.shape()):
            if size < 1:
                raise ConfigurationError(f"the dataset plan has no {name}")

        if not (self.duration_s > 0 and self.sample_rate_hz > 0):
            raise ConfigurationError("duration and sampling rate must be positive")

        self.motor.validate()
        self.vibration.validate()
        check_nyquist(self.motor, self.vibration, self.sample_rate_hz)
        for antenna in self.antennas:
            try:
                antenna.validate()
            except DomainError as err:
                raise ConfigurationError(err.message)

        for kind in self.sparam_kinds:
            for distance in self.distances_m:
                self.channel_for(kind, distance).validate()

    def cells(self) -> List[TraceCell]:
        """Enumerate the traces of the plan in a canonical order"""
        result = []
        for kind in self.sparam_kinds:
            for antenna in self.antennas:
                for distance in self.distances_m:
                    for fault in self.conditions:
                        for trial in range(self.trials):
                            seed = derive_seed(
                                self.base_seed,
                                int(fault),
                                int(round(antenna.carrier_hz)),
                                int(round(distance * 1e6)),
                                trial,
                                int(kind),
                            )
                            result.append(TraceCell(
                                fault=fault,
                                sparam_kind=kind,
                                antenna=antenna,
                                distance_m=distance,
                                trial_index=trial,
                                seed=seed,
                            ))
        return result


def synthesize_trace(plan: DatasetPlan, cell: TraceCell) -> SParamTrace:
    """Simulate the trace described by one cell of a plan"""
    vib = vibration_waveform(
        fault=cell.fault,
        motor=plan.motor,
        duration_s=plan.duration_s,
        sample_rate_hz=plan.sample_rate_hz,
        seed=cell.seed,
        vibration=plan.vibration,
    )
    return modulate_sparam(
        vib=vib,
        antenna=cell.antenna,
        channel=plan.channel_for(cell.sparam_kind, cell.distance_m),
        seed=cell.seed,
        sample_rate_hz=plan.sample_rate_hz,
        fault=cell.fault,
        trial_index=cell.trial_index,
    )


def generate_dataset(plan: DatasetPlan, workers: int = 1) -> List[SParamTrace]:
    """Simulate every trace of a plan

    The traces are returned in the order of :meth:`.DatasetPlan.cells`. Using more than one worker
    distributes the cells over a pool of processes; since each trace only depends on its own seed,
    the result does not change."""
    plan.validate()
    cells = plan.cells()
    log.info("simulating %d traces with %d worker(s)", len(cells), workers)

    generate = partial(synthesize_trace, plan)
    if workers <= 1:
        return [generate(cell) for cell in cells]

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(generate, cells, chunksize=max(1, len(cells) // (4 * workers))))
