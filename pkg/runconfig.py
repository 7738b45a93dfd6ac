# -*- encoding: utf-8 -*-

"""Run configurations: every tunable parameter of the pipeline, in a plain-text file

A configuration file contains one ``section.key=value`` assignment per line, e.g.::

    # Shorter traces, sampled faster
    sigmodel.duration_s=3.0
    sigmodel.sample_rate_hz=2000
    evalharness.modalities=S11,both

Blank lines are ignored and ``#`` starts a comment. Lists are comma-separated.
Keys that are not listed are set to their default value.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

from datastore import Modality, SplitSpec
from dcnn import NetworkConfig, TrainConfig
from errors import ConfigFileError, ConfigurationError, SourceLocation
from evalharness import PipelineConfig
from pcg import derive_seed
from sigmodel import (
    ChannelConfig,
    DatasetPlan,
    FaultCondition,
    MotorConfig,
    SParamKind,
    VibrationConfig,
    antenna_for_carrier,
)
from spectro import StftConfig, WindowKind

# Streams drawn from the root seed
SEED_STREAM_DATASET = 1
SEED_STREAM_SPLIT = 2
SEED_STREAM_TRAIN = 3
SEED_STREAM_SWEEP = 4


@dataclass
class RunSection:
    seed: int = 42
    threads: int = 1


@dataclass
class SigmodelSection:
    conditions: Tuple[str, ...] = ("normal", "imbalance", "inner_race", "outer_race")
    carriers_hz: Tuple[float, ...] = (433e6, 2.4e9, 5.8e9)
    distances_m: Tuple[float, ...] = (0.0, 0.05, 0.10)
    trials: int = 40
    sparam_kinds: Tuple[str, ...] = ("S11", "S21")
    duration_s: float = 5.0
    sample_rate_hz: float = 1000.0
    shaft_speed_hz: float = 24.67
    n_elements: int = 8
    ball_diameter_m: float = 0.008
    pitch_diameter_m: float = 0.040
    contact_angle_rad: float = 0.0
    resonance_hz: float = 180.0
    decay_per_s: float = 40.0
    background_noise: float = 0.05
    slip_fraction: float = 0.01
    normal_tone_level: float = 0.2
    inner_modulation: float = 0.4
    modulation_depth_db: float = 1.0
    nearfield_rolloff_m: float = 0.005
    s11_baseline_db: float = -12.0
    s11_noise_std_db: float = 0.6
    s21_baseline_db: float = -35.0
    s21_noise_std_db: float = 0.3

    def to_plan(self, base_seed: int) -> DatasetPlan:
        try:
            conditions = tuple(FaultCondition[name.upper()] for name in self.conditions)
        except KeyError as err:
            raise ConfigurationError(f"unknown fault condition {err}")
        try:
            kinds = tuple(SParamKind[name.upper()] for name in self.sparam_kinds)
        except KeyError as err:
            raise ConfigurationError(f"unknown S-parameter {err}")

        channel = dict(modulation_depth_db=self.modulation_depth_db, nearfield_rolloff_m=self.nearfield_rolloff_m)
        return DatasetPlan(
            conditions=conditions,
            antennas=tuple(antenna_for_carrier(c) for c in self.carriers_hz),
            distances_m=tuple(self.distances_m),
            trials=self.trials,
            sparam_kinds=kinds,
            duration_s=self.duration_s,
            sample_rate_hz=self.sample_rate_hz,
            base_seed=base_seed,
            motor=MotorConfig(
                shaft_speed_hz=self.shaft_speed_hz,
                n_elements=self.n_elements,
                ball_diameter_m=self.ball_diameter_m,
                pitch_diameter_m=self.pitch_diameter_m,
                contact_angle_rad=self.contact_angle_rad,
            ),
            vibration=VibrationConfig(
                resonance_hz=self.resonance_hz,
                decay_per_s=self.decay_per_s,
                background_noise=self.background_noise,
                slip_fraction=self.slip_fraction,
                normal_tone_level=self.normal_tone_level,
                inner_modulation=self.inner_modulation,
            ),
            s11_channel=ChannelConfig(sparam_kind=SParamKind.S11, baseline_db=self.s11_baseline_db,
                                      noise_std_db=self.s11_noise_std_db, **channel),
            s21_channel=ChannelConfig(sparam_kind=SParamKind.S21, baseline_db=self.s21_baseline_db,
                                      noise_std_db=self.s21_noise_std_db, **channel),
        )


@dataclass
class SpectroSection:
    window_len: int = 256
    # 0 means "pick the hop automatically"
    hop: int = 0
    window: str = "hann"
    db_floor: float = -80.0
    detrend: bool = True
    image_h: int = 80
    image_w: int = 80

    def to_stft(self) -> StftConfig:
        try:
            window = WindowKind[self.window.upper()]
        except KeyError:
            raise ConfigurationError(f"unknown window \"{self.window}\", use hann or rectangular")

        return StftConfig(
            window_len=self.window_len,
            hop=self.hop if self.hop > 0 else None,
            window=window,
            db_floor=self.db_floor,
            detrend=self.detrend,
        )


@dataclass
class DcnnSection:
    conv_channels: Tuple[int, ...] = (96, 96, 256, 256)
    kernel: int = 3
    channel_scale: float = 0.125
    dtype: str = "float64"

    def to_network(self, input_h: int = 80, input_w: int = 80) -> NetworkConfig:
        return NetworkConfig(
            input_h=input_h,
            input_w=input_w,
            conv_channels=tuple(self.conv_channels),
            kernel=self.kernel,
            channel_scale=self.channel_scale,
            dtype=self.dtype,
        )


@dataclass
class TrainSection:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    shuffle: bool = True

    def to_train(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=seed,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            shuffle=self.shuffle,
        )


@dataclass
class DatastoreSection:
    train_fraction: float = 0.70
    cache_dtype: str = "float64"


@dataclass
class EvalharnessSection:
    durations_s: Tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)
    distances_m: Tuple[float, ...] = (0.0, 0.05, 0.10)
    carriers_hz: Tuple[float, ...] = (433e6, 2.4e9, 5.8e9)
    modalities: Tuple[str, ...] = ("S11", "S21", "both")
    num_of_seeds: int = 3
    carrier_hz: float = 2.4e9
    distance_m: float = 0.0
    trials: int = 40
    truncate_offset_s: float = 0.0

    def parsed_modalities(self) -> List[Modality]:
        return [Modality.parse(m) for m in self.modalities]


_SECTIONS = {
    "run": RunSection,
    "sigmodel": SigmodelSection,
    "spectro": SpectroSection,
    "dcnn": DcnnSection,
    "train": TrainSection,
    "datastore": DatastoreSection,
    "evalharness": EvalharnessSection,
}


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format_value(x) for x in value)
    return str(value)


def _convert_scalar(text: str, template: Any) -> Any:
    text = text.strip()
    if isinstance(template, bool):
        lowered = text.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ValueError(f"\"{text}\" is not a boolean (use true or false)")
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    if not text:
        raise ValueError("empty value")
    return text


def convert_value(text: str, template: Any) -> Any:
    """Convert `text` into a value with the same type as `template`"""
    if isinstance(template, tuple):
        if not text.strip():
            raise ValueError("empty list")
        return tuple(_convert_scalar(x, template[0]) for x in text.split(","))
    return _convert_scalar(text, template)


@dataclass
class RunConfig:
    """The complete configuration of a run, one dataclass per section"""
    run: RunSection = field(default_factory=RunSection)
    sigmodel: SigmodelSection = field(default_factory=SigmodelSection)
    spectro: SpectroSection = field(default_factory=SpectroSection)
    dcnn: DcnnSection = field(default_factory=DcnnSection)
    train: TrainSection = field(default_factory=TrainSection)
    datastore: DatastoreSection = field(default_factory=DatastoreSection)
    evalharness: EvalharnessSection = field(default_factory=EvalharnessSection)

    def items(self) -> Dict[str, Any]:
        """Return all the settings as a dictionary whose keys are ``section.field``"""
        result = {}
        for section_name in _SECTIONS:
            section = getattr(self, section_name)
            for f in fields(section):
                result[f"{section_name}.{f.name}"] = getattr(section, f.name)
        return result

    def set(self, key: str, value: Any):
        """Assign a value to ``section.field``; used for command-line overrides"""
        section_name, _, field_name = key.partition(".")
        section = getattr(self, section_name, None) if section_name in _SECTIONS else None
        if section is None or field_name not in {f.name for f in fields(section)}:
            raise ConfigurationError(f"unknown configuration key \"{key}\"")
        setattr(section, field_name, value)

    def to_text(self) -> str:
        return "".join(f"{key}={_format_value(value)}\n" for (key, value) in sorted(self.items().items()))

    # Seeds of the randomized components

    def dataset_seed(self) -> int:
        return derive_seed(self.run.seed, SEED_STREAM_DATASET)

    def split_seed(self) -> int:
        return derive_seed(self.run.seed, SEED_STREAM_SPLIT)

    def train_seed(self) -> int:
        return derive_seed(self.run.seed, SEED_STREAM_TRAIN)

    def sweep_seeds(self) -> Tuple[int, ...]:
        return tuple(derive_seed(self.run.seed, SEED_STREAM_SWEEP, i) for i in range(self.evalharness.num_of_seeds))

    # Configurations of the modules

    def plan(self) -> DatasetPlan:
        return self.sigmodel.to_plan(self.dataset_seed())

    def stft(self) -> StftConfig:
        return self.spectro.to_stft()

    def network(self, modality: Modality) -> NetworkConfig:
        height = self.spectro.image_h * (2 if modality == Modality.BOTH else 1)
        return self.dcnn.to_network(height, self.spectro.image_w)

    def train_config(self) -> TrainConfig:
        return self.train.to_train(self.train_seed())

    def split_spec(self) -> SplitSpec:
        return SplitSpec(train_fraction=self.datastore.train_fraction, seed=self.split_seed())

    def pipeline(self) -> PipelineConfig:
        """Configuration of the cells of a sweep (antennas and distances are set per cell)"""
        plan = replace(self.plan(), antennas=(antenna_for_carrier(self.evalharness.carrier_hz),),
                       distances_m=(self.evalharness.distance_m,), trials=self.evalharness.trials)
        return PipelineConfig(
            plan=plan,
            stft=self.stft(),
            image_h=self.spectro.image_h,
            image_w=self.spectro.image_w,
            network=self.dcnn.to_network(self.spectro.image_h, self.spectro.image_w),
            train=self.train_config(),
            split=self.split_spec(),
            truncate_offset_s=self.evalharness.truncate_offset_s,
        )

    def validate(self):
        """Build every module configuration and check it, raising :class:`.ConfigurationError`"""
        if self.run.threads < 1:
            raise ConfigurationError(f"the number of threads must be at least 1, got {self.run.threads}")
        if self.evalharness.num_of_seeds < 1:
            raise ConfigurationError("at least one seed is needed for sweeps")
        if self.datastore.cache_dtype not in ("float64", "float32"):
            raise ConfigurationError(f"unsupported cache dtype \"{self.datastore.cache_dtype}\"")

        self.plan().validate()
        self.stft().validate()
        self.network(Modality.S11).validate()
        self.train_config().validate()
        self.split_spec().validate()
        self.evalharness.parsed_modalities()


def parse_run_config(text: str, file_name: str = "") -> RunConfig:
    """Parse the content of a configuration file

    Errors are reported as :class:`.ConfigFileError` exceptions pointing to the offending
    line and column."""
    config = RunConfig()
    seen = {}
    for line_num, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].rstrip()
        stripped = line.lstrip()
        if not stripped:
            continue

        key_col = len(line) - len(stripped) + 1
        if "=" not in stripped:
            raise ConfigFileError(SourceLocation(file_name, line_num, key_col),
                                  "expected an assignment like \"section.key=value\"")

        key, value = stripped.split("=", 1)
        key = key.strip()
        value_col = key_col + stripped.index("=") + 1
        location = SourceLocation(file_name, line_num, key_col)

        section_name, dot, field_name = key.partition(".")
        if not dot or section_name not in _SECTIONS:
            raise ConfigFileError(location, f"unknown section in key \"{key}\" "
                                            f"(valid sections: {', '.join(_SECTIONS)})")

        section = getattr(config, section_name)
        names = {f.name for f in fields(section)}
        if field_name not in names:
            raise ConfigFileError(location, f"unknown key \"{key}\"")
        if key in seen:
            raise ConfigFileError(location, f"key \"{key}\" was already set at line {seen[key]}")
        seen[key] = line_num

        try:
            setattr(section, field_name, convert_value(value, getattr(section, field_name)))
        except ValueError as err:
            raise ConfigFileError(SourceLocation(file_name, line_num, value_col),
                                  f"invalid value for \"{key}\": {err}")

    return config


def read_run_config(path: Union[str, Path]) -> RunConfig:
    with open(path, "rt", encoding="utf-8") as inpf:
        return parse_run_config(inpf.read(), file_name=str(path))
