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

"""The convolutional classifier

The network is a stack of blocks (3×3 convolution → ReLU → 2×2 max pooling) followed
by a fully connected layer and a softmax. With the default configuration there are
four blocks with 96, 96, 256, and 256 filters, scaled by `channel_scale`.
"""

import logging
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Tuple, Union

import numpy as np

from errors import ConfigurationError, DomainError, NumericError, ParseError
from layers import (
    assert_finite,
    conv2d_backward,
    conv2d_forward,
    dense_softmax_xent,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
    softmax,
)
from pcg import derive_seed, make_rng
from spectro import Spectrogram

log = logging.getLogger(__name__)

MODEL_MAGIC = b"FWNN"
MODEL_VERSION = 1

# Codes used in model files
_DTYPE_CODES = {"float64": 0, "float32": 1}
_DTYPE_FROM_CODE = {code: name for (name, code) in _DTYPE_CODES.items()}
_BLOB_FORMATS = {"float64": "<f8", "float32": "<f4"}

# input_h, input_w, in_channels, kernel, pool, n_classes, channel_scale, number of blocks
_CONFIG_STRUCT = struct.Struct("<IIIIIIdI")

# Streams drawn from the seed of a training run
_INIT_STREAM = 0
_SHUFFLE_STREAM = 1


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture of the classifier

    The number of filters in block k is ``conv_channels[k] · channel_scale``, rounded
    to the nearest integer (at least 1). The default scale 1/8 gives 12, 12, 32, 32
    filters; use 1 for the full-size network."""
    input_h: int = 80
    input_w: int = 80
    in_channels: int = 1
    conv_channels: Tuple[int, ...] = (96, 96, 256, 256)
    kernel: int = 3
    pool: int = 2
    n_classes: int = 4
    channel_scale: float = 0.125
    dtype: str = "float64"

    def scaled_channels(self) -> Tuple[int, ...]:
        return tuple(max(1, int(np.floor(c * self.channel_scale + 0.5))) for c in self.conv_channels)

    def validate(self):
        if len(self.conv_channels) < 1:
            raise ConfigurationError("the network needs at least one convolutional block")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigurationError(f"the kernel size must be odd, got {self.kernel}")
        if self.pool != 2:
            raise ConfigurationError(f"only 2×2 pooling is supported, got {self.pool}")
        if self.n_classes < 2:
            raise ConfigurationError(f"at least two classes are needed, got {self.n_classes}")
        if not self.channel_scale > 0:
            raise ConfigurationError(f"the channel scale must be positive, got {self.channel_scale}")
        if self.in_channels < 1 or any(c < 1 for c in self.conv_channels):
            raise ConfigurationError("channel counts must be positive")
        if self.dtype not in _DTYPE_CODES:
            raise ConfigurationError(f"unsupported dtype \"{self.dtype}\", use one of {list(_DTYPE_CODES)}")

        factor = self.pool ** len(self.conv_channels)
        for name, size in (("height", self.input_h), ("width", self.input_w)):
            if size < factor or size % factor != 0:
                raise ConfigurationError(
                    f"the input {name} ({size}) must be a multiple of {factor} "
                    f"for {len(self.conv_channels)} pooling stages"
                )


def shape_trace(config: NetworkConfig) -> List[Tuple[int, int, int]]:
    """Return the shape (channels, height, width) of the output of each block"""
    config.validate()
    result = []
    h, w = config.input_h, config.input_w
    for channels in config.scaled_channels():
        h, w = h // config.pool, w // config.pool
        result.append((channels, h, w))
    return result


def flatten_length(config: NetworkConfig) -> int:
    channels, h, w = shape_trace(config)[-1]
    return channels * h * w


class Network:
    """The parameters of a classifier, together with its :class:`.NetworkConfig`

    Parameters are kept in `params`, an ordered dictionary whose keys are
    ``conv0_w, conv0_b, conv1_w, …, fc_w, fc_b``. The order is the one used in model files."""

    def __init__(self, config: NetworkConfig, params: Dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @staticmethod
    def param_shapes(config: NetworkConfig) -> Dict[str, Tuple[int, ...]]:
        config.validate()
        shapes = {}
        in_channels = config.in_channels
        for idx, out_channels in enumerate(config.scaled_channels()):
            shapes[f"conv{idx}_w"] = (out_channels, in_channels, config.kernel, config.kernel)
            shapes[f"conv{idx}_b"] = (out_channels,)
            in_channels = out_channels

        shapes["fc_w"] = (flatten_length(config), config.n_classes)
        shapes["fc_b"] = (config.n_classes,)
        return shapes

    @staticmethod
    def initialize(config: NetworkConfig, seed: int) -> "Network":
        """Create a network with He-normal weights and zero biases"""
        rng = make_rng(derive_seed(seed, _INIT_STREAM))
        params = {}
        for name, shape in Network.param_shapes(config).items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape, dtype=config.dtype)
            else:
                fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
                params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(config.dtype)

        return Network(config, params)

    @property
    def num_of_blocks(self) -> int:
        return len(self.config.conv_channels)

    def copy(self) -> "Network":
        return Network(self.config, {name: value.copy() for (name, value) in self.params.items()})

    def num_of_parameters(self) -> int:
        return sum(value.size for value in self.params.values())


def _check_input(net: Network, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch)
    expected = (net.config.in_channels, net.config.input_h, net.config.input_w)
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise DomainError(f"the network expects inputs with shape (N, {', '.join(map(str, expected))}), "
                          f"got {batch.shape}")
    return batch.astype(net.config.dtype, copy=False)


def _forward_blocks(net: Network, batch: np.ndarray):
    x = _check_input(net, batch)
    caches = []
    for idx in range(net.num_of_blocks):
        x, conv_cache = conv2d_forward(x, net.params[f"conv{idx}_w"], net.params[f"conv{idx}_b"])
        x, relu_cache = relu_forward(x)
        x, pool_cache = maxpool2x2_forward(x)
        assert_finite(f"the activations of block {idx}", x)
        caches.append((conv_cache, relu_cache, pool_cache))

    return x, caches


def features(net: Network, batch: np.ndarray) -> np.ndarray:
    """Return the feature map (N, C, h, w) that enters the fully connected layer"""
    return _forward_blocks(net, batch)[0]


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    """Compute the logits (N, n_classes) of a batch with shape (N, channels, height, width)"""
    feature_map = features(net, batch)
    flat = feature_map.reshape(feature_map.shape[0], -1)
    return flat @ net.params["fc_w"] + net.params["fc_b"]


def loss_and_gradients(net: Network, batch: np.ndarray, labels: np.ndarray):
    """Run a forward and a backward pass

    Return a tuple ``(result, grads)``, where `result` is the :class:`.DenseResult` of the last
    layer (logits, probabilities, loss) and `grads` maps each parameter name to its gradient."""
    feature_map, caches = _forward_blocks(net, batch)
    result = dense_softmax_xent(
        feature_map.reshape(feature_map.shape[0], -1),
        net.params["fc_w"],
        net.params["fc_b"],
        labels,
    )
    if not np.isfinite(result.loss):
        raise NumericError(f"the loss is not finite ({result.loss})")

    grads = {"fc_w": result.dweights, "fc_b": result.dbiases}
    dx = result.dfeatures.reshape(feature_map.shape)
    for idx in reversed(range(net.num_of_blocks)):
        conv_cache, relu_cache, pool_cache = caches[idx]
        dx = maxpool2x2_backward(dx, pool_cache)
        dx = relu_backward(dx, relu_cache)
        dx, grads[f"conv{idx}_w"], grads[f"conv{idx}_b"] = conv2d_backward(dx, conv_cache)

    for name, grad in grads.items():
        assert_finite(f"the gradient of {name}", grad)

    return result, grads


def _as_image(spectrogram: Union[Spectrogram, np.ndarray]) -> np.ndarray:
    values = spectrogram.values if isinstance(spectrogram, Spectrogram) else np.asarray(spectrogram)
    if values.ndim == 2:
        values = values[np.newaxis]
    return values


def predict(net: Network, spectrogram: Union[Spectrogram, np.ndarray]) -> Tuple[int, np.ndarray]:
    """Classify a single spectrogram

    Return the index of the most probable class (the lowest one in case of ties) and
    the vector of probabilities."""
    logits = forward(net, _as_image(spectrogram)[np.newaxis])
    probabilities = softmax(logits.astype(np.float64))[0]
    return int(np.argmax(probabilities)), probabilities


@dataclass
class LabeledSet:
    """A set of images with shape (N, channels, height, width) and their integer labels"""
    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    @staticmethod
    def from_spectrograms(spectrograms: List[Spectrogram], labels) -> "LabeledSet":
        if len(spectrograms) != len(labels):
            raise DomainError(f"{len(spectrograms)} spectrograms but {len(labels)} labels")
        if not spectrograms:
            return LabeledSet(images=np.zeros((0, 1, 0, 0)), labels=np.zeros(0, dtype=np.int64))

        return LabeledSet(
            images=np.stack([_as_image(s) for s in spectrograms]),
            labels=np.asarray(labels, dtype=np.int64),
        )

    def subset(self, indices) -> "LabeledSet":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledSet(images=self.images[indices], labels=self.labels[indices])


@dataclass
class Evaluation:
    loss: float
    accuracy: float
    predictions: np.ndarray


def evaluate(net: Network, dataset: LabeledSet, batch_size: int = 64) -> Evaluation:
    """Compute the mean loss, the accuracy and the predicted labels over a labelled set"""
    if len(dataset) == 0:
        raise ConfigurationError("cannot evaluate a network on an empty set")

    total_loss = 0.0
    predictions = []
    for first in range(0, len(dataset), batch_size):
        images = dataset.images[first:first + batch_size]
        labels = dataset.labels[first:first + batch_size]
        feature_map = features(net, images)
        result = dense_softmax_xent(
            feature_map.reshape(feature_map.shape[0], -1), net.params["fc_w"], net.params["fc_b"], labels,
        )
        total_loss += result.loss * len(labels)
        predictions.append(np.argmax(result.logits, axis=1))

    predictions = np.concatenate(predictions)
    return Evaluation(
        loss=total_loss / len(dataset),
        accuracy=float(np.mean(predictions == dataset.labels)),
        predictions=predictions,
    )


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the mini-batch training loop

    A learning rate equal to zero is accepted: the parameters are then left untouched."""
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    shuffle: bool = True

    def validate(self):
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"the learning rate cannot be negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"the batch size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigurationError(f"at least one epoch is needed, got {self.epochs}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ConfigurationError("invalid Adam moment parameters")


class Adam:
    """Adaptive moment estimation over a dictionary of parameters

    m ← β₁·m + (1 − β₁)·g, v ← β₂·v + (1 − β₂)·g², then
    θ ← θ − lr · m̂ / (sqrt(v̂) + ε), where m̂ and v̂ are the bias-corrected moments."""

    def __init__(self, params: Dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {name: np.zeros_like(value) for (name, value) in params.items()}
        self.v = {name: np.zeros_like(value) for (name, value) in params.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.cfg.beta1, self.cfg.beta2
        for name, value in params.items():
            g = grads[name]
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            value -= (self.cfg.learning_rate * m_hat / (np.sqrt(v_hat) + self.cfg.epsilon)).astype(value.dtype)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class History:
    """Per-epoch statistics of a training run

    `deterministic` is true when the run is reproducible bit by bit from its seed."""
    records: List[EpochRecord] = field(default_factory=list)
    deterministic: bool = True

    def __len__(self):
        return len(self.records)

    def train_losses(self) -> List[float]:
        return [r.train_loss for r in self.records]

    def val_accuracies(self) -> List[float]:
        return [r.val_accuracy for r in self.records]

    def to_tsv(self) -> str:
        lines = [f"# deterministic={'yes' if self.deterministic else 'no'}",
                 "epoch\ttrain_loss\ttrain_accuracy\tval_loss\tval_accuracy"]
        for r in self.records:
            lines.append(f"{r.epoch}\t{r.train_loss!r}\t{r.train_accuracy!r}\t{r.val_loss!r}\t{r.val_accuracy!r}")
        return "\n".join(lines) + "\n"


def _check_classes(split_name: str, dataset: LabeledSet, n_classes: int):
    present = set(int(label) for label in np.unique(dataset.labels))
    unknown = sorted(label for label in present if not 0 <= label < n_classes)
    if unknown:
        raise ConfigurationError(f"the {split_name} split has labels {unknown} outside 0..{n_classes - 1}")
    absent = [label for label in range(n_classes) if label not in present]
    if absent:
        raise ConfigurationError(f"the {split_name} split has no sample of class(es) {absent}")


def fit(net: Network, train: LabeledSet, val: LabeledSet, cfg: TrainConfig = TrainConfig()) -> History:
    """Train `net` in place with mini-batch Adam and return its history

    Training runs on a single thread and only depends on `cfg.seed`: two runs with
    the same inputs produce identical parameters and loss curves."""
    cfg.validate()
    if len(train) == 0:
        raise ConfigurationError("the training split is empty")
    if len(val) == 0:
        raise ConfigurationError("the validation split is empty")
    _check_classes("training", train, net.config.n_classes)
    _check_classes("validation", val, net.config.n_classes)

    optimizer = Adam(net.params, cfg)
    rng = make_rng(derive_seed(cfg.seed, _SHUFFLE_STREAM))
    history = History()

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train)) if cfg.shuffle else np.arange(len(train))
        total_loss, num_of_correct = 0.0, 0
        for first in range(0, len(train), cfg.batch_size):
            batch_indices = order[first:first + cfg.batch_size]
            labels = train.labels[batch_indices]
            result, grads = loss_and_gradients(net, train.images[batch_indices], labels)

            total_loss += result.loss * len(batch_indices)
            num_of_correct += int(np.sum(np.argmax(result.logits, axis=1) == labels))
            optimizer.step(net.params, grads)

        for name, value in net.params.items():
            assert_finite(f"parameter {name}", value)

        val_eval = evaluate(net, val)
        record = EpochRecord(
            epoch=epoch + 1,
            train_loss=total_loss / len(train),
            train_accuracy=num_of_correct / len(train),
            val_loss=val_eval.loss,
            val_accuracy=val_eval.accuracy,
        )
        history.records.append(record)
        log.info("epoch %d/%d: train loss %.4f, train accuracy %.3f, validation accuracy %.3f",
                 record.epoch, cfg.epochs, record.train_loss, record.train_accuracy, record.val_accuracy)

    return history


def save_network(net: Network, stream):
    """Write a network in the FWNN binary format

    Layout (little endian): magic ``FWNN``, u16 version, u8 dtype code, the configuration
    block, u32 number of parameters, then for each parameter a u64 element count followed
    by the raw values. A CRC-32 of all the previous bytes closes the file."""
    config = net.config
    dtype_name = config.dtype
    payload = bytearray()
    payload += MODEL_MAGIC
    payload += struct.pack("<HB", MODEL_VERSION, _DTYPE_CODES[dtype_name])
    payload += _CONFIG_STRUCT.pack(
        config.input_h, config.input_w, config.in_channels, config.kernel,
        config.pool, config.n_classes, config.channel_scale, len(config.conv_channels),
    )
    payload += struct.pack(f"<{len(config.conv_channels)}I", *config.conv_channels)

    payload += struct.pack("<I", len(net.params))
    for value in net.params.values():
        payload += struct.pack("<Q", value.size)
        payload += np.ascontiguousarray(value, dtype=_BLOB_FORMATS[dtype_name]).tobytes()

    payload += struct.pack("<I", zlib.crc32(bytes(payload)))
    stream.write(bytes(payload))


class _Reader:
    """Sequential access to a byte buffer, reporting the offset of any problem"""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def read(self, num_of_bytes: int, what: str) -> bytes:
        if self.offset + num_of_bytes > len(self.data):
            raise ParseError(
                f"truncated model file while reading {what}: expected {num_of_bytes} bytes, "
                f"found {len(self.data) - self.offset}",
                offset=self.offset,
            )
        chunk = self.data[self.offset:self.offset + num_of_bytes]
        self.offset += num_of_bytes
        return chunk

    def unpack(self, fmt: Union[str, struct.Struct], what: str):
        s = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        return s.unpack(self.read(s.size, what))


def load_network(stream) -> Network:
    """Read a network saved by :func:`.save_network`"""
    data = stream.read()
    reader = _Reader(data)

    magic = reader.read(len(MODEL_MAGIC), "the magic number")
    if magic != MODEL_MAGIC:
        raise ParseError(f"invalid magic number: expected {MODEL_MAGIC!r}, found {magic!r}", offset=0)

    if len(data) < len(MODEL_MAGIC) + 4:
        raise ParseError("the model file is too short to contain a checksum", offset=len(data))
    (stored_crc,) = struct.unpack("<I", data[-4:])
    actual_crc = zlib.crc32(data[:-4])
    if stored_crc != actual_crc:
        raise ParseError(
            f"checksum mismatch: expected {stored_crc:#010x}, computed {actual_crc:#010x}",
            offset=len(data) - 4,
        )
    reader.data = data[:-4]

    version_offset = reader.offset
    version, dtype_code = reader.unpack("<HB", "the version")
    if version != MODEL_VERSION:
        raise ParseError(f"unsupported model version {version}, expected {MODEL_VERSION}", offset=version_offset)
    if dtype_code not in _DTYPE_FROM_CODE:
        raise ParseError(f"unknown dtype code {dtype_code}", offset=version_offset + 2)

    (input_h, input_w, in_channels, kernel, pool, n_classes,
     channel_scale, num_of_blocks) = reader.unpack(_CONFIG_STRUCT, "the configuration")
    conv_channels = reader.unpack(f"<{num_of_blocks}I", "the channel list")
    config = NetworkConfig(
        input_h=input_h,
        input_w=input_w,
        in_channels=in_channels,
        conv_channels=tuple(conv_channels),
        kernel=kernel,
        pool=pool,
        n_classes=n_classes,
        channel_scale=channel_scale,
        dtype=_DTYPE_FROM_CODE[dtype_code],
    )
    try:
        shapes = Network.param_shapes(config)
    except ConfigurationError as err:
        raise ParseError(f"invalid network configuration: {err.message}", offset=version_offset)

    count_offset = reader.offset
    (num_of_params,) = reader.unpack("<I", "the number of parameters")
    if num_of_params != len(shapes):
        raise ParseError(f"expected {len(shapes)} parameters, found {num_of_params}", offset=count_offset)

    blob_format = np.dtype(_BLOB_FORMATS[config.dtype])
    params = {}
    for name, shape in shapes.items():
        size_offset = reader.offset
        (size,) = reader.unpack("<Q", f"the size of {name}")
        expected = int(np.prod(shape))
        if size != expected:
            raise ParseError(f"parameter {name} should have {expected} elements, found {size}", offset=size_offset)
        blob = reader.read(size * blob_format.itemsize, f"the values of {name}")
        params[name] = np.frombuffer(blob, dtype=blob_format).astype(config.dtype).reshape(shape)

    if reader.offset != len(reader.data):
        raise ParseError(f"{len(reader.data) - reader.offset} unexpected trailing bytes", offset=reader.offset)

    return Network(config, params)
