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

"""Spectrograms of S-parameter traces

The pipeline is: radix-2 FFT → short-time Fourier transform in dB → bilinear resize to a
fixed size → min-max normalization to [0, 1]. Spectrograms can be merged vertically
(S11 on top of S21) and saved as PGM or PNG images.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import DomainError, ConfigurationError
from misc import is_power_of_two
from sigmodel import SParamTrace

log = logging.getLogger(__name__)

# Added to magnitudes before taking the logarithm
MAGNITUDE_EPSILON = 1e-12

# Minimum number of frames produced by the automatic hop
_AUTO_HOP_FRAMES = 80


def _bit_reversal_permutation(n: int) -> np.ndarray:
    levels = n.bit_length() - 1
    indices = np.arange(n)
    result = np.zeros(n, dtype=np.int64)
    for bit in range(levels):
        result |= ((indices >> bit) & 1) << (levels - 1 - bit)
    return result


def fft(x, inverse: bool = False) -> np.ndarray:
    """Compute the discrete Fourier transform of `x` along its last axis

    This is an iterative radix-2 decimation-in-time FFT: the input is reordered
    by bit-reversing the indices, then log₂(N) butterfly stages combine transforms
    of length 1, 2, 4, … N. Each stage processes all the butterflies (and all the
    rows of a 2D input) at once.

    The forward transform uses the kernel exp(-2πi·kn/N); the inverse uses exp(+2πi·kn/N)
    and divides by N, so that ``fft(fft(x), inverse=True) == x``.
    """
    a = np.array(x, dtype=np.complex128)
    if a.ndim == 0:
        raise DomainError("the FFT needs a vector, not a scalar")

    n = a.shape[-1]
    if not is_power_of_two(n):
        raise DomainError(f"the FFT length must be a power of two, got {n}")

    a = np.ascontiguousarray(a[..., _bit_reversal_permutation(n)])
    leading = a.shape[:-1]
    sign = 1.0 if inverse else -1.0

    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(leading + (n // size, size))
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * twiddle
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2

    if inverse:
        a /= n

    return a


def naive_dft(x, inverse: bool = False) -> np.ndarray:
    """Compute the DFT of a vector through the O(N²) definition

    Use it as a reference to check :func:`.fft`; it accepts any length."""
    x = np.asarray(x, dtype=np.complex128)
    n = len(x)
    k = np.arange(n)
    sign = 1.0 if inverse else -1.0
    result = np.exp(sign * 2j * np.pi * np.outer(k, k) / n) @ x
    return result / n if inverse else result


class WindowKind(Enum):
    """Tapering applied to each STFT frame"""
    HANN = 1
    RECTANGULAR = 2


def window_function(kind: WindowKind, length: int) -> np.ndarray:
    """Return the samples of a window; the Hann window is the periodic one"""
    if kind == WindowKind.RECTANGULAR:
        return np.ones(length)

    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(length) / length)


@dataclass(frozen=True)
class StftConfig:
    """Parameters of the short-time Fourier transform

    If `hop` is ``None``, it is picked by :meth:`.resolve_hop` so that a trace yields at
    least 80 frames. When `detrend` is true, the mean of each frame is removed before
    windowing, so that the static level of the S-parameter does not dominate the image."""
    window_len: int = 256
    hop: Optional[int] = None
    window: WindowKind = WindowKind.HANN
    db_floor: float = -80.0
    detrend: bool = True

    def validate(self):
        if not is_power_of_two(self.window_len):
            raise ConfigurationError(f"the STFT window length must be a power of two, got {self.window_len}")
        if self.hop is not None and not (0 < self.hop <= self.window_len):
            raise ConfigurationError(f"the STFT hop must be in [1, {self.window_len}], got {self.hop}")
        if not self.db_floor < 0:
            raise ConfigurationError(f"the dB floor must be negative, got {self.db_floor}")

    def resolve_hop(self, num_of_samples: int) -> int:
        if self.hop is not None:
            return self.hop

        auto = (num_of_samples - self.window_len) // (_AUTO_HOP_FRAMES - 1)
        return min(self.window_len, max(1, auto))


def num_of_frames(num_of_samples: int, window_len: int, hop: int) -> int:
    return (num_of_samples - window_len) // hop + 1


def stft(trace: Union[SParamTrace, np.ndarray], cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Compute the magnitude (in dB) of the short-time Fourier transform of a trace

    The result is a matrix with one row per frame and ``window_len / 2 + 1`` columns
    (the non-negative frequency bins). Values are ``20·log10(|X| + 1e-12)``, clamped
    from below at ``cfg.db_floor``."""
    cfg.validate()
    samples = np.asarray(trace.samples if isinstance(trace, SParamTrace) else trace, dtype=np.float64)
    if len(samples) < cfg.window_len:
        raise DomainError(
            f"the trace has {len(samples)} samples, but the STFT needs at least {cfg.window_len}"
        )

    hop = cfg.resolve_hop(len(samples))
    frames = sliding_window_view(samples, cfg.window_len)[::hop]
    if cfg.detrend:
        frames = frames - np.mean(frames, axis=1, keepdims=True)

    spectrum = fft(frames * window_function(cfg.window, cfg.window_len))[:, :cfg.window_len // 2 + 1]
    magnitude = 20 * np.log10(np.abs(spectrum) + MAGNITUDE_EPSILON)
    return np.maximum(magnitude, cfg.db_floor)


@dataclass
class Spectrogram:
    """A time-frequency image with values in [0, 1]

    `values` is a ``height × width`` matrix: rows are frequency bins (row 0 is DC)
    and columns are time frames. A merged spectrogram stacks the S11 image on top
    of the S21 image, so it is twice as tall."""
    height: int
    width: int
    values: np.ndarray

    def validate(self):
        if self.height < 1 or self.width < 1:
            raise DomainError(f"invalid spectrogram size {self.height}×{self.width}")
        if self.values.shape != (self.height, self.width):
            raise DomainError(
                f"a {self.height}×{self.width} spectrogram cannot hold a {self.values.shape} matrix"
            )
        if not np.all((self.values >= 0.0) & (self.values <= 1.0)):
            raise DomainError("spectrogram values must lie in [0, 1]")


def _resize_axis(values: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Linear interpolation along one axis; the first and last samples map onto themselves"""
    in_len = values.shape[axis]
    if in_len == 1 or out_len == 1:
        positions = np.zeros(out_len)
    else:
        positions = np.arange(out_len) * (in_len - 1) / (out_len - 1)

    lower = np.minimum(np.floor(positions).astype(np.int64), in_len - 1)
    upper = np.minimum(lower + 1, in_len - 1)
    frac_shape = [1] * values.ndim
    frac_shape[axis] = out_len
    frac = (positions - lower).reshape(frac_shape)

    return np.take(values, lower, axis=axis) * (1 - frac) + np.take(values, upper, axis=axis) * frac


def bilinear_resize(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return _resize_axis(_resize_axis(values, out_h, axis=0), out_w, axis=1)


def min_max_normalize(values: np.ndarray) -> np.ndarray:
    """Map the smallest value to 0 and the largest to 1; a constant matrix becomes all zeros"""
    lowest, highest = np.min(values), np.max(values)
    if highest == lowest:
        return np.zeros_like(values, dtype=np.float64)

    return np.clip((values - lowest) / (highest - lowest), 0.0, 1.0)


def to_spectrogram(mag: np.ndarray, out_h: int = 80, out_w: int = 80) -> Spectrogram:
    """Turn a frames × bins matrix produced by :func:`.stft` into a normalized image

    The matrix is transposed (so that frequency runs along the rows), resized to
    ``out_h × out_w`` through bilinear interpolation and normalized to [0, 1]."""
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.size == 0:
        raise DomainError(f"cannot build a spectrogram from a matrix with shape {mag.shape}")
    if out_h < 1 or out_w < 1:
        raise DomainError(f"invalid spectrogram size {out_h}×{out_w}")

    values = min_max_normalize(bilinear_resize(mag.T, out_h, out_w))
    return Spectrogram(height=out_h, width=out_w, values=values)


def trace_spectrogram(
        trace: SParamTrace,
        cfg: StftConfig = StftConfig(),
        out_h: int = 80,
        out_w: int = 80,
) -> Spectrogram:
    return to_spectrogram(stft(trace, cfg), out_h, out_w)


def merge(s11: Spectrogram, s21: Spectrogram, single_shape: Tuple[int, int] = (80, 80)) -> Spectrogram:
    """Stack two spectrograms vertically, with `s11` on top

    Both inputs must have the size of a single spectrogram, ``single_shape`` (height, width),
    so that an already merged image cannot be merged again."""
    for name, spec in (("S11", s11), ("S21", s21)):
        if (spec.height, spec.width) != tuple(single_shape):
            raise DomainError(
                f"cannot merge a {spec.height}×{spec.width} {name} spectrogram, "
                f"expected {single_shape[0]}×{single_shape[1]}"
            )

    return Spectrogram(
        height=s11.height + s21.height,
        width=s11.width,
        values=np.vstack((s11.values, s21.values)),
    )


def to_bytes(spec: Spectrogram) -> np.ndarray:
    """Quantize the values of a spectrogram to 8 bits, rounding half up"""
    return np.floor(255.0 * spec.values + 0.5).astype(np.uint8)


def render_pgm(spec: Spectrogram) -> bytes:
    """Encode a spectrogram as a binary (P5) PGM image with maxval 255

    Row 0 of the spectrogram is the first row of the image."""
    spec.validate()
    header = f"P5\n{spec.width} {spec.height}\n255\n"
    return header.encode("ascii") + to_bytes(spec).tobytes()


def write_png(spec: Spectrogram, stream):
    """Save a spectrogram as a grayscale PNG image

    Unlike :func:`.render_pgm`, the image is flipped so that low frequencies
    appear at the bottom, as in the usual plots of spectrograms."""
    from PIL import Image

    spec.validate()
    img = Image.fromarray(np.ascontiguousarray(to_bytes(spec)[::-1, :]), mode="L")
    img.save(stream, format="PNG")
