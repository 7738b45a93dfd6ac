# -*- encoding: utf-8 -*-

"""Forward and backward kernels of the layers used by the classifier

Every layer is a pair of functions: ``*_forward`` returns the output and a cache,
``*_backward`` takes the upstream gradient and the cache and returns the gradients
with respect to the inputs and the parameters. Tensors are numpy arrays laid out
as (batch, channels, height, width).
"""

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import DomainError, NumericError


def assert_finite(name: str, array: np.ndarray):
    """Raise :class:`.NumericError` if `array` contains NaN or infinite values"""
    if not np.all(np.isfinite(array)):
        raise NumericError(f"non-finite values found in {name}")


def _as_batch(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[np.newaxis], True
    if x.ndim != 4:
        raise DomainError(f"expected a tensor with 3 or 4 dimensions, got shape {x.shape}")
    return x, False


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Convolve a batch with a bank of filters, stride 1 and zero ("same") padding

    Inputs:
    - x: input of shape (N, C, H, W), or (C, H, W) for a single image
    - w: filters of shape (F, C, K, K), with K odd
    - b: biases of shape (F,)

    Returns a tuple ``(out, cache)``; `out` has shape (N, F, H, W) (or (F, H, W)).
    """
    x, single = _as_batch(x)
    if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise DomainError(f"filters must have shape (F, C, K, K) with K odd, got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DomainError(f"input channels ({x.shape[1]}) do not match filter channels ({w.shape[1]})")
    if b.shape != (w.shape[0],):
        raise DomainError(f"expected {w.shape[0]} biases, got shape {b.shape}")

    k = w.shape[2]
    pad = k // 2
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # (N, C, H, W, K, K)
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))
    out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + b[np.newaxis, :, np.newaxis, np.newaxis]

    cache = (windows, w, single)
    return (out[0] if single else out), cache


def conv2d_backward(dout: np.ndarray, cache):
    """Return ``(dx, dw, db)`` for :func:`.conv2d_forward`

    The gradient with respect to the input is the "full" correlation of `dout`
    with the filters rotated by 180°."""
    windows, w, single = cache
    if single:
        dout = dout[np.newaxis]

    k = w.shape[2]
    pad = k // 2

    db = np.sum(dout, axis=(0, 2, 3))
    dw = np.tensordot(dout, windows, axes=([0, 2, 3], [0, 2, 3]))

    dout_padded = np.pad(dout, ((0, 0), (0, 0), (k - 1 - pad, k - 1 - pad), (k - 1 - pad, k - 1 - pad)))
    dout_windows = sliding_window_view(dout_padded, (k, k), axis=(2, 3))
    dx = np.tensordot(dout_windows, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)

    return (dx[0] if single else dx), dw, db


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x


def relu_backward(dout: np.ndarray, cache) -> np.ndarray:
    # The subgradient at 0 is 0
    return dout * (cache > 0)


def maxpool2x2_forward(x: np.ndarray):
    """Take the maximum over non-overlapping 2×2 windows

    Within each window the elements are visited in row-major order, and the first
    maximum wins ties. The cache records which element was picked."""
    x, single = _as_batch(x)
    n, c, h, w = x.shape
    if h % 2 != 0 or w % 2 != 0:
        raise DomainError(f"max pooling needs even height and width, got {h}×{w}")

    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    argmax = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, argmax[..., np.newaxis], axis=-1)[..., 0]

    cache = (argmax, x.shape, single)
    return (out[0] if single else out), cache


def maxpool2x2_backward(dout: np.ndarray, cache) -> np.ndarray:
    argmax, shape, single = cache
    if single:
        dout = dout[np.newaxis]

    n, c, h, w = shape
    routed = np.zeros(argmax.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(routed, argmax[..., np.newaxis], dout[..., np.newaxis], axis=-1)
    dx = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)

    return dx[0] if single else dx


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row maximum so that exp() never overflows"""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=-1, keepdims=True)


@dataclass
class DenseResult:
    logits: np.ndarray
    probabilities: np.ndarray
    loss: float
    dfeatures: np.ndarray
    dweights: np.ndarray
    dbiases: np.ndarray


def dense_softmax_xent(features: np.ndarray, weights: np.ndarray, biases: np.ndarray,
                       labels: np.ndarray) -> DenseResult:
    """Fully connected layer followed by softmax and the mean cross-entropy loss

    `features` has shape (N, D), `weights` (D, K), `biases` (K,) and `labels` holds N
    integers in 0..K-1. The gradient of the loss with respect to the logits is
    (softmax − onehot) / N, which is then propagated through the dense layer."""
    if features.ndim != 2 or features.shape[1] != weights.shape[0]:
        raise DomainError(
            f"features with shape {features.shape} do not match dense weights with shape {weights.shape}"
        )

    labels = np.asarray(labels)
    num_of_classes = weights.shape[1]
    if labels.shape != (features.shape[0],):
        raise DomainError(f"expected {features.shape[0]} labels, got shape {labels.shape}")
    if np.any((labels < 0) | (labels >= num_of_classes)):
        raise DomainError(f"labels must be in 0..{num_of_classes - 1}")

    batch = features.shape[0]
    rows = np.arange(batch)
    logits = features @ weights + biases

    shifted = logits - np.max(logits, axis=1, keepdims=True)
    log_probs = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    probabilities = np.exp(log_probs)
    loss = float(-np.mean(log_probs[rows, labels]))

    dlogits = probabilities.copy()
    dlogits[rows, labels] -= 1
    dlogits /= batch

    return DenseResult(
        logits=logits,
        probabilities=probabilities,
        loss=loss,
        dfeatures=dlogits @ weights.T,
        dweights=features.T @ dlogits,
        dbiases=np.sum(dlogits, axis=0),
    )


def numerical_gradient(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dout: np.ndarray,
                       h: float = 1e-5) -> np.ndarray:
    """Estimate the gradient of ``sum(f(x) * dout)`` with respect to `x` by central differences

    `x` is perturbed in place and restored afterwards, so `f` may close over it."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"], op_flags=["readwrite"])
    while not it.finished:
        idx = it.multi_index
        saved = x[idx]
        x[idx] = saved + h
        plus = np.sum(f(x) * dout)
        x[idx] = saved - h
        minus = np.sum(f(x) * dout)
        x[idx] = saved
        grad[idx] = (plus - minus) / (2 * h)
        it.iternext()

    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Return max |a − b| divided by the largest magnitude found in `a` or `b`"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-8)
    return float(np.max(np.abs(a - b))) / scale


def check_gradients(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dout: np.ndarray,
                    analytic: np.ndarray, h: float = 1e-5) -> float:
    """Compare an analytic gradient with central finite differences and return the relative error"""
    return relative_error(analytic, numerical_gradient(f, x, dout, h))
