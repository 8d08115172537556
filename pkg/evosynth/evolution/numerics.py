"""Masked numeric core: valid convolution, 2x2 max pooling, fully connected
layers, ReLU, softmax cross-entropy and momentum SGD.

Every tensor is a float64 ``numpy.ndarray``. Pruning is expressed as a binary
mask with the shape of the weights it gates; masked synapses contribute
nothing forward, receive zero gradient backward and are projected back to
exactly 0.0 by ``sgd_step``.
"""
from typing import NamedTuple, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp

from evosynth.evolution.errors import (
    ConfigError,
    LabelRangeError,
    NonFiniteGradientError,
    ShapeMismatchError,
)


class LayerGrad(NamedTuple):
    weight_grad: np.ndarray
    bias_grad: np.ndarray
    input_grad: np.ndarray


def apply_mask(tensor: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # np.where rather than a product so pruned coordinates are +0.0, never -0.0
    return np.where(mask != 0, tensor, 0.0)


def _check_conv(op, input, weights, mask, bias=None):
    if input.ndim != 4:
        raise ShapeMismatchError(op, "input rank", 4, input.ndim)
    if weights.ndim != 4:
        raise ShapeMismatchError(op, "weight rank", 4, weights.ndim)
    if mask.shape != weights.shape:
        raise ShapeMismatchError(op, "mask", weights.shape, mask.shape)
    if input.shape[1] != weights.shape[1]:
        raise ShapeMismatchError(op, "in_channels", weights.shape[1], input.shape[1])
    if bias is not None and bias.shape != (weights.shape[0],):
        raise ShapeMismatchError(op, "bias", (weights.shape[0],), bias.shape)
    if weights.shape[2] > input.shape[2]:
        raise ShapeMismatchError(
            op, "kernel height", f"<= {input.shape[2]}", weights.shape[2]
        )
    if weights.shape[3] > input.shape[3]:
        raise ShapeMismatchError(
            op, "kernel width", f"<= {input.shape[3]}", weights.shape[3]
        )


def conv_output_shape(input_shape, weight_shape) -> Tuple[int, int, int, int]:
    n, _, h, w = input_shape
    out_channels, _, kh, kw = weight_shape
    return n, out_channels, h - kh + 1, w - kw + 1


def conv2d_forward(
    input: np.ndarray, weights: np.ndarray, bias: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    _check_conv("conv2d_forward", input, weights, mask, bias)
    kh, kw = weights.shape[2:]
    windows = sliding_window_view(input, (kh, kw), axis=(2, 3))
    # (N, H', W', Cout)
    out = np.tensordot(windows, apply_mask(weights, mask), axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias[None, :, None, None]


def conv2d_direct(
    input: np.ndarray, weights: np.ndarray, bias: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """Nested-loop definition of the valid convolution, kept as the oracle for
    the windowed implementation."""
    _check_conv("conv2d_direct", input, weights, mask, bias)
    n_batch, out_channels, out_h, out_w = conv_output_shape(input.shape, weights.shape)
    in_channels, kh, kw = weights.shape[1:]
    out = np.zeros((n_batch, out_channels, out_h, out_w))
    for n in range(n_batch):
        for o in range(out_channels):
            for y in range(out_h):
                for x in range(out_w):
                    acc = bias[o]
                    for i in range(in_channels):
                        for u in range(kh):
                            for v in range(kw):
                                acc += (
                                    input[n, i, y + u, x + v]
                                    * weights[o, i, u, v]
                                    * mask[o, i, u, v]
                                )
                    out[n, o, y, x] = acc
    return out


def conv2d_backward(
    input: np.ndarray, weights: np.ndarray, mask: np.ndarray, output_grad: np.ndarray
) -> LayerGrad:
    _check_conv("conv2d_backward", input, weights, mask)
    expected = conv_output_shape(input.shape, weights.shape)
    if output_grad.shape != expected:
        raise ShapeMismatchError("conv2d_backward", "output_grad", expected, output_grad.shape)

    kh, kw = weights.shape[2:]
    windows = sliding_window_view(input, (kh, kw), axis=(2, 3))
    weight_grad = np.tensordot(output_grad, windows, axes=([0, 2, 3], [0, 2, 3]))
    bias_grad = output_grad.sum(axis=(0, 2, 3))

    # full correlation of the output gradient with the flipped masked kernel
    padded = np.pad(output_grad, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    grad_windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))
    flipped = apply_mask(weights, mask)[:, :, ::-1, ::-1]
    input_grad = np.tensordot(grad_windows, flipped, axes=([1, 4, 5], [0, 2, 3]))

    return LayerGrad(
        weight_grad=apply_mask(weight_grad, mask),
        bias_grad=bias_grad,
        input_grad=np.ascontiguousarray(input_grad.transpose(0, 3, 1, 2)),
    )


def _pool_windows(input: np.ndarray) -> np.ndarray:
    n, c, h, w = input.shape
    out_h, out_w = h // 2, w // 2
    cropped = input[:, :, : 2 * out_h, : 2 * out_w]
    return (
        cropped.reshape(n, c, out_h, 2, out_w, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, out_h, out_w, 4)
    )


def maxpool2x2_forward(input: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """2x2, stride-2 max pooling. Returns the pooled tensor and the switches
    (position of the winner inside each window, row-major). Ties go to the
    lowest index because argmax returns the first maximum."""
    if input.ndim != 4:
        raise ShapeMismatchError("maxpool2x2_forward", "input rank", 4, input.ndim)
    if input.shape[2] < 2 or input.shape[3] < 2:
        raise ShapeMismatchError(
            "maxpool2x2_forward", "spatial size", ">= 2x2", input.shape[2:]
        )
    windows = _pool_windows(input)
    switches = windows.argmax(axis=-1)
    output = np.take_along_axis(windows, switches[..., None], axis=-1)[..., 0]
    return output, switches


def maxpool2x2_backward(
    output_grad: np.ndarray, switches: np.ndarray, input_shape
) -> np.ndarray:
    if output_grad.shape != switches.shape:
        raise ShapeMismatchError(
            "maxpool2x2_backward", "output_grad", switches.shape, output_grad.shape
        )
    n, c, out_h, out_w = switches.shape
    grad_windows = np.zeros((n, c, out_h, out_w, 4))
    np.put_along_axis(grad_windows, switches[..., None], output_grad[..., None], axis=-1)
    grad = (
        grad_windows.reshape(n, c, out_h, out_w, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, 2 * out_h, 2 * out_w)
    )
    input_grad = np.zeros(input_shape)
    input_grad[:, :, : 2 * out_h, : 2 * out_w] = grad
    return input_grad


def _check_fc(op, flat, weights, mask, bias=None):
    if weights.ndim != 2:
        raise ShapeMismatchError(op, "weight rank", 2, weights.ndim)
    if mask.shape != weights.shape:
        raise ShapeMismatchError(op, "mask", weights.shape, mask.shape)
    if flat.shape[1] != weights.shape[1]:
        raise ShapeMismatchError(op, "in_features", weights.shape[1], flat.shape[1])
    if bias is not None and bias.shape != (weights.shape[0],):
        raise ShapeMismatchError(op, "bias", (weights.shape[0],), bias.shape)


def fc_forward(
    input: np.ndarray, weights: np.ndarray, bias: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """Fully connected layer; inputs of rank > 2 are flattened per sample."""
    flat = input.reshape(input.shape[0], -1)
    _check_fc("fc_forward", flat, weights, mask, bias)
    return flat @ apply_mask(weights, mask).T + bias


def fc_backward(
    input: np.ndarray, weights: np.ndarray, mask: np.ndarray, output_grad: np.ndarray
) -> LayerGrad:
    flat = input.reshape(input.shape[0], -1)
    _check_fc("fc_backward", flat, weights, mask)
    if output_grad.shape != (flat.shape[0], weights.shape[0]):
        raise ShapeMismatchError(
            "fc_backward", "output_grad", (flat.shape[0], weights.shape[0]), output_grad.shape
        )
    weight_grad = output_grad.T @ flat
    input_grad = output_grad @ apply_mask(weights, mask)
    return LayerGrad(
        weight_grad=apply_mask(weight_grad, mask),
        bias_grad=output_grad.sum(axis=0),
        input_grad=input_grad.reshape(input.shape),
    )


def relu_forward(input: np.ndarray) -> np.ndarray:
    return np.maximum(input, 0.0)


def relu_backward(input: np.ndarray, output_grad: np.ndarray) -> np.ndarray:
    if input.shape != output_grad.shape:
        raise ShapeMismatchError("relu_backward", "output_grad", input.shape, output_grad.shape)
    return np.where(input > 0, output_grad, 0.0)


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    if logits.ndim != 2:
        raise ShapeMismatchError("softmax_cross_entropy", "logits rank", 2, logits.ndim)
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeMismatchError(
            "softmax_cross_entropy", "labels", (logits.shape[0],), labels.shape
        )
    num_classes = logits.shape[1]
    out_of_range = (labels < 0) | (labels >= num_classes)
    if np.any(out_of_range):
        raise LabelRangeError(int(labels[np.argmax(out_of_range)]), num_classes)

    n = logits.shape[0]
    rows = np.arange(n)
    log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
    loss = -float(np.mean(log_probs[rows, labels]))
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def sgd_step(
    weights: np.ndarray,
    mask: np.ndarray,
    grads: np.ndarray,
    lr: float,
    momentum: float,
    velocity: np.ndarray,
    name: str = "weights",
) -> Tuple[np.ndarray, np.ndarray]:
    """One momentum SGD update followed by the mask projection.

    velocity <- momentum * velocity - lr * grad
    weights  <- (weights + velocity) * mask
    """
    for label, tensor in (("mask", mask), ("grads", grads), ("velocity", velocity)):
        if tensor.shape != weights.shape:
            raise ShapeMismatchError("sgd_step", label, weights.shape, tensor.shape)
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not 0 <= momentum < 1:
        raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradientError(name)

    velocity = momentum * velocity - lr * grads
    return apply_mask(weights + velocity, mask), velocity
