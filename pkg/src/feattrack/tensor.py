"""Dense-tensor layer math with explicit forward/backward pairs.

The five layer kinds the tracking networks need (cross-correlation conv,
2x2/2 max pooling, fully connected, ReLU, two-class cross entropy) plus
SGD with momentum and weight decay. Every backward is the exact adjoint
of its forward so the whole stack is finite-difference checkable.

Arrays are plain numpy ndarrays ("tensors"): conv inputs are (N, C, H, W),
conv kernels (O, C, kh, kw), FC weights (O, D). float64 is used by the
math tests, float32 by the tracking and benchmark paths.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Tensor = np.ndarray


@dataclass
class OptimizerSpec:
    """SGD hyperparameters: v <- momentum*v + (g + weight_decay*w); w <- w - lr*v."""

    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0005

    def __post_init__(self):
        if not np.isfinite(self.learning_rate) or self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be finite and > 0, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not np.isfinite(self.weight_decay) or self.weight_decay < 0:
            raise ValueError(f"weight_decay must be finite and >= 0, got {self.weight_decay}")


@dataclass
class LayerParams:
    """One layer's weights and biases plus their momentum buffers.

    Frozen groups are never touched by sgd_step (bit-identical before/after).
    """

    weights: Tensor
    biases: Tensor
    w_momentum: Tensor = field(default=None)
    b_momentum: Tensor = field(default=None)
    frozen: bool = False

    def __post_init__(self):
        if self.w_momentum is None:
            self.w_momentum = np.zeros_like(self.weights)
        if self.b_momentum is None:
            self.b_momentum = np.zeros_like(self.biases)
        if self.w_momentum.shape != self.weights.shape:
            raise ValueError(
                f"weight momentum shape {self.w_momentum.shape} does not match weights {self.weights.shape}"
            )
        if self.b_momentum.shape != self.biases.shape:
            raise ValueError(
                f"bias momentum shape {self.b_momentum.shape} does not match biases {self.biases.shape}"
            )


def _im2col(x: Tensor, kh: int, kw: int, stride: int, padding: int) -> Tensor:
    """(N, C, H, W) -> (N, Ho, Wo, C, kh, kw) patch view (copied)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (N, C, Ho, Wo, kh, kw) -> (N, Ho, Wo, C, kh, kw)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def conv2d_out_dim(in_dim: int, k: int, stride: int, padding: int) -> int:
    return (in_dim + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, params: LayerParams, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with bias. x (N,C,H,W), weights (O,C,kh,kw) -> (N,O,Ho,Wo)."""
    w, b = params.weights, params.biases
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(
            f"input channel count {x.shape} does not match kernel input channels {w.shape}"
        )
    n, _, h, wid = x.shape
    o, _, kh, kw = w.shape
    ho = conv2d_out_dim(h, kh, stride, padding)
    wo = conv2d_out_dim(wid, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for input {x.shape} and kernel {w.shape}")
    cols = _im2col(x, kh, kw, stride, padding).reshape(n * ho * wo, -1)
    y = cols @ w.reshape(o, -1).T + b
    return y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)


def conv2d_backward(
    x: Tensor, params: LayerParams, dy: Tensor, stride: int = 1, padding: int = 0
) -> tuple[Tensor, Tensor, Tensor]:
    """Exact adjoint of conv2d. Returns (dx, dw, db) for upstream dy (N,O,Ho,Wo)."""
    w = params.weights
    n, c, h, wid = x.shape
    o, _, kh, kw = w.shape
    _, _, ho, wo = dy.shape
    dy_r = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
    cols = _im2col(x, kh, kw, stride, padding).reshape(n * ho * wo, -1)
    dw = (dy_r.T @ cols).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    # scatter dcols back to the (padded) input: col2im
    dcols = (dy_r @ w.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * padding, wid + 2 * padding), dtype=x.dtype)
    for a in range(kh):
        for b_ in range(kw):
            dxp[:, :, a : a + ho * stride : stride, b_ : b_ + wo * stride : stride] += dcols[
                :, :, :, :, a, b_
            ].transpose(0, 3, 1, 2)
    if padding:
        return dxp[:, :, padding:-padding, padding:-padding], dw, db
    return dxp, dw, db


def maxpool2d(x: Tensor) -> tuple[Tensor, Tensor]:
    """2x2 stride-2 max pool. Returns (output, argmax record) for the backward.

    Spatial dims must be even. Ties take the first occurrence in row-major
    window order.
    """
    if x.ndim != 4:
        raise ValueError(f"maxpool2d expects (N,C,H,W), got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2d needs even spatial dims, got {x.shape}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4
    )
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2d_backward(x_shape: tuple, idx: Tensor, dy: Tensor) -> Tensor:
    """Routes dy to the recorded argmax positions."""
    n, c, h, w = x_shape
    win = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(win, idx[..., None], dy[..., None], axis=-1)
    return win.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


def fully_connected(x: Tensor, params: LayerParams) -> Tensor:
    """y = x W^T + b for x (N, D) and weights (O, D)."""
    w, b = params.weights, params.biases
    if x.ndim != 2:
        raise ValueError(f"fully_connected expects (N, D) input, got {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"input length {x.shape} does not match weight input extent {w.shape}")
    return x @ w.T + b


def fully_connected_backward(
    x: Tensor, params: LayerParams, dy: Tensor
) -> tuple[Tensor, Tensor, Tensor]:
    """Exact adjoint of fully_connected: (dx, dw, db)."""
    w = params.weights
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(x: Tensor, dy: Tensor) -> Tensor:
    """Masks dy where the forward input was <= 0 (subgradient 0 at exactly 0)."""
    return dy * (x > 0)


def cross_entropy_loss(logits: Tensor, labels) -> tuple[float, Tensor]:
    """Mean two-class cross entropy and its logit gradient.

    logits: (N, 2); labels: sequence of class indices in {1, 2} (class 1 is
    the positive/target class by convention). Softmax is stabilized by
    max-subtraction. Gradient is (softmax - onehot) / N.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ValueError(f"logits must be (N, 2), got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0 or logits.shape[0] == 0:
        raise ValueError("empty batch")
    if labels.shape[0] != logits.shape[0]:
        raise ValueError(f"{logits.shape[0]} logit rows vs {labels.shape[0]} labels")
    if not np.all((labels == 1) | (labels == 2)):
        raise ValueError("labels must be 1 (positive) or 2 (negative)")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    rows = np.arange(n)
    loss = float(-logp[rows, labels - 1].mean())
    grad = np.exp(logp)
    grad[rows, labels - 1] -= 1.0
    grad /= n
    return loss, grad.astype(logits.dtype, copy=False)


def softmax_positive(logits: Tensor) -> Tensor:
    """Probability of the positive class (index 0) per row."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e[..., 0] / e.sum(axis=-1)


def sgd_step(params: LayerParams, dweights: Tensor, dbiases: Tensor, spec: OptimizerSpec) -> None:
    """One in-place SGD update with momentum and weight decay.

    Frozen groups are left bit-identical (a warning is emitted).
    """
    if params.frozen:
        warnings.warn("sgd_step called on a frozen parameter group; skipping", stacklevel=2)
        return
    if dweights.shape != params.weights.shape:
        raise ValueError(
            f"weight grad shape {dweights.shape} does not match weights {params.weights.shape}"
        )
    if dbiases.shape != params.biases.shape:
        raise ValueError(
            f"bias grad shape {dbiases.shape} does not match biases {params.biases.shape}"
        )
    m, lr, wd = spec.momentum, spec.learning_rate, spec.weight_decay
    params.w_momentum *= m
    params.w_momentum += dweights + wd * params.weights
    params.weights -= lr * params.w_momentum
    params.b_momentum *= m
    params.b_momentum += dbiases + wd * params.biases
    params.biases -= lr * params.b_momentum
