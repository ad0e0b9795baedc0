"""Forward and backward kernels for the layers the detectors use.

Tensors are float64 arrays laid out ``(batch, channel, height, width)``.
Backward functions take the upstream gradient and whatever the forward pass
needs, and return the input gradient first.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BCE_CLAMP = 1e-12


def _check_conv(x, kernel, bias):
    if x.ndim != 4:
        raise ValueError(f"conv2d expects a 4-d input, got shape {x.shape}")
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ValueError(f"conv2d kernel must be (out, in, 3, 3), got {kernel.shape}")
    if kernel.shape[1] != x.shape[1]:
        raise ValueError(f"kernel expects {kernel.shape[1]} input channels, input has {x.shape[1]}")
    if bias.shape != (kernel.shape[0],):
        raise ValueError(f"bias shape {bias.shape} does not match {kernel.shape[0]} filters")


def _taps(n):
    # kernel rows/cols that can touch real data; on a size-1 axis only the centre does
    return slice(1, 2) if n == 1 else slice(0, 3)


def im2col(x: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 patches, shape ``(B*H*W, C*taps)``.

    On a size-1 axis the outer kernel taps only ever see padding, so they are
    dropped; ``conv2d`` slices the kernel to match.
    """
    B, C, H, W = x.shape
    th, tw = _taps(H), _taps(W)
    kh, kw = th.stop - th.start, tw.stop - tw.start
    xp = np.pad(x, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # B, C, H, W, kh, kw
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * kh * kw)


def conv2d(x, kernel, bias, cols=None):
    """Stride-1, same-padded 3x3 convolution (cross-correlation)."""
    _check_conv(x, kernel, bias)
    B, _, H, W = x.shape
    if cols is None:
        cols = im2col(x)
    k = kernel[:, :, _taps(H), _taps(W)]
    out = cols @ k.reshape(k.shape[0], -1).T + bias
    return out.reshape(B, H, W, -1).transpose(0, 3, 1, 2)


def conv2d_backward(grad, x, kernel, cols=None):
    """Returns ``(dx, dkernel, dbias)``."""
    B, C, H, W = x.shape
    out_ch = kernel.shape[0]
    th, tw = _taps(H), _taps(W)
    k = kernel[:, :, th, tw]
    kh, kw = k.shape[2:]
    if cols is None:
        cols = im2col(x)
    g = grad.transpose(0, 2, 3, 1).reshape(-1, out_ch)
    dkernel = np.zeros(kernel.shape)
    dkernel[:, :, th, tw] = (g.T @ cols).reshape(k.shape)
    dbias = g.sum(axis=0)
    dcols = (g @ k.reshape(out_ch, -1)).reshape(B, H, W, C, kh, kw)
    dxp = np.zeros((B, C, H + kh - 1, W + kw - 1))
    for di in range(kh):
        for dj in range(kw):
            dxp[:, :, di : di + H, dj : dj + W] += dcols[..., di, dj].transpose(0, 3, 1, 2)
    return dxp[:, :, kh // 2 : kh // 2 + H, kw // 2 : kw // 2 + W], dkernel, dbias


def _pool_sizes(H, W):
    return (2 if H >= 2 else 1), (2 if W >= 2 else 1)


def maxpool2(x):
    """2x2 max pooling; an axis of size 1 is passed through.

    Returns the pooled tensor and the flat argmax inside each window, which
    :func:`maxpool2_backward` needs. Ties resolve to the first position.
    """
    B, C, H, W = x.shape
    ph, pw = _pool_sizes(H, W)
    Ho, Wo = H // ph, W // pw
    win = x[:, :, : Ho * ph, : Wo * pw].reshape(B, C, Ho, ph, Wo, pw)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, ph * pw)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool2_backward(grad, x_shape, arg):
    B, C, H, W = x_shape
    ph, pw = _pool_sizes(H, W)
    Ho, Wo = H // ph, W // pw
    dwin = np.zeros((B, C, Ho, Wo, ph * pw))
    np.put_along_axis(dwin, arg[..., None], grad[..., None], axis=-1)
    dwin = dwin.reshape(B, C, Ho, Wo, ph, pw).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(x_shape)
    dx[:, :, : Ho * ph, : Wo * pw] = dwin.reshape(B, C, Ho * ph, Wo * pw)
    return dx


def dense(x, weights, bias):
    if x.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ValueError(f"dense input {x.shape} does not match weights {weights.shape}")
    return x @ weights + bias


def dense_backward(grad, x, weights):
    return grad @ weights.T, x.T @ grad, grad.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad, x):
    # subgradient 0 at x == 0
    return grad * (x > 0)


def sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(grad, out):
    """Gradient through the sigmoid given its *output*."""
    return grad * out * (1.0 - out)


ACTIVATIONS = {
    "relu": (relu, lambda g, x, y: relu_backward(g, x)),
    "sigmoid": (sigmoid, lambda g, x, y: sigmoid_backward(g, y)),
    "linear": (lambda x: x, lambda g, x, y: g),
}


def bce_loss(pred, label):
    """Mean binary cross-entropy and its gradient with respect to ``pred``."""
    pred = np.clip(np.asarray(pred, dtype=float), BCE_CLAMP, 1.0 - BCE_CLAMP)
    label = np.asarray(label, dtype=float)
    loss = -np.mean(label * np.log(pred) + (1.0 - label) * np.log1p(-pred))
    grad = (pred - label) / (pred * (1.0 - pred)) / pred.size
    return float(loss), grad


def mse_loss(pred, target):
    """Mean squared error per element and its gradient."""
    diff = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return float(np.mean(diff**2)), 2.0 * diff / diff.size
