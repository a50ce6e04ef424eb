"""Standard network building blocks with hand-written backward passes.

Convolution, fully connected, ReLU, batch normalization, fixed max/average
pooling and softmax cross-entropy: everything needed to rebuild the small
reference classifiers and the strided-convolution pooling baseline.

Conventions shared by all layers:
  - forward(x, train=...) stores whatever backward needs;
  - backward(grad_out) returns the input gradient and ACCUMULATES parameter
    gradients into the layer's grad buffers (call zero_grad between steps);
  - pooling never pads and requires the window to tile the input exactly;
    convolution supports symmetric zero padding.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .initializers import glorot_uniform
from .optim import ParamGroup


def pool_out_dim(in_dim: int, window: int, stride: int) -> int:
    """Output size of an exactly-tiling pooling window: (in - w)/s + 1."""
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be >= 1, got {window}, {stride}")
    if in_dim < window:
        raise ValueError(f"input dim {in_dim} smaller than window {window}")
    if (in_dim - window) % stride != 0:
        raise ValueError(
            f"window {window}/stride {stride} does not tile input dim {in_dim} exactly"
        )
    return (in_dim - window) // stride + 1


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def window_view(x: np.ndarray, wh: int, ww: int, sh: int, sw: int) -> np.ndarray:
    """Strided read-only view (B, C, oH, oW, wh, ww) over all windows."""
    v = sliding_window_view(x, (wh, ww), axis=(2, 3))
    return v[:, :, ::sh, ::sw]


def scatter_windows(grad_win: np.ndarray, out_shape, stride_h: int, stride_w: int) -> np.ndarray:
    """Accumulate per-window gradients (B, C, oH, oW, wh, ww) back onto the
    input grid; overlapping windows sum."""
    b, c, h, w = out_shape
    _, _, oh, ow, wh, ww = grad_win.shape
    gx = np.zeros((b, c, h, w), dtype=grad_win.dtype)
    for dy in range(wh):
        for dx in range(ww):
            gx[:, :, dy : dy + stride_h * oh : stride_h,
               dx : dx + stride_w * ow : stride_w] += grad_win[..., dy, dx]
    return gx


class Layer:
    name: str = ""

    def forward(self, x, train: bool = True):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def param_groups(self) -> list[ParamGroup]:
        return []

    def state_tensors(self) -> list[tuple[str, np.ndarray]]:
        """Arrays that belong in a checkpoint (parameters plus any running
        statistics), in a fixed order."""
        return [(g.name, g.param) for g in self.param_groups()]

    def zero_grad(self) -> None:
        for g in self.param_groups():
            g.grad[...] = 0.0

    def kink_margin(self):
        """Distance of the last forward from the nearest nondifferentiable
        point, or None for smooth layers. Used by the gradient checker."""
        return None


class Conv2d(Layer):
    """Cross-correlation with per-output-channel bias (im2col + GEMM)."""

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, pad=0,
                 use_bias: bool = True, lr_factor: float = 1.0, wd_factor: float = 1.0,
                 rng: np.random.Generator | None = None, dtype=np.float32, name: str = "conv"):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel = _pair(kernel)
        self.stride = int(stride)
        self.pad = int(pad)
        if self.stride < 1 or self.pad < 0:
            raise ValueError("stride must be >= 1 and pad >= 0")
        self.lr_factor = lr_factor
        self.wd_factor = wd_factor
        self.name = name
        kh, kw = self.kernel
        wshape = (self.out_channels, self.in_channels, kh, kw)
        if rng is None:
            self.weights = np.zeros(wshape, dtype=dtype)
        else:
            fan_in = self.in_channels * kh * kw
            fan_out = self.out_channels * kh * kw
            self.weights = glorot_uniform(rng, wshape, fan_in, fan_out, dtype=dtype)
        self.bias = np.zeros(self.out_channels, dtype=dtype) if use_bias else None
        self.weights_grad = np.zeros_like(self.weights)
        self.bias_grad = np.zeros_like(self.bias) if use_bias else None
        self._saved = None

    def param_groups(self):
        groups = [ParamGroup(f"{self.name}.weight", self.weights, self.weights_grad,
                             self.lr_factor, self.wd_factor)]
        if self.bias is not None:
            groups.append(ParamGroup(f"{self.name}.bias", self.bias, self.bias_grad,
                                     self.lr_factor, self.wd_factor))
        return groups

    def _out_dims(self, h, w):
        kh, kw = self.kernel
        oh = (h + 2 * self.pad - kh) // self.stride + 1
        ow = (w + 2 * self.pad - kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(f"kernel {self.kernel} does not fit input {h}x{w} with pad {self.pad}")
        return oh, ow

    def _im2col(self, xp, b, c, oh, ow):
        # Columns in (c*kh*kw, b*oh*ow) order: one bulk strided copy per
        # kernel offset, and both forward and backward become single GEMMs.
        kh, kw = self.kernel
        s = self.stride
        xt = xp.transpose(1, 0, 2, 3)
        cols = np.empty((c, kh, kw, b, oh, ow), dtype=xp.dtype)
        for dy in range(kh):
            for dx in range(kw):
                cols[:, dy, dx] = xt[:, :, dy : dy + s * oh : s, dx : dx + s * ow : s]
        return cols.reshape(c * kh * kw, b * oh * ow)

    def forward(self, x, train: bool = True):
        b, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"{self.name}: expected {self.in_channels} input channels, got {c}")
        oh, ow = self._out_dims(h, w)
        if self.pad:
            x = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad), (self.pad, self.pad)))
        cols = self._im2col(x, b, c, oh, ow)
        out = self.weights.reshape(self.out_channels, -1) @ cols
        if self.bias is not None:
            out += self.bias[:, None]
        if train:
            self._saved = (cols, x.shape, (b, oh, ow))
        return np.ascontiguousarray(
            out.reshape(self.out_channels, b, oh, ow).transpose(1, 0, 2, 3)
        )

    def backward(self, grad_out):
        if self._saved is None:
            raise RuntimeError(f"{self.name}: backward without a stored forward")
        cols, padded_shape, (b, oh, ow) = self._saved
        if grad_out.shape != (b, self.out_channels, oh, ow):
            raise ValueError(f"{self.name}: grad_out shape {grad_out.shape} does not match forward")
        kh, kw = self.kernel
        c, s = self.in_channels, self.stride
        go = np.ascontiguousarray(grad_out.transpose(1, 0, 2, 3)).reshape(self.out_channels, -1)
        self.weights_grad += (go @ cols.T).reshape(self.weights.shape)
        if self.bias is not None:
            self.bias_grad += go.sum(axis=1)
        grad_cols = (self.weights.reshape(self.out_channels, -1).T @ go).reshape(c, kh, kw, b, oh, ow)
        gx = np.zeros((padded_shape[1],) + (padded_shape[0],) + padded_shape[2:], dtype=grad_out.dtype)
        for dy in range(kh):
            for dx in range(kw):
                gx[:, :, dy : dy + s * oh : s, dx : dx + s * ow : s] += grad_cols[:, dy, dx]
        gx = gx.transpose(1, 0, 2, 3)
        if self.pad:
            gx = gx[:, :, self.pad : -self.pad, self.pad : -self.pad]
        return np.ascontiguousarray(gx)


class FixedPool(Layer):
    """Parameter-free max or average pooling over exactly tiling windows."""

    MODES = ("max", "average")

    def __init__(self, mode: str, window=2, stride=None, name: str = "pool"):
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {mode!r}")
        self.mode = mode
        self.window = _pair(window)
        self.stride = int(stride) if stride is not None else self.window[0]
        self.name = name
        self._saved = None
        self.last_argmax = None  # flat indices into the input, max mode only

    def forward(self, x, train: bool = True):
        b, c, h, w = x.shape
        wh, ww = self.window
        oh = pool_out_dim(h, wh, self.stride)
        ow = pool_out_dim(w, ww, self.stride)
        win = window_view(x, wh, ww, self.stride, self.stride)
        flat = win.reshape(b, c, oh, ow, wh * ww)
        if self.mode == "max":
            idx = flat.argmax(axis=-1)  # ties: first index in row-major scan
            out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
            iy = np.arange(oh)[:, None] * self.stride + idx // ww
            ix = np.arange(ow)[None, :] * self.stride + idx % ww
            bb = np.arange(b)[:, None, None, None]
            cc = np.arange(c)[None, :, None, None]
            self.last_argmax = ((bb * c + cc) * h + iy) * w + ix
            self._saved = ("max", x.shape, flat)
        else:
            out = flat.mean(axis=-1)
            self._saved = ("average", x.shape, None)
        return out

    def backward(self, grad_out):
        if self._saved is None:
            raise RuntimeError(f"{self.name}: backward without a stored forward")
        mode, in_shape, _ = self._saved
        b, c, h, w = in_shape
        wh, ww = self.window
        oh = pool_out_dim(h, wh, self.stride)
        ow = pool_out_dim(w, ww, self.stride)
        if grad_out.shape != (b, c, oh, ow):
            raise ValueError(f"{self.name}: grad_out shape {grad_out.shape} does not match forward")
        if mode == "max":
            gx = np.zeros(b * c * h * w, dtype=grad_out.dtype)
            np.add.at(gx, self.last_argmax.ravel(), grad_out.ravel())
            return gx.reshape(in_shape)
        share = grad_out / (wh * ww)
        grad_win = np.broadcast_to(share[..., None, None], (b, c, oh, ow, wh, ww))
        return scatter_windows(np.ascontiguousarray(grad_win), in_shape, self.stride, self.stride)

    def kink_margin(self):
        if self._saved is None or self._saved[0] != "max":
            return None
        flat = self._saved[2]
        if flat.shape[-1] < 2:
            return None
        top2 = np.partition(flat, -2, axis=-1)[..., -2:]
        return float(np.min(top2[..., 1] - top2[..., 0]))


class ReLU(Layer):
    def __init__(self, name: str = "relu"):
        self.name = name
        self._mask = None
        self._last_input = None

    def forward(self, x, train: bool = True):
        self._mask = x > 0
        self._last_input = x
        return np.maximum(x, 0)

    def backward(self, grad_out):
        if self._mask is None:
            raise RuntimeError(f"{self.name}: backward without a stored forward")
        if grad_out.shape != self._mask.shape:
            raise ValueError(f"{self.name}: grad_out shape does not match forward")
        return grad_out * self._mask

    def kink_margin(self):
        if self._last_input is None or self._last_input.size == 0:
            return None
        return float(np.min(np.abs(self._last_input)))


class BatchNorm2d(Layer):
    """Per-channel batch normalization: batch statistics while training,
    running statistics in eval mode."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 lr_factor: float = 1.0, wd_factor: float = 1.0,
                 dtype=np.float32, name: str = "bn"):
        if eps <= 0 or not (0.0 < momentum < 1.0):
            raise ValueError("eps must be > 0 and momentum in (0, 1)")
        self.channels = int(channels)
        self.eps = eps
        self.momentum = momentum
        self.lr_factor = lr_factor
        self.wd_factor = wd_factor
        self.name = name
        self.gamma = np.ones(self.channels, dtype=dtype)
        self.beta = np.zeros(self.channels, dtype=dtype)
        self.gamma_grad = np.zeros_like(self.gamma)
        self.beta_grad = np.zeros_like(self.beta)
        self.running_mean = np.zeros(self.channels, dtype=dtype)
        self.running_var = np.ones(self.channels, dtype=dtype)
        self._saved = None

    def param_groups(self):
        return [
            ParamGroup(f"{self.name}.gamma", self.gamma, self.gamma_grad, self.lr_factor, self.wd_factor),
            ParamGroup(f"{self.name}.beta", self.beta, self.beta_grad, self.lr_factor, self.wd_factor),
        ]

    def state_tensors(self):
        return super().state_tensors() + [
            (f"{self.name}.running_mean", self.running_mean),
            (f"{self.name}.running_var", self.running_var),
        ]

    def forward(self, x, train: bool = True):
        if x.shape[1] != self.channels:
            raise ValueError(f"{self.name}: expected {self.channels} channels, got {x.shape[1]}")
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean[...] = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var[...] = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._saved = (xhat, inv_std) if train else None
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, grad_out):
        if self._saved is None:
            raise RuntimeError(f"{self.name}: backward requires a training-mode forward")
        xhat, inv_std = self._saved
        if grad_out.shape != xhat.shape:
            raise ValueError(f"{self.name}: grad_out shape does not match forward")
        b, _, h, w = grad_out.shape
        n = b * h * w
        self.gamma_grad += (grad_out * xhat).sum(axis=(0, 2, 3))
        self.beta_grad += grad_out.sum(axis=(0, 2, 3))
        g = grad_out * self.gamma[None, :, None, None]
        sum_g = g.sum(axis=(0, 2, 3), keepdims=True)
        sum_gx = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return inv_std[None, :, None, None] * (g - sum_g / n - xhat * sum_gx / n)


class Flatten(Layer):
    def __init__(self, name: str = "flatten"):
        self.name = name
        self._in_shape = None

    def forward(self, x, train: bool = True):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._in_shape)


class Dense(Layer):
    def __init__(self, in_features, out_features, use_bias: bool = True,
                 lr_factor: float = 1.0, wd_factor: float = 1.0,
                 rng: np.random.Generator | None = None, dtype=np.float32, name: str = "fc"):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.lr_factor = lr_factor
        self.wd_factor = wd_factor
        self.name = name
        if rng is None:
            self.weights = np.zeros((self.in_features, self.out_features), dtype=dtype)
        else:
            self.weights = glorot_uniform(rng, (self.in_features, self.out_features),
                                          self.in_features, self.out_features, dtype=dtype)
        self.bias = np.zeros(self.out_features, dtype=dtype) if use_bias else None
        self.weights_grad = np.zeros_like(self.weights)
        self.bias_grad = np.zeros_like(self.bias) if use_bias else None
        self._x = None

    def param_groups(self):
        groups = [ParamGroup(f"{self.name}.weight", self.weights, self.weights_grad,
                             self.lr_factor, self.wd_factor)]
        if self.bias is not None:
            groups.append(ParamGroup(f"{self.name}.bias", self.bias, self.bias_grad,
                                     self.lr_factor, self.wd_factor))
        return groups

    def forward(self, x, train: bool = True):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"{self.name}: expected (batch, {self.in_features}), got {x.shape}")
        self._x = x
        out = x @ self.weights
        if self.bias is not None:
            out = out + self.bias
        return out

    def backward(self, grad_out):
        if self._x is None:
            raise RuntimeError(f"{self.name}: backward without a stored forward")
        if grad_out.shape != (self._x.shape[0], self.out_features):
            raise ValueError(f"{self.name}: grad_out shape does not match forward")
        self.weights_grad += self._x.T @ grad_out
        if self.bias is not None:
            self.bias_grad += grad_out.sum(axis=0)
        return grad_out @ self.weights.T


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    if logits.ndim != 2:
        raise ValueError(f"logits must be (batch, classes), got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels must be ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"label out of range [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, (grad / n).astype(logits.dtype)
