"""Learnable perceptron pooling, restructured multi-perceptron (MLP) pooling
and perceptron upscaling.

A pooling perceptron is a single neuron slid over the input exactly like a
fixed pooling window: at every output position it computes a weighted sum
of the W x H window plus an optional bias, followed by an identity or ReLU
activation. It acts depthwise: the same neuron (under GLOBAL sharing) maps
a C-channel input to a C-channel output, which is why its parameter cost is
just W*H + 1 regardless of channel width.

A layer may hold p = q*q perceptrons. Their p outputs at window position
(i, j) are restructured into a q x q spatial block, row-major by unit index:
unit k lands at (i*q + k//q, j*q + k mod q). With four units and stride two
the output tensor keeps the input's spatial size, so further perceptron
layers can be stacked on top, forming a small MLP inside the network
(MlpPoolStack). Run at stride 1 over a zero-padded input, u*u units expand
every position into a u x u block instead: a learned u-times upscaling
(PerceptronUpsample).

Weight sharing variants control how many independent perceptron instances
are created:
  GLOBAL       one instance shared over channels and positions
  PER_CHANNEL  one per input channel
  PER_FIELD    one per output (y, x) position, shared over channels
  PER_TENSOR   one per (channel, y, x) output position
Instance counts for the non-GLOBAL modes depend on the input shape and are
bound at first forward (or an explicit bind); changing the relevant shape
afterwards is an error.
"""

from __future__ import annotations

import enum
import math
import time

import numpy as np

from . import initializers
from .layers import Layer, pool_out_dim, scatter_windows, window_view, _pair
from .optim import ParamGroup


class Sharing(enum.Enum):
    GLOBAL = "global"
    PER_CHANNEL = "per_channel"
    PER_FIELD = "per_field"
    PER_TENSOR = "per_tensor"

    @classmethod
    def parse(cls, value) -> "Sharing":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown sharing mode {value!r}") from None


ACTIVATIONS = ("identity", "relu")


def unit_position(k: int, q: int, i: int, j: int) -> tuple[int, int]:
    """Output coordinate of unit k (row-major) at window position (i, j)."""
    if not 0 <= k < q * q:
        raise ValueError(f"unit {k} out of range for q={q}")
    return i * q + k // q, j * q + k % q


def restructure(units: np.ndarray, q: int) -> np.ndarray:
    """(B, C, q*q, oH, oW) unit outputs -> (B, C, oH*q, oW*q) output grid.

    Every output cell is written exactly once (the map is a bijection).
    """
    b, c, p, oh, ow = units.shape
    if q * q != p:
        raise ValueError(f"cannot restructure {p} units into a {q}x{q} block")
    blocks = units.reshape(b, c, q, q, oh, ow)
    return blocks.transpose(0, 1, 4, 2, 5, 3).reshape(b, c, oh * q, ow * q)


def unrestructure(grid: np.ndarray, q: int) -> np.ndarray:
    """Inverse of restructure: (B, C, oH*q, oW*q) -> (B, C, q*q, oH, oW)."""
    b, c, h, w = grid.shape
    if h % q or w % q:
        raise ValueError(f"grid {h}x{w} is not divisible into {q}x{q} blocks")
    oh, ow = h // q, w // q
    blocks = grid.reshape(b, c, oh, q, ow, q)
    return blocks.transpose(0, 1, 3, 5, 2, 4).reshape(b, c, q * q, oh, ow)


# einsum subscripts per sharing mode; win is (B,C,oH,oW,wh,ww), units (B,C,p,oH,oW)
_FWD = {
    Sharing.GLOBAL: "bcijyx,kyx->bckij",
    Sharing.PER_CHANNEL: "bcijyx,ckyx->bckij",
    Sharing.PER_FIELD: "bcijyx,ijkyx->bckij",
    Sharing.PER_TENSOR: "bcijyx,cijkyx->bckij",
}
_GRAD_W = {
    Sharing.GLOBAL: "bckij,bcijyx->kyx",
    Sharing.PER_CHANNEL: "bckij,bcijyx->ckyx",
    Sharing.PER_FIELD: "bckij,bcijyx->ijkyx",
    Sharing.PER_TENSOR: "bckij,bcijyx->cijkyx",
}
_GRAD_IN = {
    Sharing.GLOBAL: "kyx,bckij->bcijyx",
    Sharing.PER_CHANNEL: "ckyx,bckij->bcijyx",
    Sharing.PER_FIELD: "ijkyx,bckij->bcijyx",
    Sharing.PER_TENSOR: "cijkyx,bckij->bcijyx",
}


class _PerceptronWindowLayer(Layer):
    """Shared machinery for the pooling and upsampling variants."""

    def __init__(self, window, stride, units, sharing, use_bias, activation,
                 lr_factor, wd_factor, init, rng, dtype, name):
        self.window = _pair(window)
        self.stride = int(stride)
        self.units = int(units)
        self.sharing = Sharing.parse(sharing)
        self.use_bias = bool(use_bias)
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        self.activation = activation
        self.lr_factor = lr_factor
        self.wd_factor = wd_factor
        self.init = init
        self.dtype = dtype
        self.name = name
        self._rng = rng
        if self.units < 1:
            raise ValueError(f"units must be >= 1, got {self.units}")
        self.block = math.isqrt(self.units)
        if self.block * self.block != self.units:
            raise ValueError(f"units must be a perfect square for restructuring, got {self.units}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        self.weights = None  # (instances, units, wh, ww) once bound
        self.bias = None
        self.weights_grad = None
        self.bias_grad = None
        self._bound_key = None  # frozen (C, oH, oW) slice relevant to the mode
        self._saved = None

    # -- instantiation -----------------------------------------------------

    def _mode_key(self, c, oh, ow):
        if self.sharing is Sharing.GLOBAL:
            return ()
        if self.sharing is Sharing.PER_CHANNEL:
            return (c,)
        if self.sharing is Sharing.PER_FIELD:
            return (oh, ow)
        return (c, oh, ow)

    def instances_for(self, c, oh, ow) -> int:
        if self.sharing is Sharing.GLOBAL:
            return 1
        if self.sharing is Sharing.PER_CHANNEL:
            return c
        if self.sharing is Sharing.PER_FIELD:
            return oh * ow
        return c * oh * ow

    @property
    def instances(self) -> int:
        if self.weights is None:
            if self.sharing is Sharing.GLOBAL:
                return 1
            raise RuntimeError(f"{self.name}: {self.sharing.value} layer is not bound to an input shape yet")
        return self.weights.shape[0]

    def bind(self, channels: int, height: int, width: int) -> None:
        """Allocate and initialize per-instance weights for an input shape."""
        oh, ow = self._out_positions(height, width)
        key = self._mode_key(channels, oh, ow)
        if self.weights is not None:
            if key != self._bound_key:
                raise ValueError(
                    f"{self.name}: input shape {channels}x{height}x{width} does not match the "
                    f"shape this {self.sharing.value} layer was instantiated for"
                )
            return
        wh, ww = self.window
        n = self.instances_for(channels, oh, ow)
        self.weights = np.zeros((n, self.units, wh, ww), dtype=self.dtype)
        self.bias = np.zeros((n, self.units), dtype=self.dtype) if self.use_bias else None
        self.weights_grad = np.zeros_like(self.weights)
        self.bias_grad = np.zeros_like(self.bias) if self.use_bias else None
        self._bound_key = key
        initializers.apply_pool_init(self, self.init, self._rng)

    def param_groups(self):
        if self.weights is None:
            return []
        groups = [ParamGroup(f"{self.name}.weight", self.weights, self.weights_grad,
                             self.lr_factor, self.wd_factor)]
        if self.bias is not None:
            groups.append(ParamGroup(f"{self.name}.bias", self.bias, self.bias_grad,
                                     self.lr_factor, self.wd_factor))
        return groups

    # -- shared forward/backward over a window view -------------------------

    def _weight_view(self, c, oh, ow):
        wh, ww = self.window
        if self.sharing is Sharing.GLOBAL:
            return self.weights[0]
        if self.sharing is Sharing.PER_CHANNEL:
            return self.weights
        if self.sharing is Sharing.PER_FIELD:
            return self.weights.reshape(oh, ow, self.units, wh, ww)
        return self.weights.reshape(c, oh, ow, self.units, wh, ww)

    def _bias_view(self, c, oh, ow):
        if self.sharing is Sharing.GLOBAL:
            return self.bias[0][None, None, :, None, None]
        if self.sharing is Sharing.PER_CHANNEL:
            return self.bias[None, :, :, None, None]
        if self.sharing is Sharing.PER_FIELD:
            b = self.bias.reshape(oh, ow, self.units)
            return np.moveaxis(b, 2, 0)[None, None]
        b = self.bias.reshape(c, oh, ow, self.units)
        return np.moveaxis(b, 3, 1)[None]

    def _units_forward(self, win):
        b, c, oh, ow = win.shape[:4]
        pre = np.einsum(_FWD[self.sharing], win, self._weight_view(c, oh, ow), optimize=True)
        if self.bias is not None:
            pre = pre + self._bias_view(c, oh, ow)
        if self.activation == "relu":
            return np.maximum(pre, 0), pre > 0, pre
        return pre, None, pre

    def _units_backward(self, grad_units, win, mask):
        b, c, oh, ow = win.shape[:4]
        if mask is not None:
            grad_units = grad_units * mask
        gw = np.einsum(_GRAD_W[self.sharing], grad_units, win, optimize=True)
        self.weights_grad += gw.reshape(self.weights.shape)
        if self.bias is not None:
            if self.sharing is Sharing.GLOBAL:
                gb = grad_units.sum(axis=(0, 1, 3, 4))[None]
            elif self.sharing is Sharing.PER_CHANNEL:
                gb = grad_units.sum(axis=(0, 3, 4))
            elif self.sharing is Sharing.PER_FIELD:
                gb = np.moveaxis(grad_units.sum(axis=(0, 1)), 0, 2)
            else:
                gb = np.moveaxis(grad_units.sum(axis=0), 1, 3)
            self.bias_grad += gb.reshape(self.bias.shape)
        return np.einsum(_GRAD_IN[self.sharing], self._weight_view(c, oh, ow),
                         grad_units, optimize=True)

    def _backward_global_fused(self, grad_units, win, mask, in_shape, stride):
        # GLOBAL shares one weight grid over everything, so the per-window
        # gradient tensor never needs materializing: accumulate weight grads
        # with p*W*H reductions and scatter input grads with scaled adds.
        if mask is not None:
            grad_units = grad_units * mask
        wh, ww = self.window
        oh, ow = grad_units.shape[3:]
        w0 = self.weights[0]
        gx = np.zeros(in_shape, dtype=grad_units.dtype)
        for k in range(self.units):
            gu = grad_units[:, :, k]
            for dy in range(wh):
                for dx in range(ww):
                    self.weights_grad[0, k, dy, dx] += np.einsum(
                        "bcij,bcij->", gu, win[..., dy, dx], optimize=True
                    )
                    gx[:, :, dy : dy + stride * oh : stride,
                       dx : dx + stride * ow : stride] += w0[k, dy, dx] * gu
        if self.bias is not None:
            self.bias_grad[0] += grad_units.sum(axis=(0, 1, 3, 4))
        return gx

    def kink_margin(self):
        if self.activation != "relu" or self._saved is None:
            return None
        pre = self._saved[-1]
        return float(np.min(np.abs(pre)))

    def _out_positions(self, height, width):
        raise NotImplementedError


class PerceptronPool(_PerceptronWindowLayer):
    """Perceptron(s) as a pooling operator.

    With units == 1 this is plain perceptron pooling: output spatial size is
    (in - window)/stride + 1 per axis. With units == q*q the restructured
    output is q times larger than that, e.g. four units at stride two keep
    the input's spatial size.
    """

    def __init__(self, window=2, stride=None, units: int = 1, sharing=Sharing.GLOBAL,
                 use_bias: bool = True, activation: str = "identity",
                 lr_factor: float = 0.1, wd_factor: float = 0.0,
                 init: str = "average", rng: np.random.Generator | None = None,
                 dtype=np.float32, name: str = "ppool"):
        window = _pair(window)
        if stride is None:
            stride = window[0]
        super().__init__(window, stride, units, sharing, use_bias, activation,
                         lr_factor, wd_factor, init, rng, dtype, name)

    def _out_positions(self, height, width):
        wh, ww = self.window
        try:
            return pool_out_dim(height, wh, self.stride), pool_out_dim(width, ww, self.stride)
        except ValueError as e:
            raise ValueError(f"{self.name}: {e}") from None

    def output_shape(self, in_shape):
        b, c, h, w = in_shape
        oh, ow = self._out_positions(h, w)
        return (b, c, oh * self.block, ow * self.block)

    def forward(self, x, train: bool = True):
        b, c, h, w = x.shape
        self.bind(c, h, w)
        win = window_view(x, *self.window, self.stride, self.stride)
        units, mask, pre = self._units_forward(win)
        self._saved = (x.shape, win, mask, pre)
        return restructure(units, self.block)

    def backward(self, grad_out):
        if self._saved is None:
            raise RuntimeError(f"{self.name}: backward without a stored forward")
        in_shape, win, mask, _ = self._saved
        if grad_out.shape != self.output_shape(in_shape):
            raise ValueError(
                f"{self.name}: grad_out shape {grad_out.shape} does not match forward output "
                f"{self.output_shape(in_shape)}"
            )
        grad_units = unrestructure(grad_out, self.block)
        if self.sharing is Sharing.GLOBAL:
            return self._backward_global_fused(grad_units, win, mask, in_shape, self.stride)
        grad_win = self._units_backward(grad_units, win, mask)
        return scatter_windows(grad_win, in_shape, self.stride, self.stride)


class PerceptronUpsample(_PerceptronWindowLayer):
    """u*u perceptrons at stride 1 as a learned u-times spatial upscaling.

    The input is zero padded (left/top biased for even windows) so that the
    stride-1 window pass keeps the spatial size; restructuring the u*u unit
    outputs then expands every position into a u x u block.
    """

    def __init__(self, window=2, units: int = 4, sharing=Sharing.GLOBAL,
                 use_bias: bool = True, activation: str = "identity",
                 lr_factor: float = 0.1, wd_factor: float = 0.0,
                 init: str = "average", rng: np.random.Generator | None = None,
                 dtype=np.float32, name: str = "pup"):
        super().__init__(window, 1, units, sharing, use_bias, activation,
                         lr_factor, wd_factor, init, rng, dtype, name)
        if self.block < 2:
            raise ValueError(f"upsampling needs units = u*u with u >= 2, got {units}")

    def _pads(self):
        wh, ww = self.window
        return (wh // 2, (wh - 1) // 2), (ww // 2, (ww - 1) // 2)

    def _out_positions(self, height, width):
        return height, width

    def output_shape(self, in_shape):
        b, c, h, w = in_shape
        return (b, c, h * self.block, w * self.block)

    def forward(self, x, train: bool = True):
        b, c, h, w = x.shape
        self.bind(c, h, w)
        (pt, pb), (pl, pr) = self._pads()
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        win = window_view(xp, *self.window, 1, 1)
        units, mask, pre = self._units_forward(win)
        self._saved = (x.shape, xp.shape, win, mask, pre)
        return restructure(units, self.block)

    def backward(self, grad_out):
        if self._saved is None:
            raise RuntimeError(f"{self.name}: backward without a stored forward")
        in_shape, padded_shape, win, mask, _ = self._saved
        if grad_out.shape != self.output_shape(in_shape):
            raise ValueError(
                f"{self.name}: grad_out shape {grad_out.shape} does not match forward output "
                f"{self.output_shape(in_shape)}"
            )
        grad_units = unrestructure(grad_out, self.block)
        if self.sharing is Sharing.GLOBAL:
            gxp = self._backward_global_fused(grad_units, win, mask, padded_shape, 1)
        else:
            grad_win = self._units_backward(grad_units, win, mask)
            gxp = scatter_windows(grad_win, padded_shape, 1, 1)
        (pt, _), (pl, _) = self._pads()
        _, _, h, w = in_shape
        return gxp[:, :, pt : pt + h, pl : pl + w]


class MlpPoolStack(Layer):
    """Ordered perceptron pooling layers whose restructured outputs feed the
    next layer, e.g. NN-4-1 = [4 units of 2x2/2, 1 unit of 2x2/2]."""

    def __init__(self, layers: list[PerceptronPool], name: str = "mlppool"):
        if not layers:
            raise ValueError("stack needs at least one layer")
        self.layers = list(layers)
        self.name = name
        for i, layer in enumerate(self.layers):
            if not layer.name or layer.name.startswith("ppool"):
                layer.name = f"{name}.{i}"

    def bind(self, channels, height, width):
        shape = (1, channels, height, width)
        for i, layer in enumerate(self.layers):
            try:
                layer.bind(shape[1], shape[2], shape[3])
                shape = layer.output_shape(shape)
            except ValueError as e:
                raise ValueError(f"{self.name}: shape chain broken at layer {i}: {e}") from None

    def output_shape(self, in_shape):
        shape = in_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x, train: bool = True):
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train)
            except ValueError as e:
                raise ValueError(f"{self.name}: shape chain broken at layer {i}: {e}") from None
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def param_groups(self):
        return [g for layer in self.layers for g in layer.param_groups()]

    def kink_margin(self):
        margins = [m for layer in self.layers if (m := layer.kink_margin()) is not None]
        return min(margins) if margins else None


def param_count(obj) -> int:
    """Learnable-parameter count of a perceptron pooling layer or stack:
    instances * units * (W*H + 1), the +1 dropped without a bias term."""
    if isinstance(obj, MlpPoolStack):
        return sum(param_count(layer) for layer in obj.layers)
    if isinstance(obj, _PerceptronWindowLayer):
        wh, ww = obj.window
        return obj.instances * obj.units * (wh * ww + (1 if obj.use_bias else 0))
    raise TypeError(f"param_count expects a perceptron pooling layer or stack, got {type(obj)!r}")


def complexity_probe(layer_factory, sizes, batch: int = 2, channels: int = 8,
                     repeats: int = 3, min_seconds: float = 0.01, seed: int = 0):
    """Wall-clock forward time per spatial size.

    Returns one row per size: {"size", "area", "seconds", "reliable"}.
    Each measurement loops the forward enough times to clear the timer
    floor; rows that still land under it are flagged unreliable so a fit
    can exclude them.
    """
    sizes = [int(s) for s in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"sizes must be strictly increasing, got {sizes}")
    rng = np.random.default_rng(seed)
    rows = []
    for s in sizes:
        layer = layer_factory()
        x = rng.standard_normal((batch, channels, s, s)).astype(np.float32)
        layer.forward(x)  # warm-up and bind
        t0 = time.perf_counter()
        layer.forward(x)
        once = max(time.perf_counter() - t0, 1e-9)
        loops = max(1, int(math.ceil(min_seconds / once)))
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            for _ in range(loops):
                layer.forward(x)
            best = min(best, (time.perf_counter() - t0) / loops)
        rows.append({"size": s, "area": s * s, "seconds": best, "reliable": best >= 2e-5})
    return rows


def loglog_slope(rows) -> float:
    """Least-squares slope of log(seconds) vs log(area), unreliable rows
    (measurement floor) excluded."""
    pts = [(r["area"], r["seconds"]) for r in rows if r.get("reliable", True)]
    if len(pts) < 2:
        raise ValueError("need at least two reliable measurements to fit a slope")
    xs = np.log([p[0] for p in pts])
    ys = np.log([p[1] for p in pts])
    return float(np.polyfit(xs, ys, 1)[0])
