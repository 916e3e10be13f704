"""Layers for the 2D snippet streams and the 3D volume streams.

Two views of the same maths live here:

* single-sample functional kernels (``conv2d``, ``conv3d``, ``maxpool3d``, ...)
  that take one ``[C, ...]`` tensor, and
* batched layer objects used by :class:`Network`, which cache what they need
  for ``backward``.

Convolution is cross-correlation (no kernel flip). Pooling windows equal their
strides and drop trailing elements that do not fill a window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError, ShapeError, StateError
from .tensor import get_dtype

KINDS = (
    "conv2d", "conv3d", "maxpool2d", "maxpool3d", "relu",
    "fully_connected", "softmax", "dropout", "batch_norm",
)

# cap on the im2col buffer (elements) built per chunk of the batch
_IM2COL_BUDGET = 24_000_000


# ---------------------------------------------------------------------------
# kernels on batches: x is [N, C, *spatial]
# ---------------------------------------------------------------------------

def _out_size(size: int, k: int, s: int, p: int) -> int:
    span = size + 2 * p - k
    if span < 0:
        raise ShapeError(f"kernel {k} larger than padded input {size + 2 * p}")
    if span % s:
        raise ShapeError(
            f"non-integral output size: ({size} + 2*{p} - {k}) / {s} is not whole")
    return span // s + 1


def _pad(x: np.ndarray, pad: Sequence[int]) -> np.ndarray:
    if not any(pad):
        return x
    return np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pad])


def _windows(xp: np.ndarray, kernel: Sequence[int], stride: Sequence[int]) -> np.ndarray:
    nd = len(kernel)
    view = sliding_window_view(xp, tuple(kernel), axis=tuple(range(2, 2 + nd)))
    index = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    return view[index]


def _im2col(xp: np.ndarray, kernel, stride) -> np.ndarray:
    """Patch matrix ``[N, *S', C * prod(kernel)]`` of padded input ``xp``."""
    nd = len(kernel)
    win = _windows(xp, kernel, stride)  # [N, C, *S', *k]
    order = [0] + list(range(2, 2 + nd)) + [1] + list(range(2 + nd, 2 + 2 * nd))
    cols = win.transpose(order)
    return cols.reshape(cols.shape[:1 + nd] + (-1,))


def _chunks(n: int, per_sample: int):
    step = max(1, _IM2COL_BUDGET // max(per_sample, 1))
    return [slice(i, min(i + step, n)) for i in range(0, n, step)]


def _correlate(xp: np.ndarray, w: np.ndarray, stride: Sequence[int]) -> np.ndarray:
    """Valid cross-correlation of padded ``xp`` [N,C,*S] with ``w`` [K,C,*k]."""
    nd = w.ndim - 2
    wm = w.reshape(w.shape[0], -1)
    parts = []
    out_sp = None
    for sl in _chunks(xp.shape[0], _patch_count(xp.shape, w.shape, stride)):
        cols = _im2col(xp[sl], w.shape[2:], stride)
        out_sp = cols.shape[1:1 + nd]
        parts.append(np.moveaxis(cols @ wm.T, -1, 1))
    return np.concatenate(parts) if len(parts) > 1 else np.ascontiguousarray(parts[0])


def _patch_count(x_shape, w_shape, stride) -> int:
    sp = [(n - k) // s + 1 for n, k, s in zip(x_shape[2:], w_shape[2:], stride)]
    return int(np.prod(sp)) * int(np.prod(w_shape[1:]))


def conv_forward(x, w, b, stride, pad, keep_cols=False):
    """Batched convolution.

    Returns ``(out, cache)``; ``cache`` holds the padded input shape and, when
    ``keep_cols`` is set, the patch matrix reused by :func:`conv_backward`.
    """
    nd = w.ndim - 2
    if x.ndim != nd + 2:
        raise ShapeError(f"expected {nd + 2}-d batch input, got shape {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    for size, k, s, p in zip(x.shape[2:], w.shape[2:], stride, pad):
        _out_size(size, k, s, p)
    xp = _pad(x, pad)
    wm = w.reshape(w.shape[0], -1)
    if keep_cols:
        cols = np.ascontiguousarray(_im2col(xp, w.shape[2:], stride))
        out = np.moveaxis(cols @ wm.T, -1, 1)
    else:
        cols = None
        out = _correlate(xp, w, stride)
    out += b.reshape((1, -1) + (1,) * nd)
    return out, (xp.shape, cols)


def conv_backward(g, cache, w, stride, pad, input_grad=True):
    """Gradients of a batched convolution given upstream ``g`` [N,K,*S']."""
    xp_shape, cols = cache
    nd = w.ndim - 2
    kernel = w.shape[2:]
    db = g.sum(axis=(0,) + tuple(range(2, 2 + nd)))
    gm = np.moveaxis(g, 1, -1).reshape(-1, w.shape[0])  # [N*M, K]
    dw = (gm.T @ cols.reshape(gm.shape[0], -1)).reshape(w.shape)
    if not input_grad:
        return None, dw, db
    # col2im: scatter each patch-gradient column back onto its input offset
    dcols = (gm @ w.reshape(w.shape[0], -1)).reshape(
        g.shape[:1] + g.shape[2:] + (w.shape[1],) + tuple(kernel))
    dxp = np.zeros(xp_shape, dtype=g.dtype)
    out_sp = g.shape[2:]
    for offset in np.ndindex(*kernel):
        target = (slice(None), slice(None)) + tuple(
            slice(o, o + (n - 1) * s + 1, s) for o, n, s in zip(offset, out_sp, stride))
        dxp[target] += np.moveaxis(dcols[(Ellipsis,) + offset], -1, 1)
    crop = tuple(slice(p, n - p) for p, n in zip(pad, xp_shape[2:]))
    return dxp[(slice(None), slice(None)) + crop], dw, db


def _pool_check(x, window):
    sp = x.shape[2:]
    if len(sp) != len(window):
        raise ShapeError(f"pooling window {tuple(window)} does not match input shape {x.shape}")
    for size, k in zip(sp, window):
        if k > size:
            raise ShapeError(f"pooling window {tuple(window)} larger than input axes {sp}")
    return [size // k for size, k in zip(sp, window)]


def _pool_slices(outs, window):
    # one strided view per in-window offset, visited in row-major order
    for offset in np.ndindex(*window):
        yield (slice(None), slice(None)) + tuple(
            slice(o, o + n * k, k) for o, n, k in zip(offset, outs, window))


def maxpool_forward(x, window):
    """Batched max pooling; returns ``(out, outs)`` where ``outs`` is the pooled size."""
    outs = _pool_check(x, window)
    out = None
    for sl in _pool_slices(outs, window):
        out = x[sl].copy() if out is None else np.maximum(out, x[sl], out=out)
    return out, outs


def maxpool_backward(g, x, out, window):
    """Route ``g`` to the first maximum of each window (a valid subgradient on ties)."""
    outs = list(out.shape[2:])
    dx = np.zeros(x.shape, dtype=g.dtype)
    taken = np.zeros(out.shape, dtype=bool)
    for sl in _pool_slices(outs, window):
        hit = (x[sl] == out) & ~taken
        dx[sl] = np.where(hit, g, 0)
        taken |= hit
    return dx


def _softmax_rows(f: np.ndarray) -> np.ndarray:
    z = f - f.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# single-sample functional API
# ---------------------------------------------------------------------------

def _tuple(v, n):
    if np.isscalar(v):
        return (int(v),) * n
    v = tuple(int(a) for a in v)
    if len(v) != n:
        raise ShapeError(f"expected {n} values, got {v}")
    return v


def conv2d(input, weights, bias, stride=1, pad=0):
    """Cross-correlate ``input`` [C,H,W] with ``weights`` [K,C,kh,kw]."""
    if input.ndim != 3 or weights.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] and [K,C,kh,kw], got {input.shape}, {weights.shape}")
    out, _ = conv_forward(input[None], weights, np.asarray(bias), _tuple(stride, 2), _tuple(pad, 2))
    return out[0]


def conv3d(input, weights, bias, stride=1, pad=0):
    """Cross-correlate ``input`` [C,T,H,W] with ``weights`` [K,C,kt,kh,kw]."""
    if input.ndim != 4 or weights.ndim != 5:
        raise ShapeError(f"conv3d expects [C,T,H,W] and [K,C,kt,kh,kw], got {input.shape}, {weights.shape}")
    out, _ = conv_forward(input[None], weights, np.asarray(bias), _tuple(stride, 3), _tuple(pad, 3))
    return out[0]


def relu(input):
    return np.maximum(input, 0)


def maxpool3d(input, window=(2, 2, 2)):
    """Max over non-overlapping ``window`` blocks of a [C,T,H,W] tensor."""
    if input.ndim != 4:
        raise ShapeError(f"maxpool3d expects [C,T,H,W], got {input.shape}")
    out, _ = maxpool_forward(input[None], _tuple(window, 3))
    return out[0]


def maxpool2d(input, window=(2, 2)):
    if input.ndim != 3:
        raise ShapeError(f"maxpool2d expects [C,H,W], got {input.shape}")
    out, _ = maxpool_forward(input[None], _tuple(window, 2))
    return out[0]


def fully_connected(input, weights, bias):
    x = np.ravel(input)
    if weights.ndim != 2 or weights.shape[1] != x.size or bias.shape != (weights.shape[0],):
        raise ShapeError(
            f"fully_connected: input {x.size}, weights {weights.shape}, bias {bias.shape}")
    return weights @ x + bias


def softmax(f):
    """Numerically stable softmax along the last axis."""
    return _softmax_rows(np.asarray(f))


def dropout(input, keep_p, mode="train", rng=None):
    """Inverted dropout: identity in eval mode, rescaled Bernoulli mask in train."""
    if not 0.0 < keep_p <= 1.0:
        raise ParameterError(f"keep probability must be in (0, 1], got {keep_p}")
    if mode == "eval" or keep_p == 1.0:
        return input
    if rng is None:
        rng = np.random.default_rng()
    mask = rng.random(input.shape) < keep_p
    return input * mask / np.asarray(keep_p, dtype=input.dtype)


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5


def batch_norm(batch, state: BatchNormState, mode="train"):
    """Per-channel normalisation over a batch ``[N, C, ...]``.

    In train mode the batch statistics are used and the running estimates
    updated in place; in eval mode the running estimates are used.
    """
    x = np.asarray(batch)
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if mode == "train":
        if x.shape[0] < 2:
            raise ParameterError("batch_norm in train mode needs a batch of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        state.running_mean *= state.momentum
        state.running_mean += (1 - state.momentum) * mean
        state.running_var *= state.momentum
        state.running_var += (1 - state.momentum) * var
    else:
        mean, var = state.running_mean, state.running_var
    xhat = (x - mean.reshape(bshape)) / np.sqrt(var.reshape(bshape) + state.eps)
    return xhat * state.gamma.reshape(bshape) + state.beta.reshape(bshape)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class LayerSpec:
    kind: str
    out_channels: int | None = None  # conv filters / fc outputs
    kernel: tuple[int, ...] | None = None
    stride: tuple[int, ...] | None = None
    pad: tuple[int, ...] | None = None
    window: tuple[int, ...] | None = None
    keep_prob: float = 0.5
    momentum: float = 0.9
    eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown layer kind {self.kind!r}")
        for name in ("kernel", "stride", "window"):
            v = getattr(self, name)
            if v is not None and any(int(a) < 1 for a in v):
                raise ParameterError(f"{self.kind}: {name} entries must be >= 1, got {v}")
        if self.pad is not None and any(int(a) < 0 for a in self.pad):
            raise ParameterError(f"{self.kind}: padding must be >= 0, got {self.pad}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ParameterError(f"keep probability must be in (0, 1], got {self.keep_prob}")
        if self.eps <= 0:
            raise ParameterError("batch-norm epsilon must be positive")


def conv_spec(ndim, out_channels, kernel=3, stride=1, pad=1) -> LayerSpec:
    return LayerSpec(f"conv{ndim}d", out_channels=out_channels, kernel=_tuple(kernel, ndim),
                     stride=_tuple(stride, ndim), pad=_tuple(pad, ndim))


@dataclass
class NetworkConfig:
    """Layer stack plus the per-sample input shape ``(C, [T,] H, W)``."""

    layers: list[LayerSpec]
    input_shape: tuple[int, ...]
    num_classes: int

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        shapes = self.shapes()
        if shapes[-1] != (self.num_classes,):
            raise ShapeError(
                f"network emits shape {shapes[-1]}, expected ({self.num_classes},)")

    def shapes(self) -> list[tuple[int, ...]]:
        """Per-sample activation shape after each layer (input first)."""
        shape = self.input_shape
        out = [shape]
        for i, spec in enumerate(self.layers):
            try:
                shape = _infer(spec, shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({spec.kind}): {exc}") from None
            out.append(shape)
        return out


def _infer(spec: LayerSpec, shape):
    kind = spec.kind
    if kind in ("conv2d", "conv3d"):
        nd = 2 if kind == "conv2d" else 3
        if len(shape) != nd + 1:
            raise ShapeError(f"expects {nd + 1}-d input, got {shape}")
        sp = tuple(_out_size(n, k, s, p) for n, k, s, p in
                   zip(shape[1:], spec.kernel, spec.stride, spec.pad))
        return (spec.out_channels,) + sp
    if kind in ("maxpool2d", "maxpool3d"):
        nd = 2 if kind == "maxpool2d" else 3
        if len(shape) != nd + 1 or len(spec.window) != nd:
            raise ShapeError(f"expects {nd + 1}-d input, got {shape}")
        if any(k > n for k, n in zip(spec.window, shape[1:])):
            raise ShapeError(f"window {spec.window} larger than input {shape}")
        return (shape[0],) + tuple(n // k for n, k in zip(shape[1:], spec.window))
    if kind == "fully_connected":
        return (spec.out_channels,)
    return shape


# ---------------------------------------------------------------------------
# batched layer objects
# ---------------------------------------------------------------------------

class Param:
    """A trainable tensor with its gradient accumulator."""

    def __init__(self, name: str, value: np.ndarray, decay: bool = True):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.decay = decay

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape})"


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: list[Param] = []
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, g, input_grad=True):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called without a stored training forward pass")
        return self._cache


class Conv(Layer):
    def __init__(self, ndim, in_ch, spec: LayerSpec, rng, dtype, name):
        super().__init__()
        self.kind = spec.kind
        self.stride, self.pad = spec.stride, spec.pad
        k = spec.kernel
        fan_in = in_ch * int(np.prod(k))
        fan_out = spec.out_channels * int(np.prod(k))
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, (spec.out_channels, in_ch) + tuple(k)).astype(dtype)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(spec.out_channels, dtype=dtype), decay=False)
        self.params = [self.weight, self.bias]

    def forward(self, x, train=False):
        out, cache = conv_forward(x, self.weight.value, self.bias.value, self.stride, self.pad,
                                  keep_cols=train)
        self._cache = cache if train else None
        return out

    def backward(self, g, input_grad=True):
        cache = self._cached()
        dx, dw, db = conv_backward(g, cache, self.weight.value, self.stride, self.pad, input_grad)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class MaxPool(Layer):
    def __init__(self, spec: LayerSpec):
        super().__init__()
        self.kind = spec.kind
        self.window = tuple(spec.window)

    def forward(self, x, train=False):
        out, _ = maxpool_forward(x, self.window)
        self._cache = (x, out) if train else None
        return out

    def backward(self, g, input_grad=True):
        x, out = self._cached()
        return maxpool_backward(g, x, out, self.window)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._cache = (x > 0) if train else None
        return np.maximum(x, 0)

    def backward(self, g, input_grad=True):
        return g * self._cached()


class Dense(Layer):
    kind = "fully_connected"

    def __init__(self, n_in, spec: LayerSpec, rng, dtype, name):
        super().__init__()
        bound = math.sqrt(6.0 / (n_in + spec.out_channels))
        w = rng.uniform(-bound, bound, (spec.out_channels, n_in)).astype(dtype)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(spec.out_channels, dtype=dtype), decay=False)
        self.params = [self.weight, self.bias]

    def forward(self, x, train=False):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.weight.value.shape[1]:
            raise ShapeError(
                f"fully_connected expects {self.weight.value.shape[1]} inputs, got {flat.shape[1]}")
        self._cache = (flat, x.shape) if train else None
        return flat @ self.weight.value.T + self.bias.value

    def backward(self, g, input_grad=True):
        flat, shape = self._cached()
        self.weight.grad += g.T @ flat
        self.bias.grad += g.sum(axis=0)
        if not input_grad:
            return None
        return (g @ self.weight.value).reshape(shape)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, train=False):
        s = _softmax_rows(x)
        self._cache = s if train else None
        return s

    def backward(self, g, input_grad=True):
        s = self._cached()
        return s * (g - (g * s).sum(axis=-1, keepdims=True))


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, spec: LayerSpec, rng):
        super().__init__()
        self.keep = spec.keep_prob
        self.rng = rng

    def forward(self, x, train=False):
        if not train or self.keep == 1.0:
            self._cache = np.ones((), dtype=x.dtype) if train else None
            return x
        mask = (self.rng.random(x.shape) < self.keep).astype(x.dtype) / x.dtype.type(self.keep)
        self._cache = mask
        return x * mask

    def backward(self, g, input_grad=True):
        return g * self._cached()


class BatchNorm(Layer):
    kind = "batch_norm"

    def __init__(self, channels, spec: LayerSpec, dtype, name):
        super().__init__()
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype), decay=False)
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype), decay=False)
        self.params = [self.gamma, self.beta]
        self.state = BatchNormState(self.gamma.value, self.beta.value,
                                    np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype),
                                    spec.momentum, spec.eps)
        self.buffers = {f"{name}.running_mean": self.state.running_mean,
                        f"{name}.running_var": self.state.running_var}

    def forward(self, x, train=False):
        if not train:
            self._cache = None
            return batch_norm(x, self.state, "eval")
        if x.shape[0] < 2:
            raise ParameterError("batch_norm in train mode needs a batch of at least 2")
        axes = (0,) + tuple(range(2, x.ndim))
        bshape = (1, -1) + (1,) * (x.ndim - 2)
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        s = self.state
        s.running_mean *= s.momentum
        s.running_mean += (1 - s.momentum) * mean
        s.running_var *= s.momentum
        s.running_var += (1 - s.momentum) * var
        inv = 1.0 / np.sqrt(var + s.eps)
        xhat = (x - mean.reshape(bshape)) * inv.reshape(bshape)
        self._cache = (xhat, inv, axes, bshape)
        return xhat * self.gamma.value.reshape(bshape) + self.beta.value.reshape(bshape)

    def backward(self, g, input_grad=True):
        xhat, inv, axes, bshape = self._cached()
        self.gamma.grad += (g * xhat).sum(axis=axes)
        self.beta.grad += g.sum(axis=axes)
        if not input_grad:
            return None
        m = g.size // g.shape[1]
        gx = g * self.gamma.value.reshape(bshape)
        return (inv.reshape(bshape) / m) * (
            m * gx - gx.sum(axis=axes).reshape(bshape)
            - xhat * (gx * xhat).sum(axis=axes).reshape(bshape))

    def load_buffers(self):
        # keep the state view pointing at the (possibly replaced) arrays
        self.state.gamma = self.gamma.value
        self.state.beta = self.beta.value


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

class Network:
    """A feed-forward stack built from a :class:`NetworkConfig`."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=None):
        self.config = config
        self.dtype = np.dtype(dtype or get_dtype())
        rng = np.random.default_rng(seed)
        shapes = config.shapes()
        self.layers: list[Layer] = []
        for i, spec in enumerate(config.layers):
            name = f"layer{i}"
            in_shape = shapes[i]
            if spec.kind in ("conv2d", "conv3d"):
                layer = Conv(len(in_shape) - 1, in_shape[0], spec, rng, self.dtype, name)
            elif spec.kind in ("maxpool2d", "maxpool3d"):
                layer = MaxPool(spec)
            elif spec.kind == "relu":
                layer = ReLU()
            elif spec.kind == "fully_connected":
                layer = Dense(int(np.prod(in_shape)), spec, rng, self.dtype, name)
            elif spec.kind == "softmax":
                layer = Softmax()
            elif spec.kind == "dropout":
                layer = Dropout(spec, np.random.default_rng([seed, i]))
            else:
                layer = BatchNorm(in_shape[0], spec, self.dtype, name)
            self.layers.append(layer)
        self._trained_forward = False

    def parameters(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params]

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            out.update(layer.buffers)
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Batched forward pass: ``x`` is ``[N, *input_shape]``; returns ``[N, l]``."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.config.input_shape:
            raise ShapeError(
                f"input shape {x.shape[1:]} does not match network input {self.config.input_shape}")
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        self._trained_forward = train
        return x

    def backward(self, grad: np.ndarray, input_grad: bool = True) -> np.ndarray | None:
        """Accumulate parameter gradients for the last training forward pass."""
        if not self._trained_forward:
            raise StateError("backward requires a preceding forward pass in train mode")
        g = np.asarray(grad, dtype=self.dtype)
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            g = self.layers[i].backward(g, input_grad=input_grad or i > 0)
        return g

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {p.name: p.value for p in self.parameters()}
        out.update(self.buffers())
        return out

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(tensors))
        if missing:
            raise ShapeError(f"checkpoint lacks tensors: {', '.join(missing)}")
        for name, target in own.items():
            src = tensors[name]
            if src.shape != target.shape:
                raise ShapeError(f"{name}: checkpoint shape {src.shape} != network {target.shape}")
            target[...] = src


def forward(net: Network, input: np.ndarray, mode: str = "eval") -> np.ndarray:
    """Logits for one sample ``[C, ...]`` (or a batch ``[N, C, ...]``)."""
    single = input.ndim == len(net.config.input_shape)
    x = input[None] if single else input
    out = net.forward(x, train=(mode == "train"))
    return out[0] if single else out


def backward(net: Network, upstream_grad: np.ndarray) -> np.ndarray:
    """Fill ``net``'s gradient buffers; returns the input gradient."""
    g = upstream_grad[None] if upstream_grad.ndim == 1 else upstream_grad
    dx = net.backward(g, input_grad=True)
    return dx[0] if upstream_grad.ndim == 1 else dx


# ---------------------------------------------------------------------------
# stock topologies
# ---------------------------------------------------------------------------

def stream2d_config(in_channels: int, size: int | tuple[int, int], num_classes: int,
                    widths: Sequence[int] = (8, 16, 32), hidden: int = 0,
                    keep_prob: float = 1.0, batch_norm: bool = False) -> NetworkConfig:
    """conv-relu-pool blocks followed by a classifier, for RGB or stacked-flow snippets."""
    h, w = _tuple(size, 2)
    layers: list[LayerSpec] = []
    for width in widths:
        layers.append(conv_spec(2, width))
        if batch_norm:
            layers.append(LayerSpec("batch_norm"))
        layers += [LayerSpec("relu"), LayerSpec("maxpool2d", window=(2, 2))]
    layers += _head(hidden, keep_prob, num_classes)
    return NetworkConfig(layers, (in_channels, h, w), num_classes)


def stream3d_config(in_channels: int, frames: int, size: int | tuple[int, int],
                    num_classes: int, widths: Sequence[int] = (8, 8, 16, 16, 32, 32, 32, 32),
                    hidden: int = 64, keep_prob: float = 1.0,
                    batch_norm: bool = False) -> NetworkConfig:
    """Eight 3x3x3 conv layers with five pools (first pool keeps time)."""
    if len(widths) != 8:
        raise ParameterError(f"the 3D stream has eight conv layers, got {len(widths)} widths")
    h, w = _tuple(size, 2)
    pool_after = {0: (1, 2, 2), 1: (2, 2, 2), 3: (2, 2, 2), 5: (2, 2, 2), 7: (2, 2, 2)}
    layers: list[LayerSpec] = []
    for i, width in enumerate(widths):
        layers.append(conv_spec(3, width))
        if batch_norm:
            layers.append(LayerSpec("batch_norm"))
        layers.append(LayerSpec("relu"))
        if i in pool_after:
            layers.append(LayerSpec("maxpool3d", window=pool_after[i]))
    layers += _head(hidden, keep_prob, num_classes)
    return NetworkConfig(layers, (in_channels, frames, h, w), num_classes)


def _head(hidden, keep_prob, num_classes):
    layers = []
    if hidden:
        layers += [LayerSpec("fully_connected", out_channels=hidden), LayerSpec("relu")]
    if keep_prob < 1.0:
        layers.append(LayerSpec("dropout", keep_prob=keep_prob))
    layers.append(LayerSpec("fully_connected", out_channels=num_classes))
    return layers
