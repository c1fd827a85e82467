"""Layer kernels with hand-written reverse-mode gradients.

Image layers work on channel-major tensors ``(channels, batch, height,
width)``, which makes im2col copies row-contiguous and lets the conv matmul
write its output in place; ``GlobalAvgPool`` hands ``(batch, features)`` to
the dense layers.  ``forward`` returns the
output together with an opaque cache; ``backward`` consumes that cache,
returns the input gradient and *adds* parameter gradients into ``grads``.
Because caches are returned rather than stored, one layer object can be
applied several times per step (weight sharing) and its gradients sum.
"""

from __future__ import annotations

import numpy as np

from ..errors import BatchSizeError, ParameterError, ShapeError, StateError


def glorot_uniform(shape, fan_in, fan_out, rng, dtype):
    limit = np.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, *, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dy, cache, need_dx=True):
        raise NotImplementedError

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def spec(self) -> dict:
        return {"kind": self.kind}

    def _need_cache(self, cache):
        if cache is None:
            raise StateError(f"{self.kind}: backward called without a forward cache")


def _out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d_cnhw(x, weight, bias, stride=1, padding=1):
    """Cross-correlation on ``(C, B, H, W)`` input; ``weight`` is ``(F, C, k, k)``.

    Returns ``(y, cols)`` with ``y`` shaped ``(F, B, Ho, Wo)`` and ``cols`` the
    ``(C*k*k, B*Ho*Wo)`` patch matrix kept for the backward pass.
    """
    c, b, h, w = x.shape
    f, wc, k, k2 = weight.shape
    if wc != c or k != k2:
        raise ShapeError(f"conv weight {weight.shape} does not fit input channels {c}")
    ho, wo = _out_size(h, k, stride, padding), _out_size(w, k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {h}x{w} too small for kernel {k}, padding {padding}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    cols = np.empty((c, k, k, b, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(c * k * k, b * ho * wo)
    y = weight.reshape(f, -1) @ cols
    if bias is not None:
        y += bias[:, None]
    return y.reshape(f, b, ho, wo), cols


def conv2d_cnhw_backward(dy, cols, x_shape, weight, stride=1, padding=1, need_dx=True):
    """Gradients ``(dx, dweight, dbias)`` of :func:`conv2d_cnhw`.

    ``dx`` is None when ``need_dx`` is false (first layer of a stack).
    """
    c, b, h, w = x_shape
    f, _, k, _ = weight.shape
    ho, wo = dy.shape[2], dy.shape[3]
    d2 = dy.reshape(f, -1)
    dweight = (d2 @ cols.T).reshape(weight.shape)
    dbias = d2.sum(axis=1)
    if not need_dx:
        return None, dweight, dbias
    dcols = (weight.reshape(f, -1).T @ d2).reshape(c, k, k, b, ho, wo)
    dxp = np.zeros((c, b, h + 2 * padding, w + 2 * padding), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
    dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp
    return dx, dweight, dbias


def conv2d_forward(x, w, b=None, stride=1, padding=1):
    """Convolution on ``(batch, channel, height, width)`` input."""
    x = np.asarray(x)
    w = np.asarray(w)
    if x.ndim != 4:
        raise ShapeError(f"expected 4D (batch, channel, h, w) input, got {x.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(f"weight expects {w.shape[1]} channels, input has {x.shape[1]}")
    y, _ = conv2d_cnhw(np.ascontiguousarray(x.transpose(1, 0, 2, 3)), w, b, stride, padding)
    return np.ascontiguousarray(y.transpose(1, 0, 2, 3))


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, filters, kernel=3, stride=1, padding=None,
                 rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_channels, self.filters = in_channels, filters
        self.kernel, self.stride = kernel, stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in, fan_out = in_channels * kernel * kernel, filters * kernel * kernel
        self.params["weight"] = glorot_uniform((filters, in_channels, kernel, kernel),
                                               fan_in, fan_out, rng, dtype)
        self.params["bias"] = np.zeros(filters, dtype=dtype)
        self.zero_grad()

    def forward(self, x, *, train=False, rng=None):
        y, cols = conv2d_cnhw(x, self.params["weight"], self.params["bias"],
                              self.stride, self.padding)
        return y, (cols, x.shape)

    def backward(self, dy, cache, need_dx=True):
        self._need_cache(cache)
        cols, x_shape = cache
        dx, dw, db = conv2d_cnhw_backward(dy, cols, x_shape, self.params["weight"],
                                          self.stride, self.padding, need_dx)
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return dx

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "filters": self.filters,
                "kernel": self.kernel, "stride": self.stride, "padding": self.padding}


class BatchNorm2D(Layer):
    """Per-channel batch normalization over batch and spatial positions.

    The channel axis is axis 0 (see the module docstring).

    Running statistics track the population (biased) variance so that eval
    mode reproduces train mode exactly once the statistics have converged.
    """

    kind = "batchnorm2d"

    def __init__(self, channels, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grad()

    def _shape(self, x):
        return (-1,) + (1,) * (x.ndim - 1)

    def forward(self, x, *, train=False, rng=None):
        axes = tuple(range(1, x.ndim))
        shape = self._shape(x)
        gamma = self.params["gamma"].reshape(shape)
        beta = self.params["beta"].reshape(shape)
        if not train:
            inv = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            scale = (self.params["gamma"] * inv).reshape(shape)
            return (x - self.buffers["running_mean"].reshape(shape)) * scale + beta, None
        m = x.size // x.shape[0]
        if m < 2:
            raise BatchSizeError("batchnorm in train mode needs at least 2 values per channel")
        mean = x.mean(axis=axes)
        xc = x - mean.reshape(shape)
        var = (xc * xc).mean(axis=axes)
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = xc * inv.reshape(shape)
        mom = self.momentum
        rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
        rm[...] = (1 - mom) * rm + mom * mean
        rv[...] = (1 - mom) * rv + mom * var
        return xhat * gamma + beta, (xhat, inv)

    def backward(self, dy, cache, need_dx=True):
        self._need_cache(cache)
        xhat, inv = cache
        axes = tuple(range(1, dy.ndim))
        shape = self._shape(dy)
        m = dy.size // dy.shape[0]
        dbeta = dy.sum(axis=axes)
        dgamma = (dy * xhat).sum(axis=axes)
        self.grads["beta"] += dbeta
        self.grads["gamma"] += dgamma
        scale = (self.params["gamma"] * inv / m).reshape(shape)
        return scale * (m * dy - dbeta.reshape(shape) - xhat * dgamma.reshape(shape))

    def spec(self):
        return {"kind": self.kind, "channels": self.channels, "eps": self.eps,
                "momentum": self.momentum}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, *, train=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache, need_dx=True):
        self._need_cache(cache)
        return dy * cache


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1-p) in train mode."""

    kind = "dropout"

    def __init__(self, p):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ParameterError(f"dropout rate {p} outside [0, 1)")
        self.p = p

    def forward(self, x, *, train=False, rng=None):
        if not train or self.p == 0.0:
            return x, None
        if rng is None:
            raise StateError("dropout in train mode needs a random generator")
        keep = rng.random(x.shape) >= self.p
        scale = np.asarray(1.0 / (1.0 - self.p), dtype=x.dtype)
        mask = keep * scale
        return x * mask, mask

    def backward(self, dy, cache, need_dx=True):
        return dy if cache is None else dy * cache

    def spec(self):
        return {"kind": self.kind, "p": self.p}


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def forward(self, x, *, train=False, rng=None):
        return np.ascontiguousarray(x.mean(axis=(2, 3)).T), x.shape

    def backward(self, dy, cache, need_dx=True):
        self._need_cache(cache)
        c, b, h, w = cache
        return np.broadcast_to((dy.T / (h * w))[:, :, None, None], cache).copy()


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.params["weight"] = glorot_uniform((out_features, in_features),
                                               in_features, out_features, rng, dtype)
        self.params["bias"] = np.zeros(out_features, dtype=dtype)
        self.zero_grad()

    def forward(self, x, *, train=False, rng=None):
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} features, got {x.shape[-1]}")
        return x @ self.params["weight"].T + self.params["bias"], x

    def backward(self, dy, cache, need_dx=True):
        self._need_cache(cache)
        self.grads["weight"] += dy.T @ cache
        self.grads["bias"] += dy.sum(axis=0)
        return dy @ self.params["weight"]

    def spec(self):
        return {"kind": self.kind, "in_features": self.in_features,
                "out_features": self.out_features}


class Sequential:
    """Ordered layers with named parameters (``"<index>.<kind>.<param>"``)."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, *, train=False, rng=None):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, train=train, rng=rng)
            caches.append(cache)
        return x, caches

    def backward(self, dy, caches, need_input_grad=True):
        """Backpropagate ``dy``; returns the input gradient (None if not needed)."""
        if len(caches) != len(self.layers):
            raise StateError("cache list does not match the layer list")
        last = len(self.layers) - 1
        for i, (layer, cache) in enumerate(zip(reversed(self.layers), reversed(caches))):
            dy = layer.backward(dy, cache, need_dx=need_input_grad or i != last)
        return dy

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def _named(self, attr):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in getattr(layer, attr).items():
                out[f"{i}.{layer.kind}.{name}"] = arr
        return out

    def named_parameters(self):
        return self._named("params")

    def named_gradients(self):
        return self._named("grads")

    def named_buffers(self):
        return self._named("buffers")

    def load_tensor(self, key, value):
        idx, _kind, name = key.split(".", 2)
        layer = self.layers[int(idx)]
        store = layer.params if name in layer.params else layer.buffers
        if name not in store:
            raise KeyError(key)
        if store[name].shape != value.shape:
            raise ShapeError(f"{key}: shape {value.shape} != {store[name].shape}")
        store[name][...] = value

    def specs(self):
        return [layer.spec() for layer in self.layers]
