"""Differentiable layers with explicit forward/backward passes.

Each layer caches what its backward pass needs on forward and raises if
backward is called first.  Convolution gradients are expressed through
the same valid cross-correlation kernels used by the forward passes, so
both compute backends cover training as well as inference.  All layers
work in whatever float dtype the containing graph was built with; 64-bit
graphs exist for finite-difference verification.
"""

from __future__ import annotations

import numpy as np

from .. import backend


class Param:
    """One trainable tensor with its gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = np.ascontiguousarray(data)
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _same_pad(k: int) -> tuple[int, int]:
    return (k - 1) // 2, k - 1 - (k - 1) // 2


class Layer:
    """Base: subclasses define kind, forward, backward, and parameters."""

    kind = "base"

    def __init__(self, name: str):
        self.name = name
        self._cache = None

    def params(self) -> dict:
        return {}

    def buffers(self) -> dict:
        """Non-trainable state that still belongs in checkpoints."""
        return {}

    def forward(self, x, train: bool, rng):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(
                f"layer {self.name}: backward called before forward")
        return self._cache


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng, dtype, name="dense"):
        super().__init__(name)
        self.w = Param(kaiming_uniform(rng, (n_in, n_out), n_in, dtype))
        self.b = Param(np.zeros(n_out, dtype=dtype))

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x, train, rng):
        if x.ndim != 2 or x.shape[1] != self.w.shape[0]:
            raise ValueError(
                f"expected (B, {self.w.shape[0]}), got {x.shape}")
        self._cache = x
        return x @ self.w.data + self.b.data

    def backward(self, dy):
        x = self._need_cache()
        self.w.grad += x.T @ dy
        self.b.grad += dy.sum(axis=0)
        return dy @ self.w.data.T


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, c_in: int, c_out: int, kh: int, kw: int, rng, dtype,
                 padding="same", name="conv2d"):
        super().__init__(name)
        if padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {padding!r}")
        self.padding = padding
        fan_in = c_in * kh * kw
        self.w = Param(kaiming_uniform(rng, (c_out, c_in, kh, kw), fan_in,
                                       dtype))

    def params(self):
        return {"w": self.w}

    def _pads(self):
        _, _, kh, kw = self.w.shape
        if self.padding == "same":
            return _same_pad(kh), _same_pad(kw)
        return (0, 0), (0, 0)

    def forward(self, x, train, rng):
        if x.ndim != 4 or x.shape[1] != self.w.shape[1]:
            raise ValueError(
                f"expected (B, {self.w.shape[1]}, H, W), got {x.shape}")
        (pt, pb), (pl, pr) = self._pads()
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        self._cache = xp
        return backend.corr2d(np.ascontiguousarray(xp),
                              np.ascontiguousarray(self.w.data))

    def backward(self, dy):
        xp = self._need_cache()
        _, _, kh, kw = self.w.shape
        (pt, _), (pl, _) = self._pads()
        dy = np.ascontiguousarray(dy)
        dw = backend.corr2d(
            np.ascontiguousarray(xp.transpose(1, 0, 2, 3)),
            np.ascontiguousarray(dy.transpose(1, 0, 2, 3)),
        ).transpose(1, 0, 2, 3)
        self.w.grad += dw
        dy_full = np.pad(dy, ((0, 0), (0, 0), (kh - 1, kh - 1),
                              (kw - 1, kw - 1)))
        w_rot = np.ascontiguousarray(
            self.w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dxp = backend.corr2d(np.ascontiguousarray(dy_full), w_rot)
        h = xp.shape[2] - (self._pads()[0][0] + self._pads()[0][1])
        w_ = xp.shape[3] - (self._pads()[1][0] + self._pads()[1][1])
        return np.ascontiguousarray(dxp[:, :, pt:pt + h, pl:pl + w_])


class DepthwiseConv2d(Layer):
    kind = "depthwise_conv2d"

    def __init__(self, c_in: int, mult: int, kh: int, kw: int, rng, dtype,
                 padding="valid", name="depthwise"):
        super().__init__(name)
        if padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {padding!r}")
        self.padding = padding
        self.c_in = c_in
        self.mult = mult
        self.w = Param(kaiming_uniform(rng, (c_in, mult, kh, kw), kh * kw,
                                       dtype))

    def params(self):
        return {"w": self.w}

    def _pads(self):
        kh, kw = self.w.shape[2], self.w.shape[3]
        if self.padding == "same":
            return _same_pad(kh), _same_pad(kw)
        return (0, 0), (0, 0)

    def forward(self, x, train, rng):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"expected (B, {self.c_in}, H, W), got {x.shape}")
        (pt, pb), (pl, pr) = self._pads()
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        self._cache = xp
        return backend.corr2d_dw(np.ascontiguousarray(xp),
                                 np.ascontiguousarray(self.w.data))

    def backward(self, dy):
        xp = self._need_cache()
        c, m, kh, kw = self.w.shape
        (pt, _), (pl, _) = self._pads()
        dy = np.ascontiguousarray(dy)
        for ci in range(c):
            # Channel ci alone: batch acts as the contraction axis.
            a = np.ascontiguousarray(
                xp[:, ci:ci + 1].transpose(1, 0, 2, 3))
            k = np.ascontiguousarray(
                dy[:, ci * m:(ci + 1) * m].transpose(1, 0, 2, 3))
            self.w.grad[ci] += backend.corr2d(a, k)[0]
        dy_full = np.pad(dy, ((0, 0), (0, 0), (kh - 1, kh - 1),
                              (kw - 1, kw - 1)))
        w_rot = np.ascontiguousarray(
            self.w.data[:, :, ::-1, ::-1].reshape(c * m, 1, kh, kw))
        dxp = backend.corr2d_dw(np.ascontiguousarray(dy_full), w_rot)
        dxp = dxp.reshape(dy.shape[0], c, m, dxp.shape[2], dxp.shape[3])
        dxp = dxp.sum(axis=2)
        h = xp.shape[2] - (self._pads()[0][0] + self._pads()[0][1])
        w_ = xp.shape[3] - (self._pads()[1][0] + self._pads()[1][1])
        return np.ascontiguousarray(dxp[:, :, pt:pt + h, pl:pl + w_])


class SeparableConv2d(Layer):
    """Depthwise spatial filter followed by a 1x1 pointwise mix."""

    kind = "separable_conv2d"

    def __init__(self, c_in: int, c_out: int, kh: int, kw: int, rng, dtype,
                 padding="same", name="separable"):
        super().__init__(name)
        self.depth = DepthwiseConv2d(c_in, 1, kh, kw, rng, dtype,
                                     padding=padding, name=f"{name}.depth")
        self.point = Conv2d(c_in, c_out, 1, 1, rng, dtype, padding="valid",
                            name=f"{name}.point")

    def params(self):
        return {"depth_w": self.depth.w, "point_w": self.point.w}

    def forward(self, x, train, rng):
        self._cache = True
        return self.point.forward(self.depth.forward(x, train, rng),
                                  train, rng)

    def backward(self, dy):
        self._need_cache()
        return self.depth.backward(self.point.backward(dy))


class Conv1dTemporal(Layer):
    """Convolution along time for (B, C, T) inputs."""

    kind = "conv1d_temporal"

    def __init__(self, c_in: int, c_out: int, k: int, rng, dtype,
                 padding="same", name="conv1d"):
        super().__init__(name)
        self.conv = Conv2d(c_in, c_out, 1, k, rng, dtype, padding=padding,
                           name=f"{name}.conv")

    def params(self):
        return {"w": self.conv.w}

    def forward(self, x, train, rng):
        if x.ndim != 3:
            raise ValueError(f"expected (B, C, T), got {x.shape}")
        self._cache = True
        y = self.conv.forward(x[:, :, None, :], train, rng)
        return y[:, :, 0, :]

    def backward(self, dy):
        self._need_cache()
        return self.conv.backward(dy[:, :, None, :])[:, :, 0, :]


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, n_features: int, dtype, momentum=0.1, eps=1e-5,
                 name="batchnorm"):
        super().__init__(name)
        self.gamma = Param(np.ones(n_features, dtype=dtype))
        self.beta = Param(np.zeros(n_features, dtype=dtype))
        self.running_mean = np.zeros(n_features, dtype=dtype)
        self.running_var = np.ones(n_features, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean,
                "running_var": self.running_var}

    @staticmethod
    def _axes(x):
        if x.ndim == 2:
            return (0,)
        if x.ndim == 4:
            return (0, 2, 3)
        raise ValueError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")

    def _expand(self, v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x, train, rng):
        axes = self._axes(x)
        if x.shape[1] != self.gamma.size:
            raise ValueError(
                f"expected {self.gamma.size} channels, got {x.shape}")
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean += self.momentum * (
                mean.astype(self.running_mean.dtype) - self.running_mean)
            self.running_var += self.momentum * (
                var.astype(self.running_var.dtype) - self.running_var)
        else:
            mean = self.running_mean
            var = self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._expand(mean, x.ndim)) * self._expand(inv, x.ndim)
        self._cache = (xhat, inv, axes, train)
        return (self._expand(self.gamma.data, x.ndim) * xhat
                + self._expand(self.beta.data, x.ndim))

    def backward(self, dy):
        xhat, inv, axes, train = self._need_cache()
        self.gamma.grad += (dy * xhat).sum(axis=axes)
        self.beta.grad += dy.sum(axis=axes)
        g = self._expand(self.gamma.data, dy.ndim)
        if not train:
            return dy * g * self._expand(inv, dy.ndim)
        n = dy.size / dy.shape[1]
        dyg = dy * g
        mean_dyg = dyg.mean(axis=axes)
        mean_dyg_xhat = (dyg * xhat).mean(axis=axes)
        return (dyg - self._expand(mean_dyg, dy.ndim)
                - xhat * self._expand(mean_dyg_xhat, dy.ndim)
                ) * self._expand(inv, dy.ndim)


class Elu(Layer):
    kind = "elu"

    def __init__(self, alpha=1.0, name="elu"):
        super().__init__(name)
        self.alpha = alpha

    def forward(self, x, train, rng):
        neg = x < 0
        y = np.where(neg, self.alpha * np.expm1(np.minimum(x, 0.0)), x)
        self._cache = (neg, y)
        return y

    def backward(self, dy):
        neg, y = self._need_cache()
        return dy * np.where(neg, y + self.alpha, 1.0)


class Relu(Layer):
    kind = "relu"

    def __init__(self, name="relu"):
        super().__init__(name)

    def forward(self, x, train, rng):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._need_cache()


class AvgPool(Layer):
    """Non-overlapping mean pooling; trailing remainders are dropped."""

    kind = "avgpool"

    def __init__(self, ph: int, pw: int, name="avgpool"):
        super().__init__(name)
        if ph < 1 or pw < 1:
            raise ValueError("pool sizes must be >= 1")
        self.ph = ph
        self.pw = pw

    def forward(self, x, train, rng):
        if x.ndim != 4:
            raise ValueError(f"expected (B, C, H, W), got {x.shape}")
        b, c, h, w = x.shape
        oh, ow = h // self.ph, w // self.pw
        if oh < 1 or ow < 1:
            raise ValueError(
                f"input {x.shape} smaller than pool ({self.ph}, {self.pw})")
        self._cache = x.shape
        trimmed = x[:, :, :oh * self.ph, :ow * self.pw]
        return trimmed.reshape(b, c, oh, self.ph, ow, self.pw).mean(
            axis=(3, 5))

    def backward(self, dy):
        b, c, h, w = self._need_cache()
        oh, ow = dy.shape[2], dy.shape[3]
        dx = np.zeros((b, c, h, w), dtype=dy.dtype)
        spread = dy[:, :, :, None, :, None] / (self.ph * self.pw)
        dx[:, :, :oh * self.ph, :ow * self.pw] = np.broadcast_to(
            spread, (b, c, oh, self.ph, ow, self.pw)
        ).reshape(b, c, oh * self.ph, ow * self.pw)
        return dx


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p: float, name="dropout"):
        super().__init__(name)
        if not (0.0 <= p < 1.0):
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x, train, rng):
        if not train or self.p == 0.0:
            self._cache = None
            self._identity = True
            return x
        if rng is None:
            raise ValueError(
                f"layer {self.name}: training forward needs an rng")
        keep = (rng.random(x.shape) >= self.p).astype(x.dtype)
        scale = 1.0 / (1.0 - self.p)
        self._cache = keep
        self._identity = False
        return x * keep * scale

    def backward(self, dy):
        if getattr(self, "_identity", None) is None:
            raise RuntimeError(
                f"layer {self.name}: backward called before forward")
        if self._identity:
            return dy
        keep = self._cache
        return dy * keep / (1.0 - self.p)


class Flatten(Layer):
    kind = "flatten"

    def __init__(self, name="flatten"):
        super().__init__(name)

    def forward(self, x, train, rng):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._need_cache())


class AddChannelAxis(Layer):
    """(B, C, T) -> (B, 1, C, T): view multichannel series as one image."""

    kind = "add_channel_axis"

    def __init__(self, name="addaxis", expected_channels=None):
        super().__init__(name)
        self.expected_channels = expected_channels

    def forward(self, x, train, rng):
        if x.ndim != 3:
            raise ValueError(f"expected (B, C, T), got {x.shape}")
        if (self.expected_channels is not None
                and x.shape[1] != self.expected_channels):
            raise ValueError(
                f"expected (B, {self.expected_channels}, T), got {x.shape}")
        self._cache = True
        return x[:, None, :, :]

    def backward(self, dy):
        self._need_cache()
        return dy[:, 0, :, :]


class Concat(Layer):
    """Join feature vectors from several branches along axis 1."""

    kind = "concat"

    def __init__(self, name="concat"):
        super().__init__(name)

    def forward(self, xs, train, rng):
        xs = list(xs)
        if any(x.ndim != 2 for x in xs):
            raise ValueError("concat expects 2-D (B, F) inputs")
        if len({x.shape[0] for x in xs}) != 1:
            raise ValueError(
                f"batch sizes differ: {[x.shape for x in xs]}")
        self._cache = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, dy):
        widths = self._need_cache()
        out = []
        start = 0
        for w in widths:
            out.append(dy[:, start:start + w])
            start += w
        return out


class Sequential:
    """Ordered layer chain with a parameter registry.

    Forward in eval mode is deterministic (dropout off, batchnorm running
    stats).  Shape errors are re-raised with the failing layer named.
    """

    def __init__(self, layers, topology: str, dtype=np.float32, config=None):
        self.layers = list(layers)
        self.topology = topology
        self.dtype = dtype
        self.config = dict(config or {})
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names: {names}")

    def params(self) -> dict:
        out = {}
        for layer in self.layers:
            for pname, p in layer.params().items():
                out[f"{layer.name}.{pname}"] = p
        return out

    def buffers(self) -> dict:
        out = {}
        for layer in self.layers:
            for bname, b in layer.buffers().items():
                out[f"{layer.name}.{bname}"] = b
        return out

    def zero_grad(self):
        for p in self.params().values():
            p.grad[...] = 0.0

    def forward(self, x, train=False, rng=None, debug=False):
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            try:
                x = layer.forward(x, train, rng)
            except ValueError as exc:
                raise ValueError(
                    f"layer {layer.name} ({layer.kind}): {exc}") from None
            if debug and not np.all(np.isfinite(x)):
                raise FloatingPointError(
                    f"layer {layer.name} ({layer.kind}) emitted non-finite "
                    f"values")
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy
