"""The three desk-scale architectures and their parameter plumbing.

build_mlp consumes flattened low-resolution spectrogram sets, build_eegnet
consumes 16-channel waveform matrices, and MultiModal runs a waveform
branch and a 2-D spectrogram branch whose penultimate features meet in one
dense head.
"""

from __future__ import annotations

import numpy as np

from .layers import (
    AddChannelAxis,
    AvgPool,
    BatchNorm,
    Concat,
    Conv2d,
    Dense,
    DepthwiseConv2d,
    Dropout,
    Elu,
    Flatten,
    Relu,
    Sequential,
    SeparableConv2d,
)

N_CLASSES = 6


def _dtype_of(name):
    return {"float32": np.float32, "float64": np.float64}[name]


def build_mlp(
    input_dim: int,
    hidden=(512, 256),
    dropout_p: float = 0.3,
    n_classes: int = N_CLASSES,
    seed: int = 0,
    dtype: str = "float32",
) -> Sequential:
    """Flatten -> dense stack -> class logits."""
    dt = _dtype_of(dtype)
    rng = np.random.default_rng(seed)
    h1, h2 = hidden
    layers = [
        Flatten(name="flatten"),
        Dense(input_dim, h1, rng, dt, name="fc1"),
        Relu(name="relu1"),
        Dropout(dropout_p, name="drop1"),
        Dense(h1, h2, rng, dt, name="fc2"),
        Relu(name="relu2"),
        Dense(h2, n_classes, rng, dt, name="head"),
    ]
    cfg = {"input_dim": input_dim, "hidden": list(hidden),
           "dropout_p": dropout_p, "n_classes": n_classes, "seed": seed,
           "dtype": dtype}
    return Sequential(layers, topology="mlp", dtype=dt, config=cfg)


def eegnet_feature_dim(n_samples: int, f2: int = 16, pool1: int = 4,
                       pool2: int = 8) -> int:
    """Width of the flattened features entering the EEGNet head."""
    return f2 * ((n_samples // pool1) // pool2)


def build_eegnet(
    n_channels: int = 16,
    n_samples: int = 10000,
    f1: int = 8,
    depth_mult: int = 2,
    f2: int = 16,
    temporal_k: int = 64,
    sep_k: int = 16,
    pool1: int = 4,
    pool2: int = 8,
    dropout_p: float = 0.25,
    n_classes: int = N_CLASSES,
    seed: int = 0,
    dtype: str = "float32",
    include_head: bool = True,
) -> Sequential:
    """Compact temporal/depthwise/separable conv net over raw waveforms.

    Input is (B, n_channels, n_samples).  With include_head=False the
    graph stops at the flattened features, for use as the waveform branch
    of the multimodal model.
    """
    dt = _dtype_of(dtype)
    rng = np.random.default_rng(seed)
    layers = [
        AddChannelAxis(name="addaxis", expected_channels=n_channels),
        Conv2d(1, f1, 1, temporal_k, rng, dt, padding="same",
               name="temporal"),
        BatchNorm(f1, dt, name="bn1"),
        DepthwiseConv2d(f1, depth_mult, n_channels, 1, rng, dt,
                        padding="valid", name="spatial"),
        BatchNorm(f1 * depth_mult, dt, name="bn2"),
        Elu(name="elu1"),
        AvgPool(1, pool1, name="pool1"),
        Dropout(dropout_p, name="drop1"),
        SeparableConv2d(f1 * depth_mult, f2, 1, sep_k, rng, dt,
                        padding="same", name="sep"),
        BatchNorm(f2, dt, name="bn3"),
        Elu(name="elu2"),
        AvgPool(1, pool2, name="pool2"),
        Dropout(dropout_p, name="drop2"),
        Flatten(name="flatten"),
    ]
    if include_head:
        feat = eegnet_feature_dim(n_samples, f2, pool1, pool2)
        layers.append(Dense(feat, n_classes, rng, dt, name="head"))
    cfg = {"n_channels": n_channels, "n_samples": n_samples, "f1": f1,
           "depth_mult": depth_mult, "f2": f2, "temporal_k": temporal_k,
           "sep_k": sep_k, "pool1": pool1, "pool2": pool2,
           "dropout_p": dropout_p, "n_classes": n_classes, "seed": seed,
           "dtype": dtype, "include_head": include_head}
    return Sequential(layers, topology="eegnet", dtype=dt, config=cfg)


def conv2d_branch_feature_dim(height: int, width: int,
                              channels=(8, 16, 16, 16)) -> int:
    h, w = height, width
    for _ in channels:
        h //= 2
        w //= 2
    return channels[-1] * h * w


def build_conv2d_branch(
    in_channels: int = 4,
    height: int = 40,
    width: int = 625,
    channels=(8, 16, 16, 16),
    seed: int = 0,
    dtype: str = "float32",
) -> Sequential:
    """Small conv-bn-elu-pool stack over stacked chain spectrograms.

    Emits flattened features; pairs with a dense head or the concat head.
    """
    dt = _dtype_of(dtype)
    rng = np.random.default_rng(seed)
    layers = []
    c_in = in_channels
    for i, c_out in enumerate(channels):
        layers += [
            Conv2d(c_in, c_out, 3, 3, rng, dt, padding="same",
                   name=f"conv{i + 1}"),
            BatchNorm(c_out, dt, name=f"bn{i + 1}"),
            Elu(name=f"elu{i + 1}"),
            AvgPool(2, 2, name=f"pool{i + 1}"),
        ]
        c_in = c_out
    layers.append(Flatten(name="flatten"))
    cfg = {"in_channels": in_channels, "height": height, "width": width,
           "channels": list(channels), "seed": seed, "dtype": dtype}
    return Sequential(layers, topology="conv2d", dtype=dt, config=cfg)


class MultiModal:
    """Waveform branch + spectrogram branch meeting in one dense head.

    forward takes (x_wave, x_image); gradients flow into both branches
    through the concatenated penultimate features.
    """

    topology = "multimodal"

    def __init__(self, wave: Sequential, image: Sequential,
                 wave_feat: int, image_feat: int,
                 n_classes: int = N_CLASSES, seed: int = 0,
                 dtype: str = "float32", config=None):
        dt = _dtype_of(dtype)
        rng = np.random.default_rng(seed)
        self.wave = wave
        self.image = image
        self.concat = Concat(name="concat")
        self.head = Dense(wave_feat + image_feat, n_classes, rng, dt,
                          name="head")
        self.dtype = dt
        self.config = dict(config or {})

    def params(self) -> dict:
        out = {}
        for prefix, part in (("wave", self.wave), ("image", self.image)):
            for name, p in part.params().items():
                out[f"{prefix}.{name}"] = p
        for name, p in self.head.params().items():
            out[f"head.{name}"] = p
        return out

    def buffers(self) -> dict:
        out = {}
        for prefix, part in (("wave", self.wave), ("image", self.image)):
            for name, b in part.buffers().items():
                out[f"{prefix}.{name}"] = b
        return out

    def zero_grad(self):
        for p in self.params().values():
            p.grad[...] = 0.0

    def forward(self, batch, train=False, rng=None, debug=False):
        xw, xi = batch
        fw = self.wave.forward(xw, train=train, rng=rng, debug=debug)
        fi = self.image.forward(xi, train=train, rng=rng, debug=debug)
        joined = self.concat.forward([fw, fi], train, rng)
        return self.head.forward(joined, train, rng)

    def backward(self, dy):
        djoined = self.head.backward(dy)
        dfw, dfi = self.concat.backward(djoined)
        return self.wave.backward(dfw), self.image.backward(dfi)


def build_multimodal(
    n_channels: int = 16,
    n_samples: int = 10000,
    image_shape=(4, 40, 625),
    eegnet_kwargs=None,
    conv_channels=(8, 16, 16, 16),
    n_classes: int = N_CLASSES,
    seed: int = 0,
    dtype: str = "float32",
) -> MultiModal:
    ek = dict(eegnet_kwargs or {})
    ek.setdefault("n_channels", n_channels)
    ek.setdefault("n_samples", n_samples)
    wave = build_eegnet(include_head=False, seed=seed, dtype=dtype,
                        n_classes=n_classes, **ek)
    in_ch, height, width = image_shape
    image = build_conv2d_branch(in_channels=in_ch, height=height,
                                width=width, channels=conv_channels,
                                seed=seed + 1, dtype=dtype)
    wave_feat = eegnet_feature_dim(
        ek["n_samples"], ek.get("f2", 16), ek.get("pool1", 4),
        ek.get("pool2", 8))
    image_feat = conv2d_branch_feature_dim(height, width, conv_channels)
    cfg = {"n_channels": n_channels, "n_samples": n_samples,
           "image_shape": list(image_shape), "eegnet_kwargs": ek,
           "conv_channels": list(conv_channels), "n_classes": n_classes,
           "seed": seed, "dtype": dtype}
    return MultiModal(wave, image, wave_feat, image_feat,
                      n_classes=n_classes, seed=seed + 2, dtype=dtype,
                      config=cfg)


def _rebuild_multimodal(n_channels=16, n_samples=10000,
                        image_shape=(4, 40, 625), eegnet_kwargs=None,
                        conv_channels=(8, 16, 16, 16), n_classes=6,
                        seed=0, dtype="float32"):
    # JSON round-trips tuples as lists; restore them before building.
    return build_multimodal(
        n_channels=n_channels, n_samples=n_samples,
        image_shape=tuple(image_shape), eegnet_kwargs=eegnet_kwargs,
        conv_channels=tuple(conv_channels), n_classes=n_classes,
        seed=seed, dtype=dtype)


BUILDERS = {
    "mlp": build_mlp,
    "eegnet": build_eegnet,
    "conv2d": build_conv2d_branch,
    "multimodal": _rebuild_multimodal,
}


def count_params(model) -> int:
    return int(sum(p.size for p in model.params().values()))
