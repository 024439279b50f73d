"""Networks: shared backbone, twin feature heads, multiplicative fusion,
classifier, and environment discriminator.

The category head and environment head sit on one shared backbone; their
outputs are fused elementwise (f = f1 * f2) before classification, while the
discriminator reads the environment head only. Gradients are computed by
hand-rolled reverse mode with two routing targets:

    "L1": classification loss minus alpha * discriminator loss; updates
          backbone, both heads, and the classifier, with the discriminator
          frozen (its parameters get exact-zero gradients).
    "L2": discriminator loss; updates the discriminator only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import FormatError, IntegrityError, NumericError, ValidationError
from .layers import (
    Conv2d,
    Conv3d,
    Dense,
    Flatten,
    GlobalAvgPool,
    MergeDepthChannels,
    Relu,
    SpectralVolume,
    Stack,
    check_finite,
    softmax,
)

BACKBONES = ("compact2d", "cnn3d", "hybridsn")
DISC_WIDTHS = (64, 64)
DEFAULT_CONV_CHANNELS = {
    "compact2d": (32, 64),
    "cnn3d": (8, 16, 32, 64),
    "hybridsn": (8, 16, 32, 64),
}
PARAM_GROUPS = ("backbone", "head1", "head2", "classifier", "disc")
L1_GROUPS = ("backbone", "head1", "head2", "classifier")
L2_GROUPS = ("disc",)

CHECKPOINT_MANIFEST = "checkpoint.json"
CHECKPOINT_PARAMS = "params.bin"


@dataclass
class NetConfig:
    """Architecture hyperparameters; parameter shapes are a pure function of this."""

    bands: int
    class_count: int
    env_count: int
    backbone: str = "compact2d"
    feature_dim: int = 128
    patch_size: int = 5
    seed: int = 0
    conv_channels: tuple | None = None
    head_hidden: int = 128

    def validate(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}, expected one of {BACKBONES}")
        if self.feature_dim < 1 or self.class_count < 1 or self.env_count < 1:
            raise ValueError("feature_dim, class_count, env_count must be >= 1")
        if self.bands < 1 or self.head_hidden < 1:
            raise ValueError("bands and head_hidden must be >= 1")
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and >= 1, got {self.patch_size}")
        return self

    def channels(self):
        if self.conv_channels is not None:
            return tuple(self.conv_channels)
        return DEFAULT_CONV_CHANNELS[self.backbone]

    def to_dict(self):
        d = asdict(self)
        if d["conv_channels"] is not None:
            d["conv_channels"] = list(d["conv_channels"])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("conv_channels") is not None:
            d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d).validate()


@dataclass
class NetworkParams:
    """Named parameter tensors for all five groups, plus the training step."""

    config: NetConfig
    tensors: dict[str, np.ndarray]
    step: int = 0

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def group(self, prefix):
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix + ".")}

    def copy(self):
        return NetworkParams(
            config=self.config,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            step=self.step,
        )

    def astype(self, dtype):
        return NetworkParams(
            config=self.config,
            tensors={k: v.astype(dtype) for k, v in self.tensors.items()},
            step=self.step,
        )


@dataclass
class ForwardOutputs:
    """Batch outputs plus the caches needed for an exact backward pass."""

    f1_out: np.ndarray
    f2_out: np.ndarray
    fused: np.ndarray
    class_logits: np.ndarray
    class_probs: np.ndarray
    env_logits: np.ndarray
    env_probs: np.ndarray
    caches: dict = field(repr=False, default_factory=dict)


def _build_backbone(config):
    s, d = config.patch_size, config.bands
    ch = config.channels()
    if config.backbone == "compact2d":
        if len(ch) != 2:
            raise ValueError(f"compact2d wants 2 channel widths, got {ch}")
        layers = [
            Conv2d("backbone.conv1", d, ch[0]),
            Relu("backbone.relu1"),
            Conv2d("backbone.conv2", ch[0], ch[1]),
            Relu("backbone.relu2"),
            GlobalAvgPool("backbone.pool"),
        ]
        return Stack(layers), ch[1]
    if config.backbone == "cnn3d":
        if len(ch) != 4:
            raise ValueError(f"cnn3d wants 4 channel widths, got {ch}")
        layers = [SpectralVolume("backbone.volume")]
        in_ch = 1
        for i, out_ch in enumerate(ch, start=1):
            layers.append(
                Conv3d(f"backbone.conv{i}", in_ch, out_ch, (3, 3, 3), d, "same")
            )
            layers.append(Relu(f"backbone.relu{i}"))
            in_ch = out_ch
        layers.append(GlobalAvgPool("backbone.pool"))
        return Stack(layers), ch[-1]
    if config.backbone == "hybridsn":
        if len(ch) != 4:
            raise ValueError(f"hybridsn wants 4 channel widths, got {ch}")
        layers = [SpectralVolume("backbone.volume")]
        depth = d
        in_ch = 1
        for i, (kd, out_ch) in enumerate(zip((7, 5, 3), ch[:3]), start=1):
            conv = Conv3d(f"backbone.conv{i}", in_ch, out_ch, (kd, 3, 3), depth, "valid")
            layers.append(conv)
            layers.append(Relu(f"backbone.relu{i}"))
            depth = conv.depth_out
            in_ch = out_ch
        layers.append(MergeDepthChannels("backbone.merge"))
        layers.append(Conv2d("backbone.conv4", ch[2] * depth, ch[3]))
        layers.append(Relu("backbone.relu4"))
        layers.append(Flatten("backbone.flatten"))
        return Stack(layers), s * s * ch[3]
    raise ValueError(f"unknown backbone {config.backbone!r}")


def _build_mlp(prefix, in_dim, widths):
    layers = []
    for i, out_dim in enumerate(widths, start=1):
        layers.append(Dense(f"{prefix}.fc{i}", in_dim, out_dim))
        if i < len(widths):
            layers.append(Relu(f"{prefix}.relu{i}"))
        in_dim = out_dim
    return Stack(layers)


class Network:
    """Layer topology for a NetConfig; stateless apart from the wiring."""

    def __init__(self, config: NetConfig):
        config.validate()
        self.config = config
        self.backbone, self.hidden_dim = _build_backbone(config)
        n1 = config.feature_dim
        self.head1 = _build_mlp("head1", self.hidden_dim, (config.head_hidden, n1))
        self.head2 = _build_mlp("head2", self.hidden_dim, (config.head_hidden, n1))
        self.classifier = _build_mlp("classifier", n1, (config.class_count,))
        self.disc = _build_mlp("disc", n1, (*DISC_WIDTHS, config.env_count))

    def param_shapes(self):
        shapes = {}
        for stack in (self.backbone, self.head1, self.head2, self.classifier, self.disc):
            shapes.update(stack.param_shapes())
        return shapes

    def init_params(self, dtype=np.float32) -> NetworkParams:
        rng = np.random.default_rng(self.config.seed)
        tensors = {}
        for name, shape in self.param_shapes().items():
            if name.endswith(".b"):
                tensors[name] = np.zeros(shape, dtype=dtype)
            else:
                fan_in = int(np.prod(shape[:-1]))
                limit = np.sqrt(6.0 / fan_in)
                tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        return NetworkParams(config=self.config, tensors=tensors)

    def zero_grads(self, params, groups):
        return {
            name: np.zeros_like(arr)
            for name, arr in params.tensors.items()
            if name.split(".")[0] in groups
        }

    def forward(self, params: NetworkParams, batch) -> ForwardOutputs:
        cfg = self.config
        batch = np.asarray(batch)
        expected = (cfg.patch_size, cfg.patch_size, cfg.bands)
        if batch.ndim != 4 or batch.shape[1:] != expected:
            raise ValueError(
                f"batch shape {batch.shape} does not match (B, {expected[0]}, "
                f"{expected[1]}, {expected[2]})"
            )
        x = batch.astype(params.dtype, copy=False)

        hidden, cache_backbone = self.backbone.forward(params.tensors, x)
        f1, cache_h1 = self.head1.forward(params.tensors, hidden)
        f2, cache_h2 = self.head2.forward(params.tensors, hidden)
        fused = f1 * f2
        class_logits, cache_cls = self.classifier.forward(params.tensors, fused)
        env_logits, cache_disc = self.disc.forward(params.tensors, f2)
        class_probs = check_finite("class_softmax", softmax(class_logits))
        env_probs = check_finite("env_softmax", softmax(env_logits))
        return ForwardOutputs(
            f1_out=f1,
            f2_out=f2,
            fused=fused,
            class_logits=class_logits,
            class_probs=class_probs,
            env_logits=env_logits,
            env_probs=env_probs,
            caches={
                "backbone": cache_backbone,
                "head1": cache_h1,
                "head2": cache_h2,
                "classifier": cache_cls,
                "disc": cache_disc,
            },
        )

    def backward_l1(self, params, outputs, y, z, alpha):
        """Gradients of L1 = C1 - alpha*C2 over {backbone, head1, head2,
        classifier}; the discriminator is frozen and reports zeros."""
        grads = self.zero_grads(params, set(PARAM_GROUPS))
        batch_size = outputs.class_probs.shape[0]

        dlogits = outputs.class_probs.copy()
        dlogits[np.arange(batch_size), np.asarray(y) - 1] -= 1.0
        dlogits /= batch_size
        dfused = self.classifier.backward(params.tensors, outputs.caches["classifier"], dlogits, grads)

        df1 = dfused * outputs.f2_out
        df2 = dfused * outputs.f1_out
        if alpha != 0.0:
            denv = outputs.env_probs.copy()
            denv[np.arange(batch_size), np.asarray(z) - 1] -= 1.0
            denv *= -alpha / batch_size
            # discriminator stays frozen: propagate to f2 without taking grads
            df2 = df2 + self.disc.backward(params.tensors, outputs.caches["disc"], denv, None)

        dhidden = self.head1.backward(params.tensors, outputs.caches["head1"], df1, grads)
        dhidden = dhidden + self.head2.backward(params.tensors, outputs.caches["head2"], df2, grads)
        self.backbone.backward(params.tensors, outputs.caches["backbone"], dhidden, grads)
        return grads

    def backward_l2(self, params, outputs, z):
        """Gradients of L2 = C2 over the discriminator only; everything else
        reports zeros."""
        grads = self.zero_grads(params, set(PARAM_GROUPS))
        batch_size = outputs.env_probs.shape[0]
        denv = outputs.env_probs.copy()
        denv[np.arange(batch_size), np.asarray(z) - 1] -= 1.0
        denv /= batch_size
        disc_grads = {k: grads[k] for k in grads if k.startswith("disc.")}
        self.disc.backward(params.tensors, outputs.caches["disc"], denv, disc_grads)
        return grads


def init_params(config: NetConfig, dtype=np.float32) -> NetworkParams:
    """Fan-in-scaled uniform weights, zero biases; deterministic per config.seed."""
    return Network(config).init_params(dtype=dtype)


def forward(params: NetworkParams, batch) -> ForwardOutputs:
    return Network(params.config).forward(params, batch)


def gradients(params: NetworkParams, batch, y, z, alpha=0.0, target="L1"):
    """Exact reverse-mode gradients of the selected training loss.

    Returns one array per parameter tensor; tensors outside the target's
    trainable groups are exactly zero by the routing contract.
    """
    if target not in ("L1", "L2"):
        raise ValueError(f"target must be 'L1' or 'L2', got {target!r}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    net = Network(params.config)
    outputs = net.forward(params, batch)
    _check_labels(y, params.config.class_count, "y")
    _check_labels(z, params.config.env_count, "z")
    if target == "L1":
        grads = net.backward_l1(params, outputs, y, z, alpha)
    else:
        grads = net.backward_l2(params, outputs, z)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name}")
    return grads


def _check_labels(labels, count, name):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 1 or labels.max() > count):
        raise ValueError(f"{name} labels must lie in 1..{count}")


def parameter_count(config: NetConfig) -> int:
    return sum(int(np.prod(s)) for s in Network(config).param_shapes().values())


def save_checkpoint(path, params: NetworkParams):
    """checkpoint.json manifest + params.bin (concatenated float32, little-endian)."""
    os.makedirs(path, exist_ok=True)
    names = list(params.tensors.keys())
    manifest = {
        "config": params.config.to_dict(),
        "step": params.step,
        "dtype": "f32",
        "tensors": [
            {"name": n, "shape": list(params.tensors[n].shape)} for n in names
        ],
    }
    with open(os.path.join(path, CHECKPOINT_MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2)
    with open(os.path.join(path, CHECKPOINT_PARAMS), "wb") as fh:
        for n in names:
            fh.write(params.tensors[n].astype("<f4").tobytes())


def load_checkpoint(path) -> NetworkParams:
    manifest_path = os.path.join(path, CHECKPOINT_MANIFEST)
    if not os.path.isfile(manifest_path):
        raise FormatError(f"no {CHECKPOINT_MANIFEST} in {path}")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        config = NetConfig.from_dict(manifest["config"])
        entries = [(e["name"], tuple(e["shape"])) for e in manifest["tensors"]]
        step = int(manifest.get("step", 0))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"corrupt checkpoint manifest in {path}: {exc}") from exc

    expected_shapes = Network(config).param_shapes()
    for name, shape in entries:
        if name not in expected_shapes or tuple(expected_shapes[name]) != shape:
            raise ValidationError(
                f"checkpoint tensor {name} {shape} does not match config-derived shapes"
            )
    params_path = os.path.join(path, CHECKPOINT_PARAMS)
    if not os.path.isfile(params_path):
        raise FormatError(f"missing {CHECKPOINT_PARAMS} in {path}")
    expected_bytes = sum(int(np.prod(s)) for _, s in entries) * 4
    actual = os.path.getsize(params_path)
    if actual != expected_bytes:
        raise IntegrityError(
            f"params.bin is {actual} bytes, manifest implies {expected_bytes}"
        )
    tensors = {}
    with open(params_path, "rb") as fh:
        for name, shape in entries:
            n_items = int(np.prod(shape))
            buf = fh.read(n_items * 4)
            tensors[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return NetworkParams(config=config, tensors=tensors, step=step)
