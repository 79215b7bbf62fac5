"""Speaker-verification head: layer aggregation, statistics pooling, backends, classifier."""
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, InputError
from .nn import Conv1d, Linear, Module, ModuleList
from .pet import inter_adapter, layer_weighted_sum

TDNN_CONTEXT = ((5, 1), (3, 2), (3, 3), (1, 1), (1, 1))  # (kernel, dilation)


@dataclass(frozen=True)
class HeadConfig:
    backend: str = "tdnn"
    embed_dim: int = 512
    tdnn_channels: int = 128
    linear_hidden: int = 128

    def __post_init__(self):
        if self.backend not in ("tdnn", "linear"):
            raise ConfigError(f"backend must be tdnn or linear, got {self.backend!r}")
        for name in ("embed_dim", "tdnn_channels", "linear_hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"head {name} must be positive")

    @classmethod
    def paper(cls, backend="tdnn"):
        return cls(backend=backend, embed_dim=512, tdnn_channels=512, linear_hidden=128)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown head fields: {sorted(extra)}")
        return cls(**d)


def stats_pool(frames, eps=1e-9):
    """Concatenate per-channel mean and population std over the time axis."""
    if frames.shape[-2] == 0:
        raise InputError("statistics pooling over an empty sequence")
    mu = frames.mean(axis=-2, keepdims=True)
    centered = frames - mu
    std = ag.sqrt((centered * centered).mean(axis=-2) + eps)
    return ag.concat([mu.reshape(std.shape), std], axis=-1)


def _same_pad(x, left, right):
    if not (left or right):
        return x
    b, _, c = x.shape
    parts = []
    if left:
        parts.append(Tensor(np.zeros((b, left, c), dtype=x.dtype)))
    parts.append(x)
    if right:
        parts.append(Tensor(np.zeros((b, right, c), dtype=x.dtype)))
    return ag.concat(parts, axis=1)


class LinearBackend(Module):
    """Frame-level affine + relu, statistics pooling, affine to the embedding."""

    def __init__(self, init, c_in, hidden, embed_dim):
        self.frame = Linear(init, c_in, hidden)
        self.segment = Linear(init, 2 * hidden, embed_dim)

    def __call__(self, frames):
        return self.segment(stats_pool(ag.relu(self.frame(frames))))


class TdnnBackend(Module):
    """x-vector style: five dilated frame layers, statistics pooling, two affine layers.

    Frame layers are zero-padded to keep the sequence length, so short crops work.
    """

    def __init__(self, init, c_in, channels, embed_dim):
        layers = []
        for kernel, dilation in TDNN_CONTEXT:
            layers.append(Conv1d(init, c_in, channels, kernel, 1, dilation))
            c_in = channels
        self.frame = ModuleList(layers)
        self.segment6 = Linear(init, 2 * channels, embed_dim)
        self.segment7 = Linear(init, embed_dim, embed_dim)

    def __call__(self, frames):
        x = frames
        for conv in self.frame:
            span = conv.dilation * (conv.kernel - 1)
            x = ag.relu(conv(_same_pad(x, span // 2, span - span // 2)))
        return self.segment7(ag.relu(self.segment6(stats_pool(x))))


def aggregate(stack, layer_logits, inter=None, gate=None):
    """Frames fed to the backend: the inter adapter output, or the plain weighted layer sum."""
    if inter is not None:
        return inter_adapter(stack, inter, layer_logits, gate)
    return layer_weighted_sum(stack.H[1:], layer_logits)


class SvHead(Module):
    def __init__(self, init, num_layers, c_in, num_speakers, config):
        self.config = config
        self.layer_weights = init.zeros(num_layers)
        if config.backend == "tdnn":
            self.backend = TdnnBackend(init, c_in, config.tdnn_channels, config.embed_dim)
        else:
            self.backend = LinearBackend(init, c_in, config.linear_hidden, config.embed_dim)
        self.classifier = Linear(init, config.embed_dim, num_speakers)

    def embed(self, frames):
        return self.backend(frames)

    def logits(self, embedding):
        return self.classifier(embedding)

    def normalized_layer_weights(self):
        z = self.layer_weights.data.astype(np.float64)
        e = np.exp(z - z.max())
        return e / e.sum()
