"""Frozen speech-encoder stand-in: strided conv feature encoder plus post-LN Transformer blocks."""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from . import container
from .autograd import Tensor
from .errors import ConfigError, ContractError, FormatError, InputError
from .nn import Conv1d, Init, LayerNorm, Linear, Module, ModuleList
from .pet import PetContext, fuse_block_output, inner_parallel, inner_sequential, lora_forward

DESK_CONV = ((10, 5, 64), (8, 4, 64), (4, 2, 64))
# wav2vec2-style feature encoder used by the Base-size speech models
PAPER_CONV = ((10, 5, 512),) + ((3, 2, 512),) * 4 + ((2, 2, 512),) * 2


@dataclass(frozen=True)
class BackboneConfig:
    num_layers: int = 4
    hidden: int = 64
    heads: int = 4
    ffn_dim: int = 256
    conv_spec: tuple = DESK_CONV
    sample_rate: int = 4000

    def __post_init__(self):
        object.__setattr__(self, "conv_spec", tuple(tuple(int(v) for v in layer) for layer in self.conv_spec))
        for name in ("num_layers", "hidden", "heads", "ffn_dim", "sample_rate"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"backbone {name} must be positive")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if not self.conv_spec or any(len(l) != 3 or min(l) < 1 for l in self.conv_spec):
            raise ConfigError("conv_spec must be a non-empty list of (kernel, stride, channels)")

    @classmethod
    def desk(cls, **kw):
        return cls(**kw)

    @classmethod
    def paper(cls):
        return cls(num_layers=12, hidden=768, heads=8, ffn_dim=3072, conv_spec=PAPER_CONV, sample_rate=16000)

    @property
    def receptive_field(self):
        r = 1
        for kernel, stride, _ in reversed(self.conv_spec):
            r = (r - 1) * stride + kernel
        return r

    def num_frames(self, length):
        for kernel, stride, _ in self.conv_spec:
            if length < kernel:
                return 0
            length = (length - kernel) // stride + 1
        return length

    def to_dict(self):
        d = asdict(self)
        d["conv_spec"] = [list(l) for l in self.conv_spec]
        return d

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown backbone fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class HiddenStack:
    """``H[0]`` is the conv-encoder output fed to block 1; ``H[i]`` the speech rows of block i.

    ``Z`` holds the prompt rows of each block output (empty when no prompts).
    """

    H: list
    Z: list = field(default_factory=list)

    @property
    def num_layers(self):
        return len(self.H) - 1


def sinusoid_positions(length, d, dtype):
    pos = np.arange(length)[:, None]
    freq = np.exp(-np.log(10000.0) * (np.arange(0, d, 2) / d))
    table = np.zeros((length, d))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: d // 2])
    return table.astype(dtype)


class Attention(Module):
    def __init__(self, init, d, heads):
        self.query = Linear(init, d, d)
        self.key = Linear(init, d, d)
        self.value = Linear(init, d, d)
        self.out = Linear(init, d, d)
        self.heads = heads

    def __call__(self, x, lora_q=None, lora_v=None):
        b, n, d = x.shape
        h = self.heads
        dh = d // h

        def split(t):
            return t.reshape(b, n, h, dh).transpose(0, 2, 1, 3)

        q = split(lora_forward(self.query, x, lora_q))
        k = split(self.key(x))
        v = split(lora_forward(self.value, x, lora_v))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
        ctx = ag.softmax(scores, axis=-1) @ v
        return self.out(ctx.transpose(0, 2, 1, 3).reshape(b, n, d))


class TransformerBlock(Module):
    def __init__(self, init, d, heads, ffn_dim):
        self.attn = Attention(init, d, heads)
        self.ln_attn = LayerNorm(init, d)
        self.ffn_in = Linear(init, d, ffn_dim)
        self.ffn_out = Linear(init, ffn_dim, d)
        self.ln_out = LayerNorm(init, d)

    def ffn(self, x):
        return self.ffn_out(ag.gelu(self.ffn_in(x)))

    def __call__(self, h, index, ctx, num_prompts=0):
        lora_q, lora_v = ctx.lora(index)
        houlsby = ctx.houlsby(index)
        inner = ctx.inner(index)

        a = self.attn(h, lora_q, lora_v)
        if houlsby is not None:
            a = a + houlsby.attn(a)
        x = self.ln_attn(a + h)

        f = self.ffn(x)
        if houlsby is not None:
            f = f + houlsby.ffn(f)
        if inner is None:
            return self.ln_out(f + x)
        gate = ctx.adapter_gate(index, x[:, num_prompts:])
        if inner.mode == "sequential":
            z = inner_sequential(f, inner) if gate is None else f + inner(f) * gate
            return self.ln_out(z + x)
        z = inner_parallel(x, inner)
        return fuse_block_output(f, z, x, ctx.scale(), gate, norm=self.ln_out)


class Backbone(Module):
    def __init__(self, config, init=None):
        init = init or Init()
        self.config = config
        c_in = 1
        layers = []
        for kernel, stride, channels in config.conv_spec:
            layers.append(Conv1d(init, c_in, channels, kernel, stride))
            c_in = channels
        self.conv = ModuleList(layers, start=0)
        self.proj_ln = LayerNorm(init, c_in)
        self.proj = Linear(init, c_in, config.hidden)
        self.mask_emb = init.normal(0.1, config.hidden)
        self.block = ModuleList([TransformerBlock(init, config.hidden, config.heads, config.ffn_dim)
                                 for _ in range(config.num_layers)])

    def conv_encode(self, wave):
        """Waveform ``[L]`` or ``[B, L]`` -> frames ``[T, d]`` / ``[B, T, d]``."""
        wave = ag.as_tensor(wave)
        single = wave.ndim == 1
        x = wave.reshape(1, -1, 1) if single else wave.reshape(wave.shape[0], wave.shape[1], 1)
        length = x.shape[1]
        if length < self.config.receptive_field:
            raise InputError(f"waveform of {length} samples is shorter than the minimum "
                             f"{self.config.receptive_field} samples needed by the conv encoder")
        for conv in self.conv:
            x = ag.gelu(conv(x))
        x = self.proj(self.proj_ln(x))
        return x[0] if single else x

    def apply_mask(self, frames, mask):
        """Replace frames where ``mask`` (bool ``[B, T]``) is set by the mask embedding."""
        keep = Tensor((~mask)[..., None].astype(frames.dtype))
        return frames * keep + self.mask_emb * (1.0 - keep)

    def block_forward(self, h, index, ctx=None, num_prompts=0):
        """Run block ``index`` (1-based); returns ``(Z_i, H_i)`` split at ``num_prompts`` rows."""
        ctx = ctx or PetContext()
        if not 1 <= index <= self.config.num_layers:
            raise ContractError(f"layer index {index} outside 1..{self.config.num_layers}")
        ctx.check_layers(self.config.num_layers)
        single = h.ndim == 2
        if single:
            h = h.reshape(1, *h.shape)
        out = self.block[index - 1](h, index, ctx, num_prompts)
        z, hs = out[:, :num_prompts], out[:, num_prompts:]
        if single:
            return z[0], hs[0]
        return z, hs

    def encode(self, wave, ctx=None):
        return self.encode_frames(self.conv_encode(wave), ctx)

    def encode_frames(self, h, ctx=None):
        """Transformer stack over conv frames, prepending (gated) prompts at every layer."""
        ctx = ctx or PetContext()
        ctx.check_layers(self.config.num_layers)
        single = h.ndim == 2
        if single:
            h = h.reshape(1, *h.shape)
        h = h + sinusoid_positions(h.shape[1], h.shape[2], h.dtype)
        hs, zs = [h], []
        for i in range(1, self.config.num_layers + 1):
            rows = ctx.prompt_rows(i, h)
            m = 0 if rows is None else rows.shape[1]
            inp = h if rows is None else ag.concat([rows, h], axis=1)
            z, h = self.block_forward(inp, i, ctx, m)
            hs.append(h)
            if m:
                zs.append(z)
        if single:
            hs = [t[0] for t in hs]
            zs = [t[0] for t in zs]
        return HiddenStack(hs, zs)

    # ---------------------------------------------------------------- pseudo-pretraining

    def masked_prediction_loss(self, head, waves, rng, mask_fraction=0.2):
        """Mean squared error of ``head`` predicting masked conv frames from context.

        One contiguous span of ``mask_fraction`` of the frames is masked per
        utterance. Targets are the conv-encoder frames themselves, detached.
        """
        if len(waves) == 0:
            raise InputError("pseudo-pretraining needs a non-empty batch")
        with ag.no_grad():
            target = self.conv_encode(waves)
        b, t, d = target.shape
        span = int(round(mask_fraction * t))
        if span == 0:
            return Tensor(np.zeros((), dtype=target.dtype))
        mask = np.zeros((b, t), dtype=bool)
        for row, start in enumerate(rng.integers(0, t - span + 1, size=b)):
            mask[row, start : start + span] = True
        frames = self.apply_mask(self.conv_encode(waves), mask)
        pred = head(self.encode_frames(frames).H[-1])
        weight = Tensor(mask[..., None].astype(target.dtype))
        diff = (pred - target) * weight
        return (diff * diff).sum() * (1.0 / (mask.sum() * d))

    # ---------------------------------------------------------------- weights

    def state(self):
        return {name: p.data for name, p in self.named_parameters("backbone.")}

    def save_weights(self, path):
        container.save(path, self.state())

    def load_weights(self, path):
        self.load_state(container.load(path))

    def load_state(self, tensors):
        params = dict(self.named_parameters("backbone."))
        missing = set(params) - set(tensors)
        if missing:
            raise FormatError(f"weights file lacks {sorted(missing)[:3]}")
        for name, p in params.items():
            arr = tensors[name]
            if arr.shape != p.shape:
                raise ConfigError(f"shape mismatch for {name}: file {arr.shape} vs config {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
