"""Full speaker model (backbone + PET + head), the freezing registry, and parameter accounting."""
from collections import OrderedDict

import numpy as np

from . import autograd as ag
from .backbone import Backbone, BackboneConfig
from .head import HeadConfig, SvHead, aggregate
from .nn import Init, Module
from .pet import MethodSpec, PetContext, PetModules

FT_FROZEN_PREFIXES = ("backbone.conv", "backbone.mask_emb")


def is_trainable(name, spec):
    """The freezing rule: which parameter names a method updates."""
    owner = name.split(".", 1)[0]
    if spec.method == "backend_only":
        return owner == "head" and name != "head.layer_weights"
    if spec.method == "ft":
        if owner == "backbone":
            return not name.startswith(FT_FROZEN_PREFIXES)
        return owner == "head"
    return owner in ("pet", "head")


class ParamRegistry:
    """Authoritative trainable/frozen partition of a model's named parameters."""

    def __init__(self, model, spec):
        self.spec = spec
        self.entries = OrderedDict()
        for name, p in model.named_parameters():
            if name in self.entries:
                raise ValueError(f"duplicate parameter name {name}")
            flag = is_trainable(name, spec)
            p.trainable = flag
            self.entries[name] = (p, flag, name.split(".", 1)[0])

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, name):
        return self.entries[name][0]

    def trainable(self):
        return OrderedDict((n, p) for n, (p, flag, _) in self.entries.items() if flag)

    def frozen(self):
        return OrderedDict((n, p) for n, (p, flag, _) in self.entries.items() if not flag)

    def count(self, trainable=None, owners=None):
        total = 0
        for p, flag, owner in self.entries.values():
            if trainable is not None and flag != trainable:
                continue
            if owners is not None and owner not in owners:
                continue
            total += p.size
        return total

    def state(self):
        return OrderedDict((n, p.data) for n, (p, _, _) in self.entries.items())


class SpeakerModel(Module):
    def __init__(self, backbone_config, spec, head_config=None, num_speakers=2, seed=None,
                 dtype=np.float32):
        head_config = head_config or HeadConfig()

        def init(part):
            rng = None if seed is None else np.random.default_rng([seed, part])
            return Init(rng, dtype)

        n, d = backbone_config.num_layers, backbone_config.hidden
        self.backbone = Backbone(backbone_config, init(0))
        self.pet = PetModules(init(1), n, d, spec)
        width = spec.inter_dim if spec.uses_inter else d
        self.head = SvHead(init(2), n, width, num_speakers, head_config)
        self.spec = spec
        self.backbone_config = backbone_config
        self.head_config = head_config
        self.assign_names()
        self.registry = ParamRegistry(self, spec)

    def context(self, gate_values=None):
        return PetContext(self.pet, gate_values)

    def hidden(self, wave, gate_values=None):
        return self.backbone.encode(wave, self.context(gate_values))

    def frames(self, stack, ctx):
        return aggregate(stack, self.head.layer_weights, self.pet.inter, ctx.inter_gate)

    def embed(self, wave, gate_values=None):
        ctx = self.context(gate_values)
        stack = self.backbone.encode(wave, ctx)
        return self.head.embed(self.frames(stack, ctx))

    def logits(self, wave, gate_values=None):
        return self.head.logits(self.embed(wave, gate_values))

    def reference_logits(self, wave):
        """Logits with the backbone run bare (no adapters, LoRA or prompt content).

        Prompt methods keep their sequence length via zero rows, and the
        head-side path (layer weights, inter adapter, backend) is unchanged.
        """
        m = self.pet.prompt.length if self.pet.prompt is not None else 0
        ctx = PetContext(None, blank_prompts=m)
        stack = self.backbone.encode(wave, ctx)
        own = self.context()
        return self.head.logits(self.head.embed(self.frames(stack, own)))

    def loss(self, wave, labels, gate_values=None):
        return ag.cross_entropy(self.logits(wave, gate_values), labels)

    def state(self):
        return self.registry.state()

    def load_state(self, tensors, strict=True):
        for name, (p, _, _) in self.registry.entries.items():
            if name not in tensors:
                if strict:
                    raise KeyError(f"state lacks parameter {name}")
                continue
            arr = tensors[name]
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)


# ---------------------------------------------------------------- accounting

def shape_model(spec, config, head_config=None, num_speakers=2):
    """Zero-valued model used only for counting (no random init)."""
    return SpeakerModel(config, spec, head_config, num_speakers, seed=None)


def backbone_total(config):
    """Analytic backbone parameter total."""
    total, c_in = 0, 1
    for kernel, _, channels in config.conv_spec:
        total += kernel * c_in * channels + channels
        c_in = channels
    d, f = config.hidden, config.ffn_dim
    total += 2 * c_in + c_in * d + d + d  # proj LN, proj, mask embedding
    block = 4 * (d * d + d) + 2 * (2 * d) + (d * f + f) + (f * d + d)
    return total + config.num_layers * block


def analytic_trainable(spec, config):
    """Closed-form backbone-side trainable count (PET modules, or backbone for ft)."""
    n, d = config.num_layers, config.hidden
    bottleneck = 2 * d * spec.bottleneck + spec.bottleneck + d + 2 * d
    m = spec.method
    if m == "ft":
        conv, c_in = 0, 1
        for kernel, _, channels in config.conv_spec:
            conv += kernel * c_in * channels + channels
            c_in = channels
        return backbone_total(config) - conv - d
    if m in ("backend_only", "weighted_sum"):
        return 0
    if m == "houlsby":
        return n * 2 * bottleneck
    if m == "lora":
        return n * 2 * (2 * d * spec.lora_rank)
    total = 0
    if spec.uses_inner:
        total += n * bottleneck + (1 if spec.learnable_scale else 0)
    if spec.uses_inter:
        e = spec.inter_dim
        total += d * e + e + 2 * e
    if spec.uses_prompt:
        total += n * spec.prompt_length * d
    if spec.gated:
        total += (2 * n + 1) * (d + 1)
    return total


def count_trainable(spec, config, head_config=None):
    """Enumerated backbone-side trainable count and its fraction of the backbone total."""
    reg = shape_model(spec, config, head_config).registry
    count = reg.count(trainable=True, owners=("backbone", "pet"))
    return count, count / reg.count(owners=("backbone",))


def backend_count(spec, config, head_config=None, num_speakers=0):
    """Trainable head parameters excluding the classifier (which scoring discards)."""
    reg = shape_model(spec, config, head_config, max(num_speakers, 1)).registry
    return sum(p.size for n, p in reg.trainable().items()
               if n.startswith("head.") and not n.startswith("head.classifier"))


__all__ = [
    "BackboneConfig", "HeadConfig", "MethodSpec", "ParamRegistry", "SpeakerModel",
    "analytic_trainable", "backbone_total", "count_trainable", "is_trainable",
]
