"""Parameter-efficient tuning modules and the per-pass context handed to the backbone.

Covers the inner-layer adapter (sequential and parallel forms), the
inter-layer adapter on the weighted layer sum, deep prompts, sigmoid gates,
plus the Houlsby and LoRA baselines.
"""
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, ContractError, DimensionError, InputError
from .nn import LayerNorm, Linear, Module, ModuleList, Parameter

METHODS = (
    "ft", "backend_only", "weighted_sum", "houlsby", "lora",
    "inner", "inter", "inner_inter", "prompt", "unipet", "unipet_nogate",
)


@dataclass(frozen=True)
class MethodSpec:
    """Which tuning strategy runs and with what hyperparameters.

    Defaults are the paper-scale settings; :meth:`desk` shrinks the widths
    for the toy backbone.
    """

    method: str = "unipet"
    bottleneck: int = 256
    scale: object = 0.5  # float, or "learnable"
    adapter_mode: str = "parallel"
    prompt_length: int = 30
    inter_dim: int = 512
    lora_rank: int = 64
    lora_alpha: float = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.adapter_mode not in ("sequential", "parallel"):
            raise ConfigError(f"adapter_mode must be sequential or parallel, got {self.adapter_mode!r}")
        if self.scale != "learnable":
            if isinstance(self.scale, str) or not float(self.scale) >= 0:
                raise ConfigError(f"scale must be a non-negative number or 'learnable', got {self.scale!r}")
        for field in ("bottleneck", "prompt_length", "inter_dim", "lora_rank"):
            if int(getattr(self, field)) < 1:
                raise ConfigError(f"{field} must be positive")

    @classmethod
    def desk(cls, method, **overrides):
        base = dict(method=method, bottleneck=32, inter_dim=64, prompt_length=30, lora_rank=8)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = cls.__dataclass_fields__
        extra = set(d) - set(known)
        if extra:
            raise ConfigError(f"unknown method fields: {sorted(extra)}")
        return cls(**d)

    def with_(self, **kw):
        return replace(self, **kw)

    @property
    def uses_inner(self):
        return self.method in ("inner", "inner_inter", "unipet", "unipet_nogate")

    @property
    def uses_inter(self):
        return self.method in ("inter", "inner_inter", "unipet", "unipet_nogate")

    @property
    def uses_prompt(self):
        return self.method in ("prompt", "unipet", "unipet_nogate")

    @property
    def gated(self):
        return self.method == "unipet"

    @property
    def uses_houlsby(self):
        return self.method == "houlsby"

    @property
    def uses_lora(self):
        return self.method == "lora"

    @property
    def learnable_scale(self):
        return self.scale == "learnable"


# ---------------------------------------------------------------- modules

class Bottleneck(Module):
    """``LN(W_up f(W_down h))`` with a zero-initialized up-projection."""

    def __init__(self, init, d, bottleneck):
        if not bottleneck < d:
            raise ConfigError(f"bottleneck {bottleneck} must be smaller than hidden size {d}")
        self.down = Linear(init, d, bottleneck)
        self.up = Linear(init, bottleneck, d, zero=True)
        self.ln = LayerNorm(init, d)

    def __call__(self, h):
        if h.shape[-1] != self.down.weight.shape[0]:
            raise DimensionError(f"adapter expects width {self.down.weight.shape[0]}, got {h.shape}")
        return self.ln(self.up(ag.relu(self.down(h))))


class InnerAdapter(Bottleneck):
    def __init__(self, init, d, bottleneck, mode="parallel"):
        super().__init__(init, d, bottleneck)
        self.mode = mode


class HoulsbyAdapter(Module):
    """Two sequential bottlenecks per block: after attention and after the FFN."""

    def __init__(self, init, d, bottleneck):
        self.attn = Bottleneck(init, d, bottleneck)
        self.ffn = Bottleneck(init, d, bottleneck)


class InterAdapter(Module):
    def __init__(self, init, d, dim):
        self.proj = Linear(init, d, dim)
        self.ln = LayerNorm(init, dim)

    def __call__(self, summed):
        return self.ln(ag.relu(self.proj(summed)))


class LoraPair(Module):
    """Low-rank delta ``(alpha/r) * (x A) B`` for one frozen projection."""

    def __init__(self, init, d, rank, alpha=None, target="query"):
        if rank > d:
            raise ConfigError(f"LoRA rank {rank} exceeds projection width {d}")
        if target not in ("query", "value"):
            raise ConfigError(f"LoRA target must be query or value, got {target!r}")
        self.A = init.xavier(d, rank)
        self.B = init.zeros(rank, d)
        self.rank = rank
        self.target = target
        self.scaling = (rank if alpha is None else alpha) / rank

    def delta(self, x):
        return ((x @ self.A) @ self.B) * self.scaling


class LoraLayer(Module):
    def __init__(self, init, d, rank, alpha=None):
        self.query = LoraPair(init, d, rank, alpha, "query")
        self.value = LoraPair(init, d, rank, alpha, "value")


class PromptBank(Module):
    """One ``[m, d]`` prompt matrix per layer, Xavier-uniform initialized."""

    def __init__(self, init, num_layers, m, d):
        self.length = m
        for i in range(1, num_layers + 1):
            setattr(self, f"layer{i}", init.xavier(m, d, shape=(m, d)))

    def __getitem__(self, i):
        return getattr(self, f"layer{i}")


class GateBank(Module):
    """Prompt gates for layers 1..N and adapter gates for layers 1..N plus the inter adapter."""

    def __init__(self, init, num_layers, d):
        self.prompt = ModuleList([Linear(init, d, 1) for _ in range(num_layers)])
        self.adapter = ModuleList([Linear(init, d, 1) for _ in range(num_layers + 1)])


class PetModules(Module):
    """All PET parameters for one method, named ``pet.*`` inside a model."""

    def __init__(self, init, num_layers, d, spec):
        self.spec = spec
        self.num_layers = num_layers
        self.d = d
        if spec.uses_lora and spec.lora_rank > d:
            raise ConfigError(f"LoRA rank {spec.lora_rank} exceeds hidden size {d}")
        self.inner = None
        if spec.uses_inner:
            self.inner = ModuleList([InnerAdapter(init, d, spec.bottleneck, spec.adapter_mode)
                                     for _ in range(num_layers)])
        self.scale = None
        if spec.uses_inner and spec.learnable_scale:
            self.scale = Parameter(np.full((1,), 0.5, dtype=init.dtype))
        self.houlsby = None
        if spec.uses_houlsby:
            self.houlsby = ModuleList([HoulsbyAdapter(init, d, spec.bottleneck) for _ in range(num_layers)])
        self.lora = None
        if spec.uses_lora:
            self.lora = ModuleList([LoraLayer(init, d, spec.lora_rank, spec.lora_alpha)
                                    for _ in range(num_layers)])
        self.prompt = PromptBank(init, num_layers, spec.prompt_length, d) if spec.uses_prompt else None
        self.gates = GateBank(init, num_layers, d) if spec.gated else None
        self.inter = InterAdapter(init, d, spec.inter_dim) if spec.uses_inter else None

    def adapter_scale(self):
        if self.scale is not None:
            return self.scale
        return float(self.spec.scale)


# ---------------------------------------------------------------- functional forms

def inner_sequential(ffn_out, adapter):
    """``FFN(x) + LN(W_up f(W_down FFN(x)))``."""
    if adapter.mode != "sequential":
        raise ContractError("inner_sequential called with a parallel adapter")
    return ffn_out + adapter(ffn_out)


def inner_parallel(x, adapter):
    """The parallel branch value ``LN(W_up f(W_down x))``, read from the FFN input."""
    if adapter.mode != "parallel":
        raise ContractError("inner_parallel called with a sequential adapter")
    return adapter(x)


def fuse_block_output(ffn_out, z_parallel, x, s, g=None, norm=None):
    """``LN(FFN(x) + g * (s * z) + x)``; ``g=None`` means the branch is ungated."""
    if ffn_out.shape != x.shape or z_parallel.shape != x.shape:
        raise DimensionError(f"fusion inputs disagree: {ffn_out.shape}, {z_parallel.shape}, {x.shape}")
    branch = z_parallel * s
    if g is not None:
        branch = branch * g
    out = (ffn_out + branch) + x
    return norm(out) if norm is not None else out


def layer_weighted_sum(hidden, logits):
    """Softmax(logits)-weighted sum of the layer outputs in ``hidden``."""
    if len(hidden) != logits.shape[0]:
        raise ContractError(f"{len(hidden)} layer outputs but {logits.shape[0]} layer weights")
    w = ag.softmax(logits, axis=0)
    stacked = ag.stack(hidden, axis=0)
    return (stacked * w.reshape((-1,) + (1,) * (stacked.ndim - 1))).sum(axis=0)


def inter_adapter(stack, inter, layer_logits, gate=None):
    """Gated inter-layer adapter over ``H_1..H_N``.

    ``gate`` may be None (ungated), a constant / tensor, or a callable that
    maps the weighted sum to a gate value.
    """
    summed = layer_weighted_sum(stack.H[1:], layer_logits)
    out = inter(summed)
    if callable(gate):
        gate = gate(summed)
    if gate is not None:
        out = out * gate
    return out


def gated_prompts(prompts, gate=None):
    if gate is None:
        return prompts
    return prompts * gate


def compute_gate(hidden, gate_map):
    """``sigmoid(affine(time-mean of hidden))``: one scalar per utterance, shaped to broadcast."""
    if hidden.shape[-2] == 0:
        raise InputError("cannot compute a gate from an empty sequence")
    pooled = hidden.mean(axis=-2, keepdims=True)
    return ag.sigmoid(gate_map(pooled))


def lora_forward(proj, x, lora):
    """Frozen projection plus its low-rank delta."""
    if lora is None:
        return proj(x)
    if lora.A.shape[0] != x.shape[-1]:
        raise DimensionError(f"LoRA input width {lora.A.shape[0]} does not match {x.shape}")
    return proj(x) + lora.delta(x)


# ---------------------------------------------------------------- per-pass context

class PetContext:
    """What the backbone needs from the PET side during one forward pass.

    ``gate_values`` forces gates to constants: keys ``prompt``, ``adapter``
    and ``inter``, each a float or a per-layer sequence (1-based layers
    mapped from index 0). ``blank_prompts`` prepends that many zero rows
    without any prompt parameters, which is how a frozen reference pass
    with the same attention length is expressed.
    """

    def __init__(self, pet=None, gate_values=None, blank_prompts=0):
        self.pet = pet
        self.gate_values = dict(gate_values or {})
        self.blank_prompts = blank_prompts
        unknown = set(self.gate_values) - {"prompt", "adapter", "inter"}
        if unknown:
            raise ConfigError(f"unknown gate overrides: {sorted(unknown)}")

    @property
    def prompt_length(self):
        if self.pet is not None and self.pet.prompt is not None:
            return self.pet.prompt.length
        return self.blank_prompts

    def check_layers(self, num_layers):
        if self.pet is not None and self.pet.num_layers != num_layers:
            raise ContractError(f"PET modules built for {self.pet.num_layers} layers, backbone has {num_layers}")

    def _forced(self, kind, index, like):
        value = self.gate_values.get(kind)
        if value is None:
            return None
        if isinstance(value, (list, tuple)):
            value = value[index - 1]
        return Tensor(np.asarray(value, dtype=like.dtype))

    def _gate(self, kind, index, hidden):
        forced = self._forced(kind, index, hidden)
        if forced is not None:
            return forced
        pet = self.pet
        if pet is None or pet.gates is None:
            return None
        bank = pet.gates.prompt if kind == "prompt" else pet.gates.adapter
        return compute_gate(hidden, bank[index - 1])

    def lora(self, i):
        if self.pet is None or self.pet.lora is None:
            return None, None
        layer = self.pet.lora[i - 1]
        return layer.query, layer.value

    def houlsby(self, i):
        if self.pet is None or self.pet.houlsby is None:
            return None
        return self.pet.houlsby[i - 1]

    def inner(self, i):
        if self.pet is None or self.pet.inner is None:
            return None
        return self.pet.inner[i - 1]

    def scale(self):
        return self.pet.adapter_scale()

    def adapter_gate(self, i, x):
        return self._gate("adapter", i, x)

    def prompt_rows(self, i, prev_h):
        """Rows to prepend before layer ``i``: ``g_pt * P_{i-1}`` broadcast over the batch."""
        batch, _, d = prev_h.shape
        if self.pet is None or self.pet.prompt is None:
            if not self.blank_prompts:
                return None
            return Tensor(np.zeros((batch, self.blank_prompts, d), dtype=prev_h.dtype))
        p = self.pet.prompt[i]
        if p.shape[-1] != d:
            raise DimensionError(f"prompt width {p.shape[-1]} does not match hidden width {d}")
        gate = self._gate("prompt", i, prev_h)
        rows = gated_prompts(p.reshape(1, *p.shape), gate)
        if rows.shape[0] != batch:
            rows = rows + Tensor(np.zeros((batch, 1, 1), dtype=prev_h.dtype))
        return rows

    def inter_gate(self, summed):
        return self._gate("inter", self.pet.num_layers + 1 if self.pet else 1, summed)
