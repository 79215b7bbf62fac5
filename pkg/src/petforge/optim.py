"""Adam with per-parameter learning rates and the warm-up / linear-decay schedule."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class Schedule:
    """Linear warm-up from ``peak/warmup`` to ``peak``, then linear decay to ``floor`` at ``total``."""

    peak: float
    floor: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.peak < 0 or self.floor < 0 or self.floor > self.peak:
            raise ConfigError("need 0 <= floor <= peak")
        if self.warmup_steps < 0 or self.total_steps < 1:
            raise ConfigError("warmup must be >= 0 and total >= 1")

    def rate(self, step):
        if step < self.warmup_steps:
            return self.peak * (step + 1) / self.warmup_steps
        span = self.total_steps - self.warmup_steps
        if span <= 0:
            return self.peak
        frac = (step - self.warmup_steps) / span
        if frac >= 1.0:
            return self.floor
        return max(self.floor, self.peak + (self.floor - self.peak) * frac)


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.t = 0

    def step(self, grads, rates):
        """Apply one update. ``rates`` is a float or a mapping name -> learning rate."""
        if set(grads) != set(self.params):
            missing = sorted(set(self.params) - set(grads))[:3]
            extra = sorted(set(grads) - set(self.params))[:3]
            raise ContractError(f"gradient set mismatch: missing {missing}, unexpected {extra}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ContractError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            lr = rates if isinstance(rates, (int, float)) else rates[name]
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            if lr:
                step = (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
                p.data = (p.data - step).astype(p.dtype, copy=False)

    def state(self, prefix="adam"):
        out = {f"{prefix}.t": np.array([self.t], dtype=np.float64)}
        for name in self.params:
            out[f"{prefix}.m/{name}"] = self.m[name]
            out[f"{prefix}.v/{name}"] = self.v[name]
        return out

    def load_state(self, tensors, prefix="adam"):
        self.t = int(tensors[f"{prefix}.t"][0])
        for name, p in self.params.items():
            for slot, store in (("m", self.m), ("v", self.v)):
                arr = tensors[f"{prefix}.{slot}/{name}"]
                if arr.shape != p.shape:
                    raise ContractError(f"optimizer {slot} for {name} has shape {arr.shape}")
                store[name] = arr.astype(p.dtype, copy=True)
