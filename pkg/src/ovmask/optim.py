"""AdamW with decoupled weight decay and a linear warmup/decay schedule."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, TrainingError


@dataclass
class Schedule:
    base_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ContractError(f"warmup {self.warmup_steps} must lie inside total {self.total_steps}")


def lr_at(step, sched: Schedule):
    """Linear ramp 0 -> base over warmup, then linear decay base -> 0 at total."""
    if not 0 <= step <= sched.total_steps:
        raise ContractError(f"step {step} outside [0, {sched.total_steps}]")
    if sched.warmup_steps > 0 and step <= sched.warmup_steps:
        return sched.base_lr * step / sched.warmup_steps
    return sched.base_lr * (sched.total_steps - step) / (sched.total_steps - sched.warmup_steps)


class AdamW:
    """Standard bias-corrected moment updates, weight decay applied
    multiplicatively alongside (not inside) the gradient step.

    `lr_scales` maps parameter names to per-parameter learning-rate factors
    (the backbone finetuning ratio); unnamed parameters use factor 1.
    """

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01, lr_scales=None):
        self.params = dict(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.lr_scales = lr_scales or {}
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr):
        """One update over every parameter that carries a gradient."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient in {name}")
            scale = self.lr_scales.get(name, 1.0)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= (lr * scale) * (update + self.weight_decay * p.data)
