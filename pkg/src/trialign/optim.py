"""AdamW with decoupled weight decay, cosine schedule with linear warmup,
global-norm gradient clipping, and micro-batch gradient averaging.

Parameters and gradients travel as flat dicts of ndarrays (the trainer keys
them "modality/tensor"). Weight decay is applied only to keys flagged in the
optimizer state, separately from the adaptive step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, NumericsError, ShapeError


@dataclass
class Schedule:
    """Linear warmup into cosine decay, evaluated per optimizer step."""

    base_lr: float
    total_steps: int
    warmup_steps: int | None = None
    floor_lr: float = 0.0

    def __post_init__(self):
        if self.warmup_steps is None:
            self.warmup_steps = round(0.02 * self.total_steps)
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError(
                f"warmup_steps must be in [0, {self.total_steps}], got {self.warmup_steps}"
            )


def lr_at(schedule: Schedule, step: int) -> float:
    """Learning rate at an optimizer step in [0, total_steps]."""
    if not 0 <= step <= schedule.total_steps:
        raise ConfigError(f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.base_lr * step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    if span == 0:
        return schedule.base_lr
    cos_factor = 0.5 * (1.0 + math.cos(math.pi * (step - schedule.warmup_steps) / span))
    return schedule.floor_lr + (schedule.base_lr - schedule.floor_lr) * cos_factor


def clip_global_norm(grads: dict[str, np.ndarray],
                     max_norm: float = 1.0) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by max_norm/g when the global l2 norm g exceeds it."""
    sq = 0.0
    for name, g in grads.items():
        flat = g.ravel().astype(np.float64, copy=False)
        s = float(flat @ flat)
        if not math.isfinite(s):
            raise NumericsError(f"non-finite gradient in {name!r}")
        sq += s
    norm = math.sqrt(sq)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {name: g * np.asarray(scale, dtype=g.dtype) for name, g in grads.items()}, norm


@dataclass
class OptimState:
    """AdamW moments plus hyperparameters; moments are shape-congruent with params."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decay: dict[str, bool] = field(default_factory=dict)


def init_optim_state(params: dict[str, np.ndarray], beta1: float = 0.9, beta2: float = 0.999,
                     eps: float = 1e-8, weight_decay: float = 0.0,
                     decay_keys=None) -> OptimState:
    decay_set = set(decay_keys) if decay_keys is not None else set(params)
    return OptimState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay,
        decay={k: k in decay_set for k in params},
    )


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: OptimState, lr: float) -> tuple[dict[str, np.ndarray], OptimState]:
    """One bias-corrected Adam step plus the decoupled decay term -lr*wd*param.

    Returns fresh parameter arrays; the moment tensors in `state` are updated.
    """
    if set(params) != set(grads):
        raise ShapeError("params and grads must share keys")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        g = g.astype(p.dtype, copy=False)
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_p = p - np.asarray(lr, dtype=p.dtype) * update
        if state.decay.get(name, False) and state.weight_decay != 0.0:
            new_p = new_p - np.asarray(lr * state.weight_decay, dtype=p.dtype) * p
        out[name] = new_p.astype(p.dtype, copy=False)
    return out, state


def accumulate(micro_grads) -> dict[str, np.ndarray]:
    """Mean of equally weighted micro-batch gradient dicts."""
    micro_grads = list(micro_grads)
    if not micro_grads:
        raise ConfigError("accumulate requires at least one micro-batch")
    keys = set(micro_grads[0])
    for g in micro_grads[1:]:
        if set(g) != keys:
            raise ShapeError("micro-batch gradients must share keys")
    out = {}
    for key in micro_grads[0]:
        acc = np.zeros_like(micro_grads[0][key], dtype=np.float64)
        for g in micro_grads:
            acc += g[key]
        out[key] = (acc / len(micro_grads)).astype(micro_grads[0][key].dtype)
    return out
