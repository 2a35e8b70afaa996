"""Adam with bias-corrected moments over a ParamStore."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import GradStore, ParamStore


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class OptimizerState:
    """First/second moment estimates plus the step counter."""

    config: AdamConfig
    m: GradStore
    v: GradStore
    step: int = 0

    @classmethod
    def initialize(cls, params: ParamStore, config: AdamConfig = AdamConfig()) -> "OptimizerState":
        return cls(config=config, m=GradStore.zeros_for(params), v=GradStore.zeros_for(params))


def adam_step(
    state: OptimizerState, params: ParamStore, grads: GradStore
) -> tuple[ParamStore, OptimizerState]:
    """Apply one update in place; returns the mutated stores for chaining.

    Rejects non-finite gradients before touching any state, so a failed
    step leaves parameters and moments untouched.
    """
    params.check_congruent(grads)
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient for {name!r}; step rejected")

    cfg = state.config
    state.step += 1
    t = state.step
    scale_m = 1.0 / (1.0 - cfg.beta1**t)
    scale_v = 1.0 / (1.0 - cfg.beta2**t)
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m * scale_m) / (np.sqrt(v * scale_v) + cfg.eps)
        params[name] = params[name] - cfg.learning_rate * update
    return params, state
