from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NumericError, StateError
from .params import ParamStore
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState) -> tuple[ParamStore, AdamState]:
    """Bias-corrected Adam update, in place. Parameters without a gradient see g = 0."""
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.shape:
            raise StateError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        if m.shape != p.shape or v.shape != p.shape:
            raise StateError(f"{name}: moment shape mismatch")
        dt = p.data.dtype
        m = (state.beta1 * m + (1.0 - state.beta1) * g).astype(dt)
        v = (state.beta2 * v + (1.0 - state.beta2) * g * g).astype(dt)
        state.m[name] = m
        state.v[name] = v
        if state.lr == 0:
            continue
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(dt)
    return params, state


def grad_check(
    forward: Callable[[ParamStore, object], Tensor],
    params: ParamStore,
    inputs=None,
    h: float = 1e-4,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``forward(params, inputs)`` must return a scalar Tensor. Relative error
    per entry is |a - fd| / max(|a|, |fd|, 1e-8).
    """
    params.zero_grad()
    loss = forward(params, inputs)
    if not loss.is_finite():
        raise NumericError("loss is not finite")
    loss.backward()
    analytic = params.grads()
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = forward(params, inputs).item()
            flat[i] = orig - h
            down = forward(params, inputs).item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            fd = (up - down) / (2 * h)
            denom = max(abs(a[i]), abs(fd), 1e-8)
            worst = max(worst, abs(a[i] - fd) / denom)
    params.zero_grad()
    return worst
