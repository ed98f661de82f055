"""Adam, SGD and RMSProp updates over ``name -> array`` parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ALGORITHMS = ("adam", "sgd", "rmsprop")


@dataclass
class OptimizerState:
    algorithm: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.9
    eps: float = 1e-8
    step_count: int = 0
    moments: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown optimizer {self.algorithm!r}")

    def _slots(self, name, like):
        if name not in self.moments:
            n = {"adam": 2, "sgd": 0, "rmsprop": 1}[self.algorithm]
            self.moments[name] = [np.zeros_like(like) for _ in range(n)]
        return self.moments[name]

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {f"{name}#{i}": m for name, slots in self.moments.items() for i, m in enumerate(slots)}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        moments: dict[str, list] = {}
        for key in sorted(arrays, key=lambda k: (k.rsplit("#", 1)[0], int(k.rsplit("#", 1)[1]))):
            name, _ = key.rsplit("#", 1)
            moments.setdefault(name, []).append(np.array(arrays[key], dtype=float))
        self.moments = moments


def optimizer_step(state: OptimizerState, params: dict, grads: dict) -> dict:
    """Update ``params`` in place and return it."""
    state.step_count += 1
    t = state.step_count
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {p.shape}")
        slots = state._slots(name, p)
        if state.algorithm == "sgd":
            p -= state.lr * g
        elif state.algorithm == "rmsprop":
            (v,) = slots
            v *= state.decay
            v += (1.0 - state.decay) * g * g
            p -= state.lr * g / (np.sqrt(v) + state.eps)
        else:
            m, v = slots
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            m_hat = m / (1.0 - state.beta1 ** t)
            v_hat = v / (1.0 - state.beta2 ** t)
            p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total
