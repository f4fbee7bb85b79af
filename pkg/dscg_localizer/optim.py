"""Adam and Adafactor updates over named parameter maps, plus global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import ContractError
from .gnn import ModelParams
from .numcore import Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

ADAFACTOR_EPS1 = 1e-30
ADAFACTOR_EPS2 = 1e-3
ADAFACTOR_CLIP = 1.0
ADAFACTOR_DECAY = 0.8

OPTIMISERS = ("adam", "adafactor")


@dataclass(slots=True)
class OptimiserState:
    """Step counter plus per-parameter slots keyed ``<slot>/<parameter name>``."""

    kind: str
    step: int = 0
    slots: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in OPTIMISERS:
            raise ContractError(f"unknown optimiser '{self.kind}'")

    def slot(self, slot: str, name: str, shape: Tuple[int, ...]) -> np.ndarray:
        return self.slots.get(f"{slot}/{name}", np.zeros(shape))


def init_state(kind: str) -> OptimiserState:
    return OptimiserState(kind=kind)


def global_norm(grads: Mapping[str, Tensor]) -> float:
    return math.sqrt(sum(float(np.sum(g.value * g.value)) for _, g in sorted(grads.items())))


def clip_gradients(grads: Mapping[str, Tensor], max_norm: Optional[float]) -> Tuple[Dict[str, Tensor], float]:
    """Rescale all gradients together when their global L2 norm exceeds ``max_norm``."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return dict(grads), norm
    factor = max_norm / norm
    return {name: Tensor(g.value * factor) for name, g in grads.items()}, norm


def _adam(
    name: str,
    value: np.ndarray,
    grad: np.ndarray,
    state: OptimiserState,
    lr: float,
    t: int,
    out: Dict[str, np.ndarray],
) -> np.ndarray:
    m = ADAM_BETA1 * state.slot("m", name, value.shape) + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.slot("v", name, value.shape) + (1.0 - ADAM_BETA2) * grad * grad
    out[f"m/{name}"] = m
    out[f"v/{name}"] = v
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    return value - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def _rms(array: np.ndarray) -> float:
    return float(np.sqrt(np.mean(array * array)))


def _adafactor(
    name: str,
    value: np.ndarray,
    grad: np.ndarray,
    state: OptimiserState,
    lr: float,
    t: int,
    out: Dict[str, np.ndarray],
) -> np.ndarray:
    beta2 = 1.0 - t ** (-ADAFACTOR_DECAY)
    sq = grad * grad + ADAFACTOR_EPS1
    if value.ndim == 2:
        rows = beta2 * state.slot("vr", name, (value.shape[0],)) + (1.0 - beta2) * sq.mean(axis=1)
        cols = beta2 * state.slot("vc", name, (value.shape[1],)) + (1.0 - beta2) * sq.mean(axis=0)
        out[f"vr/{name}"] = rows
        out[f"vc/{name}"] = cols
        second = np.outer(rows, cols) / rows.mean()
    else:
        second = beta2 * state.slot("v", name, value.shape) + (1.0 - beta2) * sq
        out[f"v/{name}"] = second
    update = grad / np.sqrt(second)
    update = update / max(1.0, _rms(update) / ADAFACTOR_CLIP)
    step_size = max(ADAFACTOR_EPS2, _rms(value)) * lr
    return value - step_size * update


def optimiser_step(
    params: ModelParams,
    grads: Mapping[str, Tensor],
    state: OptimiserState,
    lr: float,
) -> Tuple[ModelParams, OptimiserState]:
    """One update of every parameter. Returns new parameters and a new state."""
    named = params.named()
    if set(grads) != set(named):
        missing = sorted(set(named) - set(grads))
        extra = sorted(set(grads) - set(named))
        raise ContractError(f"gradient keys do not match parameters (missing={missing}, unexpected={extra})")
    t = state.step + 1
    rule = _adam if state.kind == "adam" else _adafactor
    slots: Dict[str, np.ndarray] = {}
    updated: Dict[str, np.ndarray] = {}
    for name, tensor in named.items():
        grad = grads[name].value
        if grad.shape != tensor.shape:
            raise ContractError(f"gradient for {name} has shape {grad.shape}, parameter has {tensor.shape}")
        updated[name] = rule(name, tensor.value, grad, state, lr, t, slots)
    return params.replace(updated), OptimiserState(kind=state.kind, step=t, slots=slots)


__all__ = [
    "OptimiserState",
    "OPTIMISERS",
    "init_state",
    "global_norm",
    "clip_gradients",
    "optimiser_step",
]
