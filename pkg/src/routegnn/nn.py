"""Trainable layers, the Adam optimizer, gradient checking, and parameter IO."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, ShapeError, matmul, transpose2d


@dataclass
class Linear:
    """Dense map y = x W^T + b with weight shaped (d_out, d_in)."""
    weight: Tensor
    bias: Tensor | None = None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, transpose2d(self.weight))
        if self.bias is not None:
            y = y + self.bias
        return y


def init_linear(rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True) -> Linear:
    """Weights uniform in [-1/sqrt(d_in), +1/sqrt(d_in)], biases zero."""
    bound = 1.0 / np.sqrt(d_in)
    w = Tensor(rng.uniform(-bound, bound, size=(d_out, d_in)), requires_grad=True)
    b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None
    return Linear(w, b)


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_init(params: Sequence[Tensor], learning_rate: float,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon,
        first_moment=[np.zeros_like(p.data) for p in params],
        second_moment=[np.zeros_like(p.data) for p in params],
    )


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter data."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("adam_step: params, grads, and state lengths disagree")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state


# -- gradient checking ----------------------------------------------------------

def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Compare reverse-mode gradients of a scalar function against central differences.

    Returns max over all coordinates of |analytic - numeric| / max(1, |analytic|).
    ``f`` must recompute its result from the current ``inputs`` data on every call.
    """
    for p in inputs:
        if not p.requires_grad:
            raise ValueError("grad_check inputs must track gradients")
        p.zero_grad()
    out = f()
    if out.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = [np.array(p.grad if p.grad is not None else np.zeros_like(p.data)) for p in inputs]

    worst = 0.0
    for p, ga in zip(inputs, analytic):
        flat = p.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = f().item()
            flat[idx] = orig - h
            down = f().item()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * h)
            a = ga.reshape(-1)[idx]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst


# -- parameter serialization -----------------------------------------------------

PARAMS_FORMAT = "routegnn-params-v1"


def params_to_doc(params: dict[str, Tensor]) -> dict:
    return {
        "format": PARAMS_FORMAT,
        "parameters": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.items()
        },
    }


def params_from_doc(doc: dict) -> dict[str, np.ndarray]:
    if doc.get("format") != PARAMS_FORMAT:
        raise ValueError(f"unsupported parameter format: {doc.get('format')!r}")
    out = {}
    for name, entry in doc["parameters"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[name] = arr
    return out


def save_parameters(path: str | Path, params: dict[str, Tensor]) -> None:
    Path(path).write_text(json.dumps(params_to_doc(params), sort_keys=True))


def load_parameters(path: str | Path) -> dict[str, np.ndarray]:
    return params_from_doc(json.loads(Path(path).read_text()))


def assign_parameters(params: dict[str, Tensor], values: dict[str, np.ndarray]) -> None:
    missing = set(params) - set(values)
    extra = set(values) - set(params)
    if missing or extra:
        raise ValueError(f"parameter names disagree: missing {sorted(missing)}, extra {sorted(extra)}")
    for name, t in params.items():
        v = values[name]
        if v.shape != t.data.shape:
            raise ShapeError(f"parameter {name}: stored shape {v.shape} != model shape {t.data.shape}")
        t.data = v.copy()
