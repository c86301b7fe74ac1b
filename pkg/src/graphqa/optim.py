"""Adam optimiser, weight initialisation and JSON checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .tensor import Parameter

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out)).astype(dtype)


def zeros(n: int, dtype=np.float32) -> np.ndarray:
    return np.zeros(n, dtype=dtype)


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Iterable[Parameter], state: AdamState) -> None:
    """One bias-corrected Adam update from the accumulated ``grad`` fields."""
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m = state.beta1 * m + (1 - state.beta1) * g
        v = state.beta2 * v + (1 - state.beta2) * g * g
        state.m[p.name], state.v[p.name] = m, v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype)


def save_checkpoint(path: Union[str, Path], config: dict, params: Iterable[Parameter]) -> None:
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": config,
        "params": [
            {"name": p.name, "shape": list(p.shape), "values": [float(x) for x in p.data.ravel()]}
            for p in params
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def read_checkpoint(path: Union[str, Path]) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    return doc


def load_params_into(doc: dict, params: Iterable[Parameter]) -> None:
    """Copy checkpoint values into freshly built parameters, checking names and shapes."""
    stored = {rec["name"]: rec for rec in doc["params"]}
    params = list(params)
    names = {p.name for p in params}
    if set(stored) != names:
        missing = sorted(names - set(stored))
        extra = sorted(set(stored) - names)
        raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {extra}")
    for p in params:
        rec = stored[p.name]
        if tuple(rec["shape"]) != p.shape:
            raise CheckpointError(f"{p.name}: checkpoint shape {rec['shape']} != model shape {list(p.shape)}")
        p.data = np.asarray(rec["values"], dtype=p.data.dtype).reshape(p.shape)
