"""Named trainable parameters with Adam/SGD updates and gradient plumbing."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionError, TrainingError
from .tensor import Tensor

__all__ = ["ParamSet", "forward_backward", "optimizer_step", "matmul_arrays", "xavier_uniform"]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def xavier_uniform(shape, rng: np.random.Generator) -> np.ndarray:
    """Xavier/Glorot uniform init; fan counts from the first two axes."""
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[1] if len(shape) > 1 else shape[0]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class _Entry:
    __slots__ = ("tensor", "m", "v", "t")

    def __init__(self, tensor: Tensor):
        self.tensor = tensor
        self.m = np.zeros_like(tensor.data)
        self.v = np.zeros_like(tensor.data)
        self.t = 0


class ParamSet:
    """An ordered mapping name -> trainable tensor plus optimizer state."""

    def __init__(self):
        self._entries: dict[str, _Entry] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self._entries[name] = _Entry(t)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> list[str]:
        return list(self._entries)

    def tensors(self) -> list[Tensor]:
        return [e.tensor for e in self._entries.values()]

    def zero_grad(self) -> None:
        for e in self._entries.values():
            e.tensor.grad = None

    def step(self, lr: float, mode: str = "adam") -> None:
        """Apply one optimizer update and clear gradients.

        Parameters without a populated gradient are left untouched.
        """
        for e in self._entries.values():
            g = e.tensor.grad
            if g is None:
                continue
            if mode == "sgd":
                e.tensor.data -= lr * g
            elif mode == "adam":
                e.t += 1
                e.m = ADAM_BETA1 * e.m + (1.0 - ADAM_BETA1) * g
                e.v = ADAM_BETA2 * e.v + (1.0 - ADAM_BETA2) * (g * g)
                m_hat = e.m / (1.0 - ADAM_BETA1 ** e.t)
                v_hat = e.v / (1.0 - ADAM_BETA2 ** e.t)
                e.tensor.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            else:
                raise ValueError(f"unknown optimizer mode: {mode!r}")
        self.zero_grad()

    # Serialization hooks: parameter values plus Adam state so that a
    # checkpoint round-trip leaves subsequent training bit-identical.
    def state_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, e in self._entries.items():
            out[f"{prefix}{name}"] = e.tensor.data
            out[f"{prefix}{name}.adam.m"] = e.m
            out[f"{prefix}{name}.adam.v"] = e.v
            out[f"{prefix}{name}.adam.t"] = np.array([float(e.t)])
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, e in self._entries.items():
            value = arrays[f"{prefix}{name}"]
            if value.shape != e.tensor.data.shape:
                raise DimensionError(
                    f"checkpoint shape mismatch for {name!r}: "
                    f"{value.shape} vs {e.tensor.data.shape}"
                )
            e.tensor.data = value.copy()
            e.m = arrays[f"{prefix}{name}.adam.m"].copy()
            e.v = arrays[f"{prefix}{name}.adam.v"].copy()
            e.t = int(arrays[f"{prefix}{name}.adam.t"][0])


def forward_backward(params: ParamSet, loss_fn, *inputs):
    """Run loss_fn, check finiteness, backpropagate into params.

    loss_fn may return either a scalar Tensor or a (Tensor, components)
    pair where components maps term names to scalar Tensors or floats;
    every component is checked and named on failure.
    Returns (loss_value, components_as_floats).
    """
    params.zero_grad()
    out = loss_fn(*inputs)
    if isinstance(out, tuple):
        loss, components = out
    else:
        loss, components = out, {}
    comp_values: dict[str, float] = {}
    for term, value in components.items():
        v = value.item() if isinstance(value, Tensor) else float(value)
        if not math.isfinite(v):
            raise TrainingError(f"non-finite loss term {term!r}: {v}")
        comp_values[term] = v
    loss_value = loss.item()
    if not math.isfinite(loss_value):
        raise TrainingError(f"non-finite total loss: {loss_value}")
    loss.backward()
    return loss_value, comp_values


def optimizer_step(params: ParamSet, lr: float, mode: str = "adam") -> None:
    """Update all parameters from their accumulated gradients."""
    params.step(lr, mode=mode)


def matmul_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain dense matrix product with explicit shape checking."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul_arrays expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b
