"""Tiny layer/parameter registry the networks are assembled from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor


class Module:
    """Base class tracking child modules, parameters, and buffers.

    Assigning a requires_grad Tensor attribute registers it as a parameter;
    assigning a Module registers a child. Non-trainable state (running
    statistics, power-iteration vectors) goes through ``register_buffer``.
    """

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray) -> None:
        self._buffers[name] = np.asarray(array, dtype=np.float64)
        object.__setattr__(self, name, self._buffers[name])

    # ------------------------------------------------------------------ #
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def set_trainable(self, flag: bool) -> None:
        for _, p in self.named_parameters():
            p.requires_grad = bool(flag)

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad = None

    # ------------------------------------------------------------------ #
    def state_arrays(self) -> dict[str, np.ndarray]:
        """All weights and buffers, keyed by dotted path."""
        out: dict[str, np.ndarray] = {}
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, b in self.named_buffers():
            out["buf." + name] = b
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy values into existing parameters/buffers, shape-checked."""
        own = self.state_arrays()
        for name, target in own.items():
            if name not in arrays:
                raise CheckpointError(f"checkpoint missing array '{name}'")
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != target.shape:
                raise CheckpointError(
                    f"array '{name}' has shape {src.shape}, expected {target.shape}")
            target[...] = src
