"""Named parameter registry with deterministic initialization."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

__all__ = ["ParamStore", "glorot_limit"]


def glorot_limit(fan_in, fan_out):
    return float(np.sqrt(6.0 / max(1, fan_in + fan_out)))


class ParamStore:
    """Ordered mapping name -> trainable Tensor.

    Creation order is the iteration order, so optimizer state and checkpoint
    layout are reproducible given the same model construction sequence.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def create(self, name, shape, rng=None, init="glorot"):
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        rows, cols = shape
        if init == "glorot":
            lim = glorot_limit(rows, cols)
            data = rng.uniform(-lim, lim, size=(rows, cols))
        elif init == "zeros":
            data = np.zeros((rows, cols))
        elif isinstance(init, (int, float)):
            data = np.full((rows, cols), float(init))
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def state_arrays(self):
        """Snapshot of all parameter values (copies), keyed by name."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_arrays(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(
                f"parameter set mismatch: missing {sorted(missing)}, "
                f"unexpected {sorted(extra)}"
            )
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.copy()
