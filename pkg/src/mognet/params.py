"""Named parameter store for the whole network.

Every learnable tensor lives here under a hierarchical dotted name.
Construction order is fixed by the caller and never depends on runtime
flags, so identical (config, seed) pairs produce bit-identical weights.
Weights draw from uniform [-0.08, 0.08]; biases start at zero.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

INIT_SCALE = 0.08


class ModelParams:
    def __init__(self):
        self._store = {}

    def weight(self, name, shape, rng):
        if name in self._store:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), requires_grad=True)
        self._store[name] = t
        return t

    def bias(self, name, shape):
        if name in self._store:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.zeros(shape), requires_grad=True)
        self._store[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._store[name]

    def __contains__(self, name):
        return name in self._store

    def __len__(self):
        return len(self._store)

    def names(self):
        return list(self._store)

    def items(self):
        return self._store.items()

    def tensors(self):
        return list(self._store.values())

    def with_prefix(self, prefix):
        dot = prefix + "."
        return [(n, t) for n, t in self._store.items() if n.startswith(dot)]

    def zero_grads(self):
        for t in self._store.values():
            t.grad = None

    def state_dict(self):
        return {n: t.data.copy() for n, t in self._store.items()}

    def load_state(self, state):
        missing = set(self._store) - set(state)
        extra = set(state) - set(self._store)
        if missing or extra:
            raise ValueError(f"parameter name mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
        for n, t in self._store.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()

    def n_coordinates(self):
        return sum(t.data.size for t in self._store.values())
