"""Flat, name-indexed view of a network's parameters and their gradient slots."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np
import torch
from torch import nn


class ParamStore:
    """Parameters of ``module`` in registration order, each paired with a gradient slot.

    Gradient slots are the ``.grad`` tensors of the parameters; they are
    allocated (zero-filled) on construction so every parameter always has one.
    """

    def __init__(self, module: nn.Module):
        self.module = module
        self._params = OrderedDict((name, p) for name, p in module.named_parameters())
        for p in self._params.values():
            if p.grad is None:
                p.grad = torch.zeros_like(p)

    def __len__(self):
        return len(self._params)

    def __iter__(self):
        return iter(self._params)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def grad(self, name: str) -> torch.Tensor:
        return self._params[name].grad

    @property
    def num_params(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            if p.grad is None:
                p.grad = torch.zeros_like(p)
            else:
                p.grad.zero_()

    def offsets(self) -> dict[str, slice]:
        """Slice of each block inside the flat vector."""
        out, pos = {}, 0
        for name, p in self._params.items():
            out[name] = slice(pos, pos + p.numel())
            pos += p.numel()
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([p.detach().cpu().numpy().ravel() for p in self._params.values()])

    def grad_vector(self) -> np.ndarray:
        return np.concatenate([p.grad.detach().cpu().numpy().ravel() for p in self._params.values()])

    def load_vector(self, vec: np.ndarray):
        vec = np.asarray(vec)
        if vec.size != self.num_params:
            raise ValueError(f"vector has {vec.size} entries, store holds {self.num_params}")
        with torch.no_grad():
            for name, sl in self.offsets().items():
                p = self._params[name]
                p.copy_(torch.as_tensor(vec[sl].reshape(p.shape), dtype=p.dtype))

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.detach().cpu().numpy().copy()) for n, p in self._params.items())


def backward(loss: torch.Tensor, store: ParamStore) -> ParamStore:
    """Fill the store's gradient slots with d(loss)/d(param), replacing old contents."""
    store.zero_grad()
    loss.backward()
    for p in store._params.values():
        if p.grad is None:  # parameter not reached by this loss
            p.grad = torch.zeros_like(p)
    return store
