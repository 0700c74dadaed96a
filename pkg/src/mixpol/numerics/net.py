"""Flat parameter vectors and the small MLPs built from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .rng import Rng

Layout = tuple[tuple[str, tuple[int, ...]], ...]


@dataclass(frozen=True)
class MLPSpec:
    """Feedforward net: in_dim -> hidden... -> out_dim, no output activation."""

    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int
    activation: str = "relu"  # "relu" | "tanh"

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.in_dim < 1 or self.out_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("all layer widths must be positive")

    def layout(self) -> Layout:
        dims = (self.in_dim,) + tuple(self.hidden) + (self.out_dim,)
        out = []
        for i in range(len(dims) - 1):
            out.append((f"W{i}", (dims[i + 1], dims[i])))
            out.append((f"b{i}", (dims[i + 1],)))
        return tuple(out)


@dataclass
class ParameterVector:
    """One flat float64 vector plus the named-segment layout it packs."""

    layout: Layout
    data: np.ndarray

    def __post_init__(self):
        want = sum(int(np.prod(s)) for _, s in self.layout)
        if self.data.shape != (want,):
            raise ValueError(f"data has shape {self.data.shape}, layout needs ({want},)")

    @property
    def size(self) -> int:
        return self.data.size

    def _segments(self):
        start = 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            yield name, shape, start, start + n
            start += n

    def view(self, name: str) -> np.ndarray:
        for nm, shape, a, b in self._segments():
            if nm == name:
                return self.data[a:b].reshape(shape)
        raise KeyError(name)

    def leaves(self) -> dict[str, ad.Var]:
        """Fresh gradient leaves viewing the current data, one per segment."""
        return {nm: ad.leaf(self.data[a:b].reshape(shape))
                for nm, shape, a, b in self._segments()}

    def constants(self) -> dict[str, ad.Var]:
        """Constant wrappers for gradient-free forward passes."""
        return {nm: ad.constant(self.data[a:b].reshape(shape))
                for nm, shape, a, b in self._segments()}

    def replace(self, data: np.ndarray) -> "ParameterVector":
        return ParameterVector(self.layout, data)

    @staticmethod
    def pack(layout: Layout, arrays: dict[str, np.ndarray]) -> "ParameterVector":
        flat = np.concatenate([np.asarray(arrays[nm], dtype=np.float64).reshape(-1)
                               for nm, _ in layout])
        return ParameterVector(layout, flat)

    def flatten_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(grads[nm]).reshape(-1) for nm, _ in self.layout])


def init_mlp_params(spec: MLPSpec, rng: Rng) -> ParameterVector:
    """Fan-in uniform init, U[-1/sqrt(fan_in), 1/sqrt(fan_in)] for W and b."""
    layout = spec.layout()
    shapes = dict(layout)
    arrays = {}
    for name, shape in layout:
        # bias bound follows its weight matrix's fan-in, as in common practice
        fan_in = shapes[f"W{name[1:]}"][1] if name[0] == "b" else shape[1]
        bound = 1.0 / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ParameterVector.pack(layout, arrays)


def mlp_forward(spec: MLPSpec, leaves: dict[str, ad.Var], x) -> ad.Var:
    """Forward pass returning the (batch, out_dim) pre-activation output."""
    act = ad.relu if spec.activation == "relu" else ad.tanh
    h = ad.wrap(x)
    n_layers = len(spec.hidden) + 1
    for i in range(n_layers):
        h = ad.affine(h, leaves[f"W{i}"], leaves[f"b{i}"])
        if i < n_layers - 1:
            h = act(h)
    return h
