"""Spatially modulated coefficient fields.

A field is a constant tensor times a real trigonometric-polynomial modulation
``a(y) = T * m(y)``. Tensors act on row-major flattened gradients
(``N^2 x N^2``); an ``N x N`` matrix is lifted component-wise and a scalar
means a multiple of the identity. Densities use a scalar tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ap_core import TrigPolynomial
from .errors import ShapeError
from .fem import lift_matrix


def as_tensor(value, n: int) -> np.ndarray:
    """Normalize a scalar, ``N x N`` or ``N^2 x N^2`` array to an ``N^2 x N^2`` tensor."""
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return a * np.eye(n * n)
    if a.shape == (n * n, n * n):
        return a.copy()
    if a.shape == (n, n):
        return lift_matrix(a)
    raise ShapeError(f"cannot interpret shape {a.shape} as a tensor in dimension {n}")


@dataclass(frozen=True)
class CoefficientField:
    """``value(y) = base * modulation(y)``, with ``modulation = 1`` when absent."""

    base: np.ndarray
    modulation: Optional[TrigPolynomial] = None

    @classmethod
    def tensor(cls, value, n: int, modulation: Optional[TrigPolynomial] = None):
        return cls(as_tensor(value, n), modulation)

    @classmethod
    def scalar(cls, value: float, modulation: Optional[TrigPolynomial] = None):
        return cls(np.asarray(float(value)), modulation)

    @property
    def is_scalar(self) -> bool:
        return np.asarray(self.base).ndim == 0

    def factor(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.modulation is None:
            return np.ones(y.shape[:-1] if y.ndim > 1 else y.shape[:1])
        return np.real(self.modulation(y))

    def sample(self, y) -> np.ndarray:
        """Values at points ``y`` of shape (n_points, N)."""
        f = self.factor(y)
        base = np.asarray(self.base, dtype=float)
        return f.reshape(f.shape + (1,) * base.ndim) * base

    def sample_cells(self, mesh, scale: float = 1.0) -> np.ndarray:
        """Per-cell values at centroids, with ``y = x / scale``."""
        return self.sample(mesh.centroids() / scale)

    def scaled(self, c: float) -> "CoefficientField":
        return CoefficientField(np.asarray(self.base) * c, self.modulation)

    def is_zero(self) -> bool:
        return not np.any(np.asarray(self.base))

    def to_dict(self) -> dict:
        out = {"base": np.asarray(self.base).tolist()}
        if self.modulation is not None:
            out["modulation"] = self.modulation.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict, n: Optional[int] = None, scalar: bool = False):
        base = np.asarray(data["base"], dtype=float)
        if not scalar and n is not None:
            base = as_tensor(base, n)
        mod = data.get("modulation")
        return cls(base, TrigPolynomial.from_dict(mod) if mod is not None else None)
