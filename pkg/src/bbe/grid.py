"""Cartesian velocity grid used to discretize the collision integrals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveParameter

__all__ = ["VelocityGrid"]


@dataclass(frozen=True)
class VelocityGrid:
    """Midpoint-rule Cartesian grid on [-L, L]^3.

    Nodes sit at cell centers, so the weights are the constant cell
    volume h^3 with h = 2L / n_axis, the weight sum is exactly (2L)^3,
    and the node set is symmetric under v -> -v.  An odd ``n_axis``
    places a node at the origin.
    """

    extent: float
    n_axis: int
    nodes: np.ndarray = field(init=False)    # (N, 3)
    weights: np.ndarray = field(init=False)  # (N,)

    def __post_init__(self):
        if not self.extent > 0:
            raise NonPositiveParameter(f"grid extent must be > 0, got {self.extent}")
        if self.n_axis < 1:
            raise NonPositiveParameter(f"n_axis must be >= 1, got {self.n_axis}")
        h = 2.0 * self.extent / self.n_axis
        axis = -self.extent + h * (np.arange(self.n_axis) + 0.5)
        vx, vy, vz = np.meshgrid(axis, axis, axis, indexing="ij")
        nodes = np.column_stack([vx.ravel(), vy.ravel(), vz.ravel()])
        nodes.setflags(write=False)
        weights = np.full(nodes.shape[0], h**3)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def cell_width(self) -> float:
        return 2.0 * self.extent / self.n_axis

    def descriptor(self) -> dict:
        """Hashable description used for cache keys and mismatch checks."""
        return {"kind": "cartesian-midpoint", "extent": self.extent, "n_axis": self.n_axis}

    def quadrature(self, values: np.ndarray) -> np.ndarray:
        """Weighted sum over nodes; ``values`` has node index first."""
        return np.tensordot(self.weights, values, axes=(0, 0))
