"""Time evolution of the velocity-resolved density matrix.

Fixed-step classical Runge-Kutta (4th order) under a collisional
generator, with monitors for the three structural claims: the field
stays Hermitian per node, the weighted trace is conserved, and the
minimum node eigenvalue never drops below round-off scale.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .atom import AtomGasModel
from .errors import (
    BBEError,
    GridMismatch,
    NonPositiveInitialState,
    NormalizationFailure,
    PositivityBreach,
    StabilityGuardTripped,
)
from .generators import Generator
from .grid import VelocityGrid

__all__ = [
    "DensityField",
    "Trajectory",
    "make_initial_field",
    "evolve",
    "trace_total",
    "positivity_min_eig",
]


@dataclass
class DensityField:
    """Velocity-resolved density matrix: one complex n x n block per node."""

    grid: VelocityGrid
    values: np.ndarray
    time: float = 0.0

    @property
    def n_levels(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "DensityField":
        return DensityField(self.grid, self.values.copy(), self.time)

    def hermiticity_residual(self) -> float:
        """Max per-node deviation ||rho - rho^dagger|| (max-abs entry)."""
        d = self.values - np.conj(np.swapaxes(self.values, 1, 2))
        return float(np.max(np.abs(d))) if d.size else 0.0


def trace_total(rho: DensityField) -> float:
    """Weighted total trace sum_i w_i sum_k rho_kk(v_i)."""
    tr = np.einsum("i,ikk->", rho.grid.weights, rho.values)
    return float(tr.real)


def positivity_min_eig(rho: DensityField) -> tuple[float, int]:
    """Minimum node-matrix eigenvalue and the node where it occurs.

    Node matrices are Hermitized before diagonalization so that the
    round-off anti-Hermitian part cannot masquerade as a negative
    eigenvalue; the Hermiticity residual is monitored separately.
    """
    herm = 0.5 * (rho.values + np.conj(np.swapaxes(rho.values, 1, 2)))
    eigs = np.linalg.eigvalsh(herm)
    flat_idx = int(np.argmin(eigs[:, 0]))
    return float(eigs[flat_idx, 0]), flat_idx


def _atomic_thermal_speed(gas: AtomGasModel) -> float:
    # model thermal_speed is the perturber's; same temperature for the atom
    return gas.thermal_speed * np.sqrt(gas.perturber_mass / gas.atom_mass)


def make_initial_field(
    grid: VelocityGrid,
    gas: AtomGasModel,
    preset: str = "ground-thermal",
    levels: tuple[int, int] = (0, 1),
    thermal_speed: float | None = None,
    values: np.ndarray | None = None,
    herm_tol: float = 1e-10,
    psd_tol: float = 1e-10,
) -> DensityField:
    """Build a Hermitian, node-PSD, unit-trace initial field.

    Presets: ``ground-thermal`` (single level ``levels[0]`` with an
    atomic Maxwellian), ``superposition`` (coherent equal mix of
    ``levels``, rank-1 node projectors times a Maxwellian), ``custom``
    (caller-supplied ``values`` of shape (n_nodes, n, n), validated
    then trace-renormalized).
    """
    n = gas.level_count
    nn = grid.n_nodes
    if thermal_speed is None:
        thermal_speed = _atomic_thermal_speed(gas)
    speed_sq = np.einsum("ij,ij->i", grid.nodes, grid.nodes)
    maxw = np.exp(-speed_sq / thermal_speed**2) / (
        np.pi * thermal_speed**2
    ) ** 1.5

    if preset == "ground-thermal":
        out = np.zeros((nn, n, n), dtype=complex)
        out[:, levels[0], levels[0]] = maxw
    elif preset == "superposition":
        a, b = levels
        if a == b:
            raise BBEError("superposition preset needs two distinct levels")
        out = np.zeros((nn, n, n), dtype=complex)
        for p in (a, b):
            for q in (a, b):
                out[:, p, q] = 0.5 * maxw
    elif preset == "custom":
        if values is None:
            raise BBEError("custom preset needs explicit field values")
        out = np.asarray(values, dtype=complex)
        if out.shape != (nn, n, n):
            raise GridMismatch(
                f"custom field shape {out.shape} does not match "
                f"({nn}, {n}, {n})"
            )
        out = out.copy()
    else:
        raise BBEError(f"unknown initial-field preset {preset!r}")

    scale = max(float(np.max(np.abs(out))), 1e-300)
    herm_res = float(np.max(np.abs(out - np.conj(np.swapaxes(out, 1, 2)))))
    if herm_res > herm_tol * scale:
        raise NonPositiveInitialState(
            f"initial field is not Hermitian (residual {herm_res:.3e})"
        )
    out = 0.5 * (out + np.conj(np.swapaxes(out, 1, 2)))
    min_eig = float(np.min(np.linalg.eigvalsh(out)))
    if min_eig < -psd_tol * scale:
        raise NonPositiveInitialState(
            f"initial field has a negative node eigenvalue {min_eig:.3e}"
        )
    tr = float(np.einsum("i,ikk->", grid.weights, out).real)
    if not tr > 0:
        raise NormalizationFailure(
            f"initial field has non-positive total trace {tr:.3e}"
        )
    return DensityField(grid, out / tr, 0.0)


@dataclass
class Trajectory:
    """Sampled observables of one evolution run."""

    times: np.ndarray
    trace: np.ndarray
    populations: np.ndarray  # (n_samples, n)
    coherence_abs: np.ndarray  # (n_samples, n_pairs) for pairs m < k
    coherence_pairs: list
    min_eig: np.ndarray
    min_eig_node: np.ndarray
    herm_residual: np.ndarray
    breaches: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final: DensityField | None = None

    def to_csv(self, path) -> None:
        header = (
            ["t", "trace"]
            + [f"pop_{m}" for m in range(self.populations.shape[1])]
            + [f"coh_{m}{k}_abs" for (m, k) in self.coherence_pairs]
            + ["min_eig", "min_eig_node", "herm_residual"]
        )
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for s in range(len(self.times)):
                row = (
                    [self.times[s], self.trace[s]]
                    + list(self.populations[s])
                    + list(self.coherence_abs[s])
                    + [
                        self.min_eig[s],
                        int(self.min_eig_node[s]),
                        self.herm_residual[s],
                    ]
                )
                w.writerow(
                    [
                        f"{x:.17g}" if isinstance(x, float) else x
                        for x in row
                    ]
                )


def _operator_norm_estimate(g: Generator) -> float:
    """Max absolute row sum over all blocks (bounds the spectral radius)."""
    norm = float(np.max(np.sum(np.abs(g.pop_block), axis=1))) if g.pop_block.size else 0.0
    for block in g.coh_blocks.values():
        norm = max(norm, float(np.max(np.sum(np.abs(block), axis=1))))
    return norm


def evolve(
    g: Generator,
    rho0: DensityField,
    t_final: float,
    dt: float,
    sample_every: int = 1,
    positivity_action: str = "warn",
    eps_pos: float = 1e-8,
    keep_snapshots: bool = False,
    guard: float = 0.5,
) -> Trajectory:
    """Propagate drho/dt = G rho with fixed-step 4th-order Runge-Kutta.

    ``positivity_action``: ``warn`` records and warns on min node
    eigenvalues below -eps_pos (relative to the field scale); ``abort``
    raises :class:`PositivityBreach`; ``ignore`` records only.
    """
    if rho0.grid.descriptor() != g.grid.descriptor():
        raise GridMismatch("initial field and generator grids differ")
    if not dt > 0 or not t_final >= 0:
        raise BBEError("need dt > 0 and t_final >= 0")
    if positivity_action not in ("warn", "abort", "ignore"):
        raise BBEError(f"unknown positivity action {positivity_action!r}")
    gnorm = _operator_norm_estimate(g)
    if dt * gnorm > guard:
        raise StabilityGuardTripped(
            f"dt * ||G|| = {dt * gnorm:.3g} exceeds the stability guard "
            f"{guard}; reduce dt below {guard / max(gnorm, 1e-300):.3g}"
        )

    n = g.n_levels
    pairs = [(m, k) for m in range(n) for k in range(m + 1, n)]
    n_steps = max(int(round(t_final / dt)), 0)
    rho = rho0.copy()
    samples: list = []
    breaches: list = []
    snapshots: list = []

    def record(step: int) -> None:
        t = rho0.time + step * dt
        tr = trace_total(rho)
        pops = np.einsum("i,imm->m", rho.grid.weights, rho.values).real
        coh = [
            abs(complex(rho.grid.weights @ rho.values[:, m, k]))
            for (m, k) in pairs
        ]
        me, node = positivity_min_eig(rho)
        hres = rho.hermiticity_residual()
        samples.append((t, tr, pops, coh, me, node, hres))
        scale = max(float(np.max(np.abs(rho.values))), 1e-300)
        if me < -eps_pos * scale:
            breaches.append((t, me, node))
            msg = (
                f"positivity breach at t = {t:.6g}: min node eigenvalue "
                f"{me:.3e} at node {node}"
            )
            if positivity_action == "abort":
                raise PositivityBreach(msg)
            if positivity_action == "warn":
                warnings.warn(msg, RuntimeWarning, stacklevel=3)
        if keep_snapshots:
            snapshots.append(DensityField(rho.grid, rho.values.copy(), t))

    record(0)
    for step in range(1, n_steps + 1):
        y = rho.values
        k1 = g.apply(y)
        k2 = g.apply(y + 0.5 * dt * k1)
        k3 = g.apply(y + 0.5 * dt * k2)
        k4 = g.apply(y + dt * k3)
        rho.values = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        rho.time = rho0.time + step * dt
        if step % sample_every == 0 or step == n_steps:
            record(step)

    return Trajectory(
        times=np.array([s[0] for s in samples]),
        trace=np.array([s[1] for s in samples]),
        populations=np.array([s[2] for s in samples]),
        coherence_abs=np.array([s[3] for s in samples]).reshape(
            len(samples), len(pairs)
        ),
        coherence_pairs=pairs,
        min_eig=np.array([s[4] for s in samples]),
        min_eig_node=np.array([s[5] for s in samples], dtype=int),
        herm_residual=np.array([s[6] for s in samples]),
        breaches=breaches,
        snapshots=snapshots,
        final=rho,
    )
