"""Physical model of the active atom and the perturber bath.

Natural units throughout: hbar = 1, so level energies and level
(angular) frequencies coincide numerically.  The library never converts
units; callers must supply masses, frequencies, densities and the
thermal speed in one self-consistent system.

Level indices are 0-based everywhere in the Python API.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBohrSpectrum, IndexOutOfRange, NonPositiveParameter

__all__ = ["AtomGasModel", "build_model", "maxwellian", "bohr_frequency"]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AtomGasModel:
    """Immutable atom + bath parameters with the derived Bohr spectrum.

    Attributes
    ----------
    level_frequencies : ndarray, shape (n,)
        Level energies over hbar (= level energies in natural units).
    atom_mass, perturber_mass, reduced_mass : float
    perturber_density : float
        Number density N_P of the bath.
    thermal_speed : float
        Perturber thermal speed u_p, u_p^2 = 2 k_B T / m_p.
    bohr_table : ndarray, shape (n, n)
        bohr_table[j, k] = omega_j - omega_k (antisymmetric, zero diagonal).
    deg_tol : float
        Tolerance used for the nondegeneracy check and the secular selector.
    """

    level_frequencies: np.ndarray
    atom_mass: float
    perturber_mass: float
    perturber_density: float
    thermal_speed: float
    deg_tol: float
    bohr_table: np.ndarray = field(init=False)
    reduced_mass: float = field(init=False)

    def __post_init__(self):
        omega = np.asarray(self.level_frequencies, dtype=float)
        object.__setattr__(self, "level_frequencies", _frozen(omega))
        object.__setattr__(self, "bohr_table", _frozen(omega[:, None] - omega[None, :]))
        mu = self.atom_mass * self.perturber_mass / (self.atom_mass + self.perturber_mass)
        object.__setattr__(self, "reduced_mass", mu)

    @property
    def level_count(self) -> int:
        return self.level_frequencies.size

    def level_energy(self, k: int) -> float:
        """Energy E_k of level k (hbar = 1)."""
        if not 0 <= k < self.level_count:
            raise IndexOutOfRange(f"level index {k} outside 0..{self.level_count - 1}")
        return float(self.level_frequencies[k])


def build_model(
    level_frequencies,
    atom_mass: float,
    perturber_mass: float,
    perturber_density: float,
    thermal_speed: float | None = None,
    temperature: float | None = None,
    boltzmann_constant: float = 1.0,
    deg_tol: float | None = None,
) -> AtomGasModel:
    """Validate parameters and build an :class:`AtomGasModel`.

    Either ``thermal_speed`` (u_p) or ``temperature`` must be given;
    internally only u_p is stored, u_p^2 = 2 k_B T / m_p.

    Raises
    ------
    NonPositiveParameter
        Any mass, density, speed or temperature not strictly positive.
    DegenerateBohrSpectrum
        Two distinct ordered level pairs (j != k) share a Bohr frequency
        within ``deg_tol`` (default 1e-9 * max |omega_jk|), or two levels
        coincide.
    """
    omega = np.atleast_1d(np.asarray(level_frequencies, dtype=float))
    if omega.ndim != 1 or omega.size < 1:
        raise NonPositiveParameter("need at least one level frequency")
    for name, val in [
        ("atom_mass", atom_mass),
        ("perturber_mass", perturber_mass),
        ("perturber_density", perturber_density),
    ]:
        if not val > 0:
            raise NonPositiveParameter(f"{name} must be > 0, got {val}")
    if (thermal_speed is None) == (temperature is None):
        raise NonPositiveParameter("give exactly one of thermal_speed or temperature")
    if thermal_speed is None:
        if not temperature > 0:
            raise NonPositiveParameter(f"temperature must be > 0, got {temperature}")
        thermal_speed = float(np.sqrt(2.0 * boltzmann_constant * temperature / perturber_mass))
    if not thermal_speed > 0:
        raise NonPositiveParameter(f"thermal_speed must be > 0, got {thermal_speed}")

    table = omega[:, None] - omega[None, :]
    scale = float(np.max(np.abs(table))) if omega.size > 1 else 0.0
    if deg_tol is None:
        deg_tol = 1e-9 * scale if scale > 0 else 1e-9
    _check_nondegenerate(omega, table, deg_tol)

    return AtomGasModel(
        level_frequencies=omega,
        atom_mass=float(atom_mass),
        perturber_mass=float(perturber_mass),
        perturber_density=float(perturber_density),
        thermal_speed=float(thermal_speed),
        deg_tol=float(deg_tol),
    )


def _check_nondegenerate(omega: np.ndarray, table: np.ndarray, tol: float) -> None:
    n = omega.size
    if n == 1:
        return
    pairs = [(j, k) for j in range(n) for k in range(n) if j != k]
    freqs = [table[j, k] for j, k in pairs]
    # level frequencies pairwise distinct <=> no omega_jk is zero
    for (j, k), w in zip(pairs, freqs):
        if abs(w) <= tol:
            raise DegenerateBohrSpectrum(
                f"levels {j} and {k} coincide within tolerance ({w!r})"
            )
    order = np.argsort(freqs)
    sf = np.asarray(freqs)[order]
    for a in range(len(sf) - 1):
        if sf[a + 1] - sf[a] <= tol:
            (j1, k1), (j2, k2) = pairs[order[a]], pairs[order[a + 1]]
            raise DegenerateBohrSpectrum(
                f"Bohr frequencies omega[{j1},{k1}] and omega[{j2},{k2}] "
                f"coincide within tolerance ({sf[a]!r} vs {sf[a+1]!r})"
            )


def maxwellian(model: AtomGasModel, v, thermal_speed: float | None = None) -> np.ndarray:
    """Maxwellian velocity distribution of the perturber bath.

    W(v) = (pi u^2)^(-3/2) exp(-|v|^2 / u^2), normalized to 1 under
    the 3D velocity integral.  ``v`` may be a single 3-vector or an
    array of shape (..., 3).  ``thermal_speed`` overrides the bath u_p
    (used e.g. for atomic initial distributions at another temperature).
    """
    u = model.thermal_speed if thermal_speed is None else thermal_speed
    v = np.asarray(v, dtype=float)
    v2 = np.sum(v * v, axis=-1)
    return (np.pi * u * u) ** (-1.5) * np.exp(-v2 / (u * u))


def bohr_frequency(model: AtomGasModel, j: int, k: int) -> float:
    """Bohr frequency omega_jk = omega_j - omega_k (0-based indices)."""
    n = model.level_count
    if not (0 <= j < n and 0 <= k < n):
        raise IndexOutOfRange(f"level pair ({j}, {k}) outside 0..{n - 1}")
    return float(model.bohr_table[j, k])
