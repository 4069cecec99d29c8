"""On-shell multichannel scattering amplitudes and cross sections.

Conventions (hbar = 1, center-of-mass frame, channel momenta k_i = mu*v_i):

* ``f(m, v_out <- k, v_in)`` is the amplitude for scattering from atomic
  level k with relative velocity v_in into level m with v_out, on the
  energy shell  mu*v_out^2/2 + E_m = mu*v_in^2/2 + E_k.
* The normalization is fixed by
  |f(m <- k)|^2 = (v_in / v_out) * dsigma_{k->m}/dOmega,
  i.e. the partial-wave expansion
  f_mk(theta) = sum_l (2l+1) (S^l_mk - delta_mk) P_l(cos theta)
                / (2 i sqrt(k_m k_k)).
  With this convention the multichannel optical theorem reads
  Im f(k <- k, forward) = (mu v / 4 pi) * sigma_T(k, v).

All built-in models are rotationally invariant: amplitudes depend only
on the entrance speed and the angle between exit and entrance velocity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator, RegularGridInterpolator

from .atom import AtomGasModel
from .errors import (
    ClosedEntranceChannel,
    MalformedTable,
    NonHermitianReactionMatrix,
    NonPositiveParameter,
    OffShellAmplitude,
)

__all__ = [
    "AmplitudeModel",
    "ConstantAmplitude",
    "PartialWaveAmplitude",
    "TabulatedAmplitude",
    "build_amplitude_model",
    "total_cross_section",
    "optical_theorem_residual",
    "load_amplitude_table",
]

_SHELL_TOL = 1e-8           # relative, round-off guard on explicit on-shell checks
_UNITARITY_TOL = 1e-12
_K_FLOOR = 1e-30            # momentum floor guarding 1/sqrt(k k') at thresholds


class AmplitudeModel:
    """Evaluation contract shared by all amplitude models.

    Subclasses implement :meth:`pair_amplitude`; everything else
    (on-shell bookkeeping, the explicit-velocity entry point) lives here.
    Models are immutable after construction and safe to share.
    """

    kind = "abstract"

    def __init__(self, levels, reduced_mass: float):
        self.levels = np.asarray(levels, dtype=float)
        self.levels.setflags(write=False)
        self.reduced_mass = float(reduced_mass)
        if not self.reduced_mass > 0:
            raise NonPositiveParameter("reduced_mass must be > 0")

    @property
    def n_levels(self) -> int:
        return self.levels.size

    def exit_speed_sq(self, m: int, k: int, speed_in) -> np.ndarray:
        """v_out^2 for channel m given entrance (k, speed_in); negative if closed."""
        s = np.asarray(speed_in, dtype=float)
        return s * s - 2.0 * (self.levels[m] - self.levels[k]) / self.reduced_mass

    def is_open(self, m: int, k: int, speed_in) -> np.ndarray:
        return self.exit_speed_sq(m, k, speed_in) > 0.0

    def pair_amplitude(self, m: int, k: int, speed_in, cos_theta, speed_out=None) -> np.ndarray:
        """f(m, v_out <- k, v_in); 0 where the exit channel is closed.

        ``speed_in`` and ``cos_theta`` broadcast together; returns complex.
        The exit speed is fixed on-shell from (m, k, speed_in) unless
        ``speed_out`` is given -- the smooth off-shell extension used by
        the mollified Monte Carlo oracle.
        """
        raise NotImplementedError

    def amplitude(self, m: int, v_out, k: int, v_in) -> complex:
        """Amplitude for explicit exit/entrance velocity 3-vectors.

        Raises :class:`OffShellAmplitude` unless the velocities satisfy
        energy conservation to relative tolerance 1e-8 (only round-off
        should ever reach this check).
        """
        v_out = np.asarray(v_out, dtype=float)
        v_in = np.asarray(v_in, dtype=float)
        so, si = np.linalg.norm(v_out), np.linalg.norm(v_in)
        mu = self.reduced_mass
        e_out = 0.5 * mu * so * so + self.levels[m]
        e_in = 0.5 * mu * si * si + self.levels[k]
        scale = max(abs(e_out), abs(e_in), 0.5 * mu * max(so, si) ** 2, 1e-300)
        if abs(e_out - e_in) > _SHELL_TOL * scale:
            raise OffShellAmplitude(
                f"off-shell query: E_out={e_out!r} != E_in={e_in!r} (m={m}, k={k})"
            )
        if so <= 0.0 or si <= 0.0:
            return 0.0 + 0.0j
        cos = float(np.clip(np.dot(v_out, v_in) / (so * si), -1.0, 1.0))
        return complex(self.pair_amplitude(m, k, si, cos))

    def forward_amplitude(self, k: int, speed) -> np.ndarray:
        """Elastic forward amplitude f(k, v <- k, v), vectorized in speed."""
        s = np.asarray(speed, dtype=float)
        return self.pair_amplitude(k, k, s, np.ones_like(s))

    def descriptor(self) -> dict:
        """Hashable description for cache keys."""
        raise NotImplementedError


class ConstantAmplitude(AmplitudeModel):
    """Geometry-independent amplitude table c[m, k] (zero on closed channels).

    Deliberately non-unitary in general; the constant-real variant is the
    documented optical-theorem counterexample.
    """

    kind = "constant"

    def __init__(self, levels, reduced_mass, c):
        super().__init__(levels, reduced_mass)
        c = np.asarray(c, dtype=complex)
        if c.shape != (self.n_levels, self.n_levels):
            raise NonPositiveParameter(
                f"amplitude table shape {c.shape} != ({self.n_levels}, {self.n_levels})"
            )
        c.setflags(write=False)
        self.c = c

    def pair_amplitude(self, m, k, speed_in, cos_theta, speed_out=None):
        s, cos = np.broadcast_arrays(np.asarray(speed_in, float), np.asarray(cos_theta, float))
        if speed_out is None:
            open_mask = self.is_open(m, k, s)
        else:
            open_mask = np.broadcast_to(np.asarray(speed_out, float) > 0.0, s.shape)
        return np.where(open_mask, self.c[m, k], 0.0 + 0.0j)

    def descriptor(self):
        return {
            "kind": self.kind,
            "levels": self.levels.tolist(),
            "reduced_mass": self.reduced_mass,
            "c_re": self.c.real.tolist(),
            "c_im": self.c.imag.tolist(),
        }


class PartialWaveAmplitude(AmplitudeModel):
    """Unitary multichannel model from Hermitian reaction matrices.

    ``kmats[e, l]`` is the n x n Hermitian reaction matrix for partial
    wave l at total energy ``energies[e]``.  At evaluation energy E the
    matrices are interpolated entrywise (monotone piecewise-cubic,
    constant-clamped outside the grid with a warning) and the S-matrix
    on the open-channel block is the Cayley transform
    S = (I + iK)(I - iK)^(-1), which is unitary for Hermitian K.
    """

    kind = "partial_wave"

    def __init__(self, levels, reduced_mass, energies, kmats):
        super().__init__(levels, reduced_mass)
        energies = np.asarray(energies, dtype=float)
        kmats = np.asarray(kmats, dtype=complex)
        n = self.n_levels
        if energies.ndim != 1 or energies.size < 1:
            raise NonPositiveParameter("need at least one energy grid point")
        if np.any(np.diff(energies) <= 0):
            raise NonPositiveParameter("energy grid must be strictly increasing")
        if kmats.ndim != 4 or kmats.shape[0] != energies.size or kmats.shape[2:] != (n, n):
            raise NonPositiveParameter(
                f"kmats shape {kmats.shape} != (n_energies, l_max+1, {n}, {n})"
            )
        herm_res = np.max(np.abs(kmats - np.conj(np.swapaxes(kmats, 2, 3))))
        scale = max(float(np.max(np.abs(kmats))), 1.0)
        if herm_res > 1e-12 * scale:
            raise NonHermitianReactionMatrix(
                f"reaction matrices not Hermitian (residual {herm_res:.3e})"
            )
        self.energies = energies
        self.kmats = kmats
        self.l_max = kmats.shape[1] - 1
        self._interp = None
        if energies.size >= 2:
            flat = kmats.reshape(energies.size, -1)
            self._interp = (
                PchipInterpolator(energies, flat.real, axis=0, extrapolate=False),
                PchipInterpolator(energies, flat.imag, axis=0, extrapolate=False),
            )
        self._verify_unitarity()

    # -- internals ---------------------------------------------------------

    def _kmat_at(self, energy: np.ndarray) -> np.ndarray:
        """Interpolated reaction matrices, shape (P, l_max+1, n, n)."""
        e = np.asarray(energy, dtype=float)
        n = self.n_levels
        if self._interp is None:
            return np.broadcast_to(self.kmats[0], e.shape + (self.l_max + 1, n, n)).copy()
        lo, hi = self.energies[0], self.energies[-1]
        if np.any(e < lo) or np.any(e > hi):
            warnings.warn(
                "collision energy outside the reaction-matrix grid; clamping",
                stacklevel=3,
            )
        ec = np.clip(e, lo, hi)
        re, im = self._interp
        flat = re(ec) + 1j * im(ec)
        return flat.reshape(e.shape + (self.l_max + 1, n, n))

    def _smat_open(self, energy: np.ndarray):
        """S-matrices on the open block for an array of total energies.

        Returns (smats, open_mask): smats (P, l_max+1, n, n) with closed
        rows/columns zeroed, open_mask (P, n) boolean.
        """
        e = np.atleast_1d(np.asarray(energy, dtype=float))
        n = self.n_levels
        open_mask = e[:, None] > self.levels[None, :]
        kmats = self._kmat_at(e)
        smats = np.zeros_like(kmats)
        # group points by identical open-channel sets; few distinct sets
        codes = open_mask.dot(1 << np.arange(n))
        for code in np.unique(codes):
            sel = codes == code
            chans = np.nonzero(open_mask[np.argmax(sel)])[0]
            if chans.size == 0:
                continue
            sub = kmats[np.ix_(np.nonzero(sel)[0], np.arange(self.l_max + 1), chans, chans)]
            eye = np.eye(chans.size)
            s_sub = np.linalg.solve(eye - 1j * sub, eye + 1j * sub)
            smats[np.ix_(np.nonzero(sel)[0], np.arange(self.l_max + 1), chans, chans)] = s_sub
        return smats, open_mask

    def _verify_unitarity(self):
        # grid energies plus points just above each threshold (clamped to grid)
        extra = np.clip(self.levels + 1e-6, self.energies[0], self.energies[-1])
        probes = np.unique(np.concatenate([self.energies, extra]))
        smats, open_mask = self._smat_open(probes)
        for p in range(probes.size):
            chans = np.nonzero(open_mask[p])[0]
            if chans.size == 0:
                continue
            for l in range(self.l_max + 1):
                s = smats[p][l][np.ix_(chans, chans)]
                res = np.max(np.abs(s @ s.conj().T - np.eye(chans.size)))
                if res > _UNITARITY_TOL:
                    raise NonHermitianReactionMatrix(
                        f"S-matrix unitarity residual {res:.3e} at E={probes[p]!r}, l={l}"
                    )

    # -- contract ----------------------------------------------------------

    def pair_amplitude(self, m, k, speed_in, cos_theta, speed_out=None):
        s, cos = np.broadcast_arrays(
            np.asarray(speed_in, dtype=float), np.asarray(cos_theta, dtype=float)
        )
        shape = s.shape
        s = np.ravel(s)
        cos = np.ravel(cos)
        mu = self.reduced_mass
        e_tot = 0.5 * mu * s * s + self.levels[k]
        if speed_out is None:
            vout_sq = self.exit_speed_sq(m, k, s)
        else:
            so = np.ravel(np.broadcast_to(np.asarray(speed_out, dtype=float), shape))
            vout_sq = so * so
        open_both = (vout_sq > 0.0) & (s > 0.0)
        kk = mu * s
        km = mu * np.sqrt(np.where(open_both, vout_sq, 1.0))
        smats, _ = self._smat_open(e_tot)
        t = smats[:, :, m, k]
        if m == k:
            t = t - np.where(open_both, 1.0, 0.0)[:, None]
        # sum_l (2l+1) P_l(cos) T_l via upward Legendre recurrence
        p_prev = np.zeros_like(cos)
        p_cur = np.ones_like(cos)
        acc = np.zeros(cos.shape, dtype=complex)
        for l in range(self.l_max + 1):
            acc += (2 * l + 1) * p_cur * t[:, l]
            p_next = ((2 * l + 1) * cos * p_cur - l * p_prev) / (l + 1)
            p_prev, p_cur = p_cur, p_next
        denom = 2j * np.sqrt(np.maximum(km * kk, _K_FLOOR))
        f = np.where(open_both, acc / denom, 0.0 + 0.0j)
        return f.reshape(shape)

    def descriptor(self):
        return {
            "kind": self.kind,
            "levels": self.levels.tolist(),
            "reduced_mass": self.reduced_mass,
            "energies": self.energies.tolist(),
            "kmats_re": self.kmats.real.tolist(),
            "kmats_im": self.kmats.imag.tolist(),
        }


class TabulatedAmplitude(AmplitudeModel):
    """Amplitudes interpolated bilinearly from an (entrance speed, cos theta) table.

    ``values[m, k]`` holds complex samples on the tensor grid
    ``speeds`` x ``cos_grid``.  Queries are clamped to the grid hull.
    """

    kind = "tabulated"

    def __init__(self, levels, reduced_mass, speeds, cos_grid, values):
        super().__init__(levels, reduced_mass)
        speeds = np.asarray(speeds, dtype=float)
        cos_grid = np.asarray(cos_grid, dtype=float)
        values = np.asarray(values, dtype=complex)
        n = self.n_levels
        if speeds.ndim != 1 or np.any(np.diff(speeds) <= 0):
            raise MalformedTable("speed grid must be 1D strictly increasing")
        if cos_grid.ndim != 1 or np.any(np.diff(cos_grid) <= 0):
            raise MalformedTable("cos-theta grid must be 1D strictly increasing")
        if values.shape != (n, n, speeds.size, cos_grid.size):
            raise MalformedTable(
                f"value table shape {values.shape} != ({n}, {n}, {speeds.size}, {cos_grid.size})"
            )
        self.speeds = speeds
        self.cos_grid = cos_grid
        self.values = values
        self._interp = {}
        for m in range(n):
            for k in range(n):
                self._interp[m, k] = RegularGridInterpolator(
                    (speeds, cos_grid), values[m, k], bounds_error=False, fill_value=None
                )

    def pair_amplitude(self, m, k, speed_in, cos_theta, speed_out=None):
        s, cos = np.broadcast_arrays(
            np.asarray(speed_in, dtype=float), np.asarray(cos_theta, dtype=float)
        )
        sc = np.clip(s, self.speeds[0], self.speeds[-1])
        cc = np.clip(cos, self.cos_grid[0], self.cos_grid[-1])
        pts = np.column_stack([np.ravel(sc), np.ravel(cc)])
        f = self._interp[m, k](pts).reshape(s.shape)
        return np.where(self.is_open(m, k, s), f, 0.0 + 0.0j)

    def descriptor(self):
        return {
            "kind": self.kind,
            "levels": self.levels.tolist(),
            "reduced_mass": self.reduced_mass,
            "speeds": self.speeds.tolist(),
            "cos_grid": self.cos_grid.tolist(),
            "values_re": self.values.real.tolist(),
            "values_im": self.values.imag.tolist(),
        }


def build_amplitude_model(gas: AtomGasModel, spec: dict) -> AmplitudeModel:
    """Build an amplitude model from a declarative spec.

    ``spec["kind"]`` selects the model:

    * ``"zero"``      -- all amplitudes vanish.
    * ``"constant"``  -- needs ``"c"``: (n, n) complex table.
    * ``"partial_wave"`` -- needs ``"energies"`` and ``"kmats"``
      ((n_E, l_max+1, n, n) Hermitian); verified unitary at build time.
    * ``"tabulated"`` -- needs ``"speeds"``, ``"cos_grid"``, ``"values"``.
    """
    kind = spec.get("kind")
    levels = gas.level_frequencies
    mu = gas.reduced_mass
    n = gas.level_count
    if kind == "zero":
        return ConstantAmplitude(levels, mu, np.zeros((n, n), dtype=complex))
    if kind == "constant":
        return ConstantAmplitude(levels, mu, spec["c"])
    if kind == "partial_wave":
        return PartialWaveAmplitude(levels, mu, spec["energies"], spec["kmats"])
    if kind == "tabulated":
        return TabulatedAmplitude(levels, mu, spec["speeds"], spec["cos_grid"], spec["values"])
    raise MalformedTable(f"unknown amplitude kind {kind!r}")


def _entrance_speed(v_r) -> float:
    v = np.asarray(v_r, dtype=float)
    return float(np.linalg.norm(v)) if v.ndim else float(v)


def total_cross_section(
    model: AmplitudeModel, gas: AtomGasModel, k: int, v_r, n_theta: int = 64
) -> float:
    """Total cross section sigma_T(k, v_r) summed over open exit channels.

    sigma_T = sum_m integral dOmega (v_out/v_in) |f(m <- k)|^2, with the
    angular integral done by Gauss-Legendre in cos theta (exact for
    partial waves up to l_max = n_theta - 1).
    """
    speed = _entrance_speed(v_r)
    if not speed > 0:
        raise ClosedEntranceChannel(f"entrance channel {k} needs positive speed, got {speed}")
    x, w = np.polynomial.legendre.leggauss(n_theta)
    sigma = 0.0
    for m in range(model.n_levels):
        vout_sq = model.exit_speed_sq(m, k, speed)
        if vout_sq <= 0:
            continue
        f = model.pair_amplitude(m, k, np.full_like(x, speed), x)
        ratio = np.sqrt(vout_sq) / speed
        sigma += 2.0 * np.pi * ratio * float(np.sum(w * np.abs(f) ** 2))
    return sigma


def optical_theorem_residual(
    model: AmplitudeModel, gas: AtomGasModel, k: int, v_r, n_theta: int = 64
) -> float:
    """Normalized optical-theorem defect for entrance channel k.

    Returns |Im f(k <- k, forward) - (mu v / 4 pi) sigma_T| divided by
    max(|f_forward|, 1); zero (to round-off) for unitary models.
    """
    speed = _entrance_speed(v_r)
    if not speed > 0:
        raise ClosedEntranceChannel(f"entrance channel {k} needs positive speed, got {speed}")
    fwd = complex(model.pair_amplitude(k, k, speed, 1.0))
    sigma = total_cross_section(model, gas, k, speed, n_theta=n_theta)
    lhs = fwd.imag
    rhs = gas.reduced_mass * speed * sigma / (4.0 * np.pi)
    return abs(lhs - rhs) / max(abs(fwd), 1.0)


def load_amplitude_table(path, gas: AtomGasModel) -> TabulatedAmplitude:
    """Read the documented tabulated-amplitude text format.

    Header lines: ``levels N``, ``speeds s1 s2 ...``, ``angles c1 c2 ...``
    (cos theta, increasing).  Data rows: ``m k speed cos re im`` with
    0-based level indices; every (m, k, speed, cos) grid combination must
    appear exactly once.  ``#`` starts a comment.
    """
    n_levels = None
    speeds = None
    cos_grid = None
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "levels":
                n_levels = int(parts[1])
            elif parts[0] == "speeds":
                speeds = np.array([float(p) for p in parts[1:]])
            elif parts[0] == "angles":
                cos_grid = np.array([float(p) for p in parts[1:]])
            else:
                if len(parts) != 6:
                    raise MalformedTable(f"{path}:{lineno}: expected 'm k speed cos re im'")
                rows.append(
                    (int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]),
                     float(parts[4]), float(parts[5]))
                )
    if n_levels is None or speeds is None or cos_grid is None:
        raise MalformedTable(f"{path}: missing 'levels', 'speeds' or 'angles' header")
    if n_levels != gas.level_count:
        raise MalformedTable(
            f"{path}: table has {n_levels} levels, model has {gas.level_count}"
        )
    values = np.full((n_levels, n_levels, speeds.size, cos_grid.size), np.nan, dtype=complex)
    for m, k, s, c, re, im in rows:
        i = int(np.argmin(np.abs(speeds - s)))
        j = int(np.argmin(np.abs(cos_grid - c)))
        if abs(speeds[i] - s) > 1e-12 * max(1.0, abs(s)) or abs(cos_grid[j] - c) > 1e-12:
            raise MalformedTable(f"{path}: row point ({s}, {c}) not on the declared grids")
        values[m, k, i, j] = re + 1j * im
    if np.any(np.isnan(values)):
        raise MalformedTable(f"{path}: incomplete table (missing grid combinations)")
    return TabulatedAmplitude(
        gas.level_frequencies, gas.reduced_mass, speeds, cos_grid, values
    )
