"""Collisional generators: master-equation and standard forms.

Both generators act linearly on a velocity-resolved density field and
share the same block structure imposed by the secular (nondegenerate)
approximation: populations couple only to populations, and each
coherence rho_mn couples only to itself across velocity.

The master-equation (Lindblad) form takes its loss rates from the
cross-section-integrated table (gamma~), while the standard form takes
them from the forward-scattering-amplitude table (Gamma).  For unitary
amplitude models the two tables coincide, making the generators
strictly identical entry by entry; :func:`compare_generators` measures
that identity and, independently, checks the rate equality through two
unrelated quadrature routes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BBEError, GridMismatch
from .grid import VelocityGrid
from .kernel import KernelTensor, RateTable, gamma_forward, gamma_tilde
from .scattering import AmplitudeModel, optical_theorem_residual

__all__ = [
    "Generator",
    "EquivalenceReport",
    "build_me_generator",
    "build_standard_generator",
    "compare_generators",
    "kossakowski_min_eig",
]


@dataclass
class Generator:
    """Materialized collisional generator.

    ``pop_block`` is the real matrix coupling the flattened population
    coordinates a = m * n_nodes + i; ``coh_blocks[(m, n)]`` (m != n) is
    the complex matrix coupling rho_mn(v_i) to rho_mn(v_l).  Hermiticity
    of the action follows from coh_blocks[(n, m)] = conj(coh_blocks[(m, n)]),
    which holds by construction.
    """

    variant: str
    grid: VelocityGrid
    n_levels: int
    pop_block: np.ndarray
    coh_blocks: dict
    rate_mode: str
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.grid.n_nodes

    def apply(self, field_values: np.ndarray) -> np.ndarray:
        """Apply the generator to a density field of shape (N, n, n)."""
        nn = self.n_nodes
        n = self.n_levels
        if field_values.shape != (nn, n, n):
            raise GridMismatch(
                f"field shape {field_values.shape} does not match "
                f"(n_nodes, n, n) = ({nn}, {n}, {n})"
            )
        out = np.zeros((nn, n, n), dtype=complex)
        pops = np.ascontiguousarray(
            np.einsum("lmm->ml", field_values)
        ).reshape(n * nn)
        dpops = (self.pop_block @ pops).reshape(n, nn)
        for m in range(n):
            out[:, m, m] = dpops[m]
        for (m, k), block in self.coh_blocks.items():
            out[:, m, k] = block @ field_values[:, m, k]
        return out

    def dense(self) -> np.ndarray:
        """Full matrix on flattened coordinates (node, m, k) row-major."""
        nn, n = self.n_nodes, self.n_levels
        dim = nn * n * n
        mat = np.zeros((dim, dim), dtype=complex)

        def flat(i, m, k):
            return (i * n + m) * n + k

        for m in range(n):
            for k in range(n):
                sub = self.pop_block[
                    m * nn : (m + 1) * nn, k * nn : (k + 1) * nn
                ]
                rows = flat(np.arange(nn)[:, None], m, m)
                cols = flat(np.arange(nn)[None, :], k, k)
                mat[rows, cols] += sub
        for (m, k), block in self.coh_blocks.items():
            rows = flat(np.arange(nn)[:, None], m, k)
            cols = flat(np.arange(nn)[None, :], m, k)
            mat[rows, cols] += block
        return mat

    def trace_column_residual(self) -> float:
        """Max |weighted column sum| of the population block.

        Zero (to rounding) in discrete-consistent mode: gains and losses
        cancel exactly under the grid quadrature, which is the discrete
        statement of trace conservation.
        """
        nn, n = self.n_nodes, self.n_levels
        w = np.tile(self.grid.weights, n)
        col = w @ self.pop_block
        scale = max(float(np.max(np.abs(self.pop_block))), 1e-300)
        return float(np.max(np.abs(col))) / scale


def _check_shared(tensor: KernelTensor, rates: RateTable) -> None:
    if tensor.grid.descriptor() != rates.grid.descriptor():
        raise GridMismatch(
            "kernel tensor and rate table were built on different grids"
        )
    if rates.gamma_tilde.shape != (tensor.n_levels, tensor.grid.n_nodes):
        raise GridMismatch(
            "rate table level count does not match the kernel tensor"
        )


def _pop_block(tensor: KernelTensor, loss_diag: np.ndarray) -> np.ndarray:
    """Population coupling matrix with per-node losses on the diagonal.

    ``loss_diag[m, i]`` is the total depletion rate of rho_mm(v_i).
    """
    n = tensor.n_levels
    nn = tensor.grid.n_nodes
    w = tensor.grid.weights
    block = np.zeros((n * nn, n * nn))
    for m in range(n):
        for k in range(n):
            block[m * nn : (m + 1) * nn, k * nn : (k + 1) * nn] = (
                tensor.pop[m, k] * w[None, :]
            )
    idx = np.arange(n * nn)
    block[idx, idx] -= loss_diag.reshape(n * nn)
    return block


def _coh_blocks(tensor: KernelTensor, loss) -> dict:
    """Coherence blocks; ``loss(m, n)`` gives the per-node decay array."""
    n = tensor.n_levels
    w = tensor.grid.weights
    blocks = {}
    for m in range(n):
        for k in range(n):
            if m == k:
                continue
            b = tensor.coh[m, k] * w[None, :]
            d = np.asarray(loss(m, k), dtype=complex)
            b[np.diag_indices_from(b)] -= d
            blocks[(m, k)] = b
    return blocks


def build_me_generator(tensor: KernelTensor, rates: RateTable) -> Generator:
    """Master-equation generator: gains from the kernel tensor, losses
    from the cross-section-integrated rates gamma~; coherence decay is
    the arithmetic mean (gamma~_mm + gamma~_nn)/2."""
    _check_shared(tensor, rates)
    gt = rates.gamma_tilde
    pop = _pop_block(tensor, gt)
    coh = _coh_blocks(tensor, lambda m, k: 0.5 * (gt[m] + gt[k]))
    return Generator(
        variant="ME",
        grid=tensor.grid,
        n_levels=tensor.n_levels,
        pop_block=pop,
        coh_blocks=coh,
        rate_mode=rates.mode,
        meta=dict(tensor.meta),
    )


def build_standard_generator(
    tensor: KernelTensor, rates: RateTable, variant: str = "reduced"
) -> Generator:
    """Standard-form generator with forward-amplitude losses Gamma_mn.

    ``reduced`` keeps only Re Gamma_mn = (Gamma_mm + Gamma_nn)/2 for the
    coherence decay; the imaginary part (the collision-induced frequency
    shift) belongs with the Hamiltonian part and is excluded, so the
    generator stays purely dissipative.  ``raw`` keeps the full complex
    Gamma_mn, exposing the shift as a diagnostic.
    """
    if variant not in ("raw", "reduced"):
        raise BBEError(f"unknown standard-form variant {variant!r}")
    _check_shared(tensor, rates)
    gdiag = np.real(np.einsum("mml->ml", rates.gamma_fwd))
    pop = _pop_block(tensor, gdiag)
    if variant == "reduced":
        coh = _coh_blocks(
            tensor, lambda m, k: np.real(rates.gamma_fwd[m, k])
        )
    else:
        coh = _coh_blocks(tensor, lambda m, k: rates.gamma_fwd[m, k])
    return Generator(
        variant=f"Standard-{variant}",
        grid=tensor.grid,
        n_levels=tensor.n_levels,
        pop_block=pop,
        coh_blocks=coh,
        rate_mode=rates.mode,
        meta=dict(tensor.meta),
    )


@dataclass
class EquivalenceReport:
    """Entrywise comparison of two generators plus the independent
    rate-identity check Gamma_mm (forward-amplitude route) vs gamma~_mm
    (cross-section-integration route)."""

    variant_a: str
    variant_b: str
    pop_max_abs: float
    pop_max_rel: float
    coh_max_abs: float
    coh_max_rel: float
    rate_identity_max_rel: Optional[float] = None
    optical_theorem_residual: Optional[float] = None
    rate_identity_tol: float = 1e-2
    optical_theorem_tol: float = 1e-8

    @property
    def max_rel(self) -> float:
        return max(self.pop_max_rel, self.coh_max_rel)

    @property
    def rate_identity_ok(self) -> Optional[bool]:
        if self.rate_identity_max_rel is None:
            return None
        return bool(self.rate_identity_max_rel <= self.rate_identity_tol)

    @property
    def optical_theorem_ok(self) -> Optional[bool]:
        if self.optical_theorem_residual is None:
            return None
        return bool(self.optical_theorem_residual <= self.optical_theorem_tol)

    def to_dict(self) -> dict:
        return {
            "variant_a": self.variant_a,
            "variant_b": self.variant_b,
            "pop_max_abs": self.pop_max_abs,
            "pop_max_rel": self.pop_max_rel,
            "coh_max_abs": self.coh_max_abs,
            "coh_max_rel": self.coh_max_rel,
            "rate_identity_max_rel": self.rate_identity_max_rel,
            "rate_identity_ok": self.rate_identity_ok,
            "optical_theorem_residual": self.optical_theorem_residual,
            "optical_theorem_ok": self.optical_theorem_ok,
        }

    def to_text(self) -> str:
        lines = [f"{k} = {v}" for k, v in self.to_dict().items()]
        lines.append("")
        lines.append(
            f"Entrywise deviation {self.variant_a} vs {self.variant_b}: "
            f"max relative {self.max_rel:.3e} "
            f"(populations {self.pop_max_rel:.3e}, "
            f"coherences {self.coh_max_rel:.3e})."
        )
        if self.rate_identity_max_rel is not None:
            if self.rate_identity_ok:
                lines.append(
                    "Rate identity Gamma_mm = gamma~_mm holds within "
                    f"{self.rate_identity_max_rel:.3e} by two independent "
                    "quadrature routes."
                )
            else:
                cause = ""
                if self.optical_theorem_ok is False:
                    cause = (
                        " Cause: the amplitude model violates the optical "
                        f"theorem (residual {self.optical_theorem_residual:.3e}); "
                        "the underlying scattering matrix is not unitary."
                    )
                lines.append(
                    "Rate identity Gamma_mm = gamma~_mm FAILS "
                    f"(max relative deviation {self.rate_identity_max_rel:.3e})."
                    + cause
                )
        return "\n".join(lines)


def _block_dev(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    dev = float(np.max(np.abs(a - b))) if a.size else 0.0
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-300)
    return dev, dev / scale


def compare_generators(
    g1: Generator,
    g2: Generator,
    gas=None,
    amp: AmplitudeModel | None = None,
    probe_speeds=(0.5, 1.0, 2.0),
) -> EquivalenceReport:
    """Entrywise comparison; with ``gas`` and ``amp`` supplied the rate
    identity is additionally verified through two independent routes
    (forward-amplitude quadrature vs angle-integrated cross sections)."""
    if g1.grid.descriptor() != g2.grid.descriptor():
        raise GridMismatch("generators live on different grids")
    if g1.n_levels != g2.n_levels:
        raise GridMismatch("generators have different level counts")
    pop_abs, pop_rel = _block_dev(g1.pop_block, g2.pop_block)
    coh_abs = coh_rel = 0.0
    for key in g1.coh_blocks:
        a, r = _block_dev(g1.coh_blocks[key], g2.coh_blocks[key])
        coh_abs = max(coh_abs, a)
        coh_rel = max(coh_rel, r)
    report = EquivalenceReport(
        variant_a=g1.variant,
        variant_b=g2.variant,
        pop_max_abs=pop_abs,
        pop_max_rel=pop_rel,
        coh_max_abs=coh_abs,
        coh_max_rel=coh_rel,
    )
    if gas is not None and amp is not None:
        dev = 0.0
        otr = 0.0
        for v in probe_speeds:
            if not v > 0:
                continue
            for m in range(gas.level_count):
                gf = gamma_forward(gas, amp, m, m, v).real
                gt = gamma_tilde(m, v, gas=gas, amp=amp, mode="continuum")
                dev = max(dev, abs(gf - gt) / max(abs(gt), 1e-300))
                otr = max(otr, optical_theorem_residual(amp, gas, m, v))
        report.rate_identity_max_rel = dev
        report.optical_theorem_residual = otr
    return report


def kossakowski_min_eig(tensor: KernelTensor, i: int, l: int) -> float:
    """Minimum eigenvalue of the secular-masked kernel matrix at
    (v_i <- v1_l); nonnegative up to rounding because each kernel entry
    is an outer product of scattering amplitudes."""
    mat = tensor.kossakowski_matrix(i, l)
    if not np.any(mat):
        return 0.0
    return float(np.linalg.eigvalsh(mat)[0])
