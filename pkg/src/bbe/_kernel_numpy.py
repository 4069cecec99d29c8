"""Pure-numpy backend for the reduced collision-kernel quadrature.

The kernel integral over (v_r, v_r1) is reduced analytically: the
3D momentum delta fixes v_r1 = v_r - D with D = (m_a/mu)(v - v1) and
Jacobian (m_a/mu)^3; the energy delta fixes the component of v_r along
D at p_par = (|D|^2 - 2*omega/mu) / (2|D|) with factor 1/(2|D|).  What
remains is a 2D integral over the transverse plane, done in polar
coordinates (Gauss-Legendre radial x uniform angular).

Because speeds and the scattering angle do not depend on the polar
angle phi, the Maxwellian weight is pre-summed over phi here and the
amplitude product is only needed at (batch, radial) resolution.

The compiled module ``bbe._kernel_cython`` implements the same
contract; ``bbe.backend`` selects between them at import time.
"""

from __future__ import annotations

import numpy as np

__all__ = ["quadrature_geometry", "reduce_kernel"]


def quadrature_geometry(
    vout: np.ndarray,
    v1: np.ndarray,
    two_omega_over_mu: float,
    ma_over_mu: float,
    u_p: float,
    n_p: float,
    r_nodes: np.ndarray,
    r_weights: np.ndarray,
    n_phi: int,
    margin: float,
):
    """Quadrature points and weights for a batch of outgoing velocities.

    Parameters
    ----------
    vout : (B, 3) outgoing velocities v.
    v1 : (3,) incoming velocity.
    two_omega_over_mu : 2*omega_mj / mu for the kernel entry class.
    r_nodes, r_weights : radial rule on [0, 1] in units of the per-row
        truncation radius rmax; either shared (R,) or per-row (B, R)
        (panel edges at channel-opening radii differ row to row).
    n_phi : number of uniform angular points (pre-summed here).
    margin : radial truncation in units of u_p beyond the Gaussian center.

    Returns
    -------
    speed_in : (B, R) |v_r1| at the quadrature points.
    cos_theta : (B, R) angle cosine between v_r and v_r1.
    weight : (B, R) full weight including 2*N_P*(m_a/mu)^3 / (2|D|),
        the phi-summed Maxwellian and the polar quadrature measure.
        Rows with |D| = 0 get zero weight (caller handles self-cells).
    """
    vout = np.asarray(vout, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    u2 = u_p * u_p
    d = ma_over_mu * (vout - v1[None, :])                       # (B, 3)
    dn = np.linalg.norm(d, axis=1)                              # (B,)
    ok = dn > 0.0
    dn_safe = np.where(ok, dn, 1.0)
    dhat = d / dn_safe[:, None]
    ppar = (dn_safe * dn_safe - two_omega_over_mu) / (2.0 * dn_safe)
    v1_par = dhat @ v1
    c_par = v1_par - (ppar - dn_safe)
    c_perp = np.linalg.norm(v1[None, :] - v1_par[:, None] * dhat, axis=1)

    rmax = margin * u_p + c_perp                                # (B,)
    r_nodes = np.atleast_2d(np.asarray(r_nodes, dtype=float))
    r_weights = np.atleast_2d(np.asarray(r_weights, dtype=float))
    r = rmax[:, None] * r_nodes                                 # (B, R)
    rw = rmax[:, None] * r_weights

    pp = ppar[:, None]
    qq = (ppar - dn_safe)[:, None]
    speed_out = np.sqrt(pp * pp + r * r)
    speed_in = np.sqrt(qq * qq + r * r)
    denom = speed_out * speed_in
    cos_theta = np.where(denom > 0.0, (pp * qq + r * r) / np.where(denom > 0, denom, 1.0), 1.0)
    np.clip(cos_theta, -1.0, 1.0, out=cos_theta)

    # phi-summed Maxwellian: exponent combined to avoid overflow
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    cphi = np.cos(phi)
    base = -(c_par[:, None] * c_par[:, None] + c_perp[:, None] * c_perp[:, None] + r * r) / u2
    cross = (2.0 * r * c_perp[:, None]) / u2                    # (B, R)
    phi_sum = np.exp(base[:, :, None] + cross[:, :, None] * cphi[None, None, :]).sum(axis=2)
    phi_sum *= 2.0 * np.pi / n_phi

    pref = np.where(ok, 2.0 * n_p * ma_over_mu**3 / (2.0 * dn_safe), 0.0)
    norm = (np.pi * u2) ** (-1.5)
    weight = pref[:, None] * norm * r * rw * phi_sum
    return speed_in, cos_theta, weight


def reduce_kernel(weight: np.ndarray, product: np.ndarray) -> np.ndarray:
    """Contract quadrature weights with amplitude products: (B, R) -> (B,)."""
    return np.sum(weight * product, axis=1)
