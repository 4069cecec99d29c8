# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled core for the reduced collision-kernel quadrature.

Same contract as :mod:`bbe._kernel_numpy` (the pure-python fallback);
see that module for the derivation of the reduction.  The hot loops
here run without the GIL so tensor assembly can thread.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport M_PI, cos, exp, pow, sqrt

cnp.import_array()


def quadrature_geometry(
    cnp.ndarray vout_in,
    cnp.ndarray v1_in,
    double two_omega_over_mu,
    double ma_over_mu,
    double u_p,
    double n_p,
    cnp.ndarray r_nodes_in,
    cnp.ndarray r_weights_in,
    int n_phi,
    double margin,
):
    cdef const double[:, ::1] vout = np.ascontiguousarray(np.atleast_2d(vout_in), dtype=np.float64)
    cdef const double[::1] v1 = np.ascontiguousarray(v1_in, dtype=np.float64)
    # radial rule on [0, 1]: shared (R,) or per-row (B, R)
    cdef const double[:, ::1] r_nodes = np.ascontiguousarray(np.atleast_2d(r_nodes_in), dtype=np.float64)
    cdef const double[:, ::1] r_weights = np.ascontiguousarray(np.atleast_2d(r_weights_in), dtype=np.float64)

    cdef Py_ssize_t nb = vout.shape[0]
    cdef Py_ssize_t nr = r_nodes.shape[1]
    cdef Py_ssize_t rstride = 0 if r_nodes.shape[0] == 1 else 1
    cdef cnp.ndarray speed_in_arr = np.empty((nb, nr), dtype=np.float64)
    cdef cnp.ndarray cos_arr = np.empty((nb, nr), dtype=np.float64)
    cdef cnp.ndarray weight_arr = np.empty((nb, nr), dtype=np.float64)
    cdef double[:, ::1] speed_in = speed_in_arr
    cdef double[:, ::1] cos_theta = cos_arr
    cdef double[:, ::1] weight = weight_arr

    cdef cnp.ndarray cphi_arr = np.cos(2.0 * M_PI * (np.arange(n_phi) + 0.5) / n_phi)
    cdef const double[::1] cphi = cphi_arr

    cdef double u2 = u_p * u_p
    cdef double norm = pow(M_PI * u2, -1.5) * 2.0 * M_PI / n_phi
    cdef Py_ssize_t b, q, t, rrow
    cdef double dx, dy, dz, dn, ppar, qpar, v1par, c_par, c_perp2, c_perp
    cdef double rmax, r, rw, so2, si2, so, si, den, cth, base, cross, phis, pref

    with nogil:
        for b in range(nb):
            dx = ma_over_mu * (vout[b, 0] - v1[0])
            dy = ma_over_mu * (vout[b, 1] - v1[1])
            dz = ma_over_mu * (vout[b, 2] - v1[2])
            dn = sqrt(dx * dx + dy * dy + dz * dz)
            if dn == 0.0:
                for q in range(nr):
                    speed_in[b, q] = 0.0
                    cos_theta[b, q] = 1.0
                    weight[b, q] = 0.0
                continue
            ppar = (dn * dn - two_omega_over_mu) / (2.0 * dn)
            qpar = ppar - dn
            v1par = (v1[0] * dx + v1[1] * dy + v1[2] * dz) / dn
            c_par = v1par - qpar
            c_perp2 = v1[0] * v1[0] + v1[1] * v1[1] + v1[2] * v1[2] - v1par * v1par
            if c_perp2 < 0.0:
                c_perp2 = 0.0
            c_perp = sqrt(c_perp2)
            rmax = margin * u_p + c_perp
            pref = norm * 2.0 * n_p * ma_over_mu * ma_over_mu * ma_over_mu / (2.0 * dn)
            rrow = b * rstride
            for q in range(nr):
                r = rmax * r_nodes[rrow, q]
                rw = rmax * r_weights[rrow, q]
                so2 = ppar * ppar + r * r
                si2 = qpar * qpar + r * r
                so = sqrt(so2)
                si = sqrt(si2)
                speed_in[b, q] = si
                den = so * si
                if den > 0.0:
                    cth = (ppar * qpar + r * r) / den
                    if cth > 1.0:
                        cth = 1.0
                    elif cth < -1.0:
                        cth = -1.0
                else:
                    cth = 1.0
                cos_theta[b, q] = cth
                base = -(c_par * c_par + c_perp2 + r * r) / u2
                cross = 2.0 * r * c_perp / u2
                phis = 0.0
                for t in range(n_phi):
                    phis += exp(base + cross * cphi[t])
                weight[b, q] = pref * r * rw * phis
    return speed_in_arr, cos_arr, weight_arr


def reduce_kernel(cnp.ndarray weight, cnp.ndarray product):
    """Contract quadrature weights with amplitude products: (B, R) -> (B,)."""
    return np.sum(np.asarray(weight) * np.asarray(product), axis=1)
