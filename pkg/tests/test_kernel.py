import numpy as np
import pytest

import bbe
from bbe.backend import available_backends, get_backend
from bbe.errors import BBEError, CacheError, SecularViolation
from bbe.kernel import (
    QuadratureSpec,
    config_hash,
    gamma_forward,
    gamma_tilde,
    kernel_oracle_mc,
    kernel_point,
)


def closed_form_elastic(gas, c_abs, v, v1):
    """Analytic constant-amplitude elastic kernel (Gaussian reduction)."""
    ma_mu = gas.atom_mass / gas.reduced_mass
    d = ma_mu * (np.asarray(v) - np.asarray(v1))
    dn = np.linalg.norm(d)
    dh = d / dn
    u = gas.thermal_speed
    return (
        2.0
        * gas.perturber_density
        * c_abs**2
        * ma_mu**3
        / (2.0 * dn)
        * (np.pi * u * u) ** -0.5
        * np.exp(-((np.dot(v1, dh) + dn / 2.0) ** 2) / (u * u))
    )


def test_closed_form_random_geometries(gas2, amp_const_real):
    rng = np.random.default_rng(7)
    for _ in range(10):
        v = rng.uniform(-2, 2, 3)
        v1 = rng.uniform(-2, 2, 3)
        want = closed_form_elastic(gas2, 0.5, v, v1)
        got = kernel_point(gas2, amp_const_real, (0, 0, 0, 0), v, v1)
        assert got.real == pytest.approx(want, rel=1e-10)
        assert abs(got.imag) < 1e-12 * want


def test_backends_agree(gas2, amp_const_complex):
    names = available_backends()
    if len(names) < 2:
        pytest.skip("only one backend available")
    rng = np.random.default_rng(3)
    for _ in range(5):
        v = rng.uniform(-2, 2, 3)
        v1 = rng.uniform(-2, 2, 3)
        vals = [
            kernel_point(
                gas2, amp_const_complex, (0, 0, 1, 1), v, v1, backend=get_backend(n)
            )
            for n in names
        ]
        assert vals[0] == pytest.approx(vals[1], rel=1e-12)


def test_mc_oracle(gas2, amp_const_complex):
    v = np.array([0.5, 0.2, -0.3])
    v1 = np.array([-0.4, 0.8, 0.1])
    want = kernel_point(gas2, amp_const_complex, (0, 0, 0, 0), v, v1)
    got, err = kernel_oracle_mc(
        gas2, amp_const_complex, (0, 0, 0, 0), v, v1, eta=0.05, n_samples=200_000, seed=5
    )
    assert abs(got.real - want.real) < 3.5 * err


def test_secular_violation(gas2, amp_const_complex):
    with pytest.raises(SecularViolation):
        kernel_point(gas2, amp_const_complex, (0, 1, 1, 1), [1.0, 0, 0], [0, 1.0, 0])


def test_elastic_self_point_rejected(gas2, amp_const_complex):
    v = np.array([0.5, 0.0, 0.0])
    with pytest.raises(BBEError):
        kernel_point(gas2, amp_const_complex, (0, 0, 0, 0), v, v)
    # inelastic self-pair has empty delta support -> exactly zero
    assert kernel_point(gas2, amp_const_complex, (0, 1, 0, 1), v, v) == 0.0


def test_inelastic_threshold_support(gas2, amp_unitary):
    """Upward transfer needs enough incoming energy in the delta support."""
    # incoming node far below threshold, outgoing far away: kernel ~ 0
    tiny = kernel_point(
        gas2, amp_unitary, (1, 0, 1, 0), [3.0, 0.0, 0.0], [0.05, 0.0, 0.0]
    )
    big = kernel_point(
        gas2, amp_unitary, (1, 0, 1, 0), [1.0, 0.0, 0.0], [2.5, 0.0, 0.0]
    )
    assert big.real > 0.0
    assert tiny.real < 1e-3 * big.real


def test_tensor_hermiticity_and_positivity(tensor_const_complex5):
    assert tensor_const_complex5.hermiticity_residual() <= 1e-12
    assert np.all(tensor_const_complex5.pop >= 0.0)


def test_gamma_tilde_analytic_origin(gas2, amp_const_real):
    """At v1 = 0 the Maxwell-averaged elastic rate has a closed form:
    N_P sigma_T <s> with <s> = 2 u / sqrt(pi)."""
    want = gas2.perturber_density * np.pi * 2.0 * gas2.thermal_speed / np.sqrt(np.pi)
    got = gamma_tilde(0, 0.0, gas=gas2, amp=amp_const_real, mode="continuum")
    assert got == pytest.approx(want, rel=1e-10)


def test_gamma_discrete_vs_continuum(gas2, amp_const_real):
    """Grid-summed loss rate matches the continuum quadrature at an
    interior node (midpoint rule + cell refinement, 9^3 grid)."""
    grid = bbe.VelocityGrid(extent=4.0, n_axis=9)
    tensor = bbe.build_kernel_tensor(gas2, amp_const_real, grid, threads=8)
    idx = int(np.argmin(np.linalg.norm(grid.nodes, axis=1)))
    disc = gamma_tilde(0, idx, tensor=tensor, mode="discrete")
    cont = gamma_tilde(0, 0.0, gas=gas2, amp=amp_const_real, mode="continuum")
    assert disc == pytest.approx(cont, rel=2e-2)


def test_gamma_forward_counterexample(gas2, amp_const_real):
    """Real constant amplitude: forward-amplitude rate vanishes although
    the cross-section rate does not (optical-theorem failure)."""
    assert gamma_forward(gas2, amp_const_real, 0, 0, 1.0) == 0.0
    assert gamma_tilde(0, 1.0, gas=gas2, amp=amp_const_real, mode="continuum") > 0.0


def test_rate_table_re_identity(rates_unitary7):
    scale = float(np.max(np.abs(rates_unitary7.gamma_fwd)))
    assert rates_unitary7.check_re_identity() <= 1e-12 * scale


def test_cache_roundtrip(tmp_path, gas2, amp_const_complex, grid5, tensor_const_complex5):
    path = tmp_path / "tensor.npz"
    bbe.save_kernel_tensor(path, tensor_const_complex5)
    back = bbe.load_kernel_tensor(path, gas2, amp_const_complex, grid5, QuadratureSpec())
    assert np.array_equal(back.pop, tensor_const_complex5.pop)
    assert np.array_equal(back.coh, tensor_const_complex5.coh)
    # a different grid must be refused
    other = bbe.VelocityGrid(extent=4.0, n_axis=3)
    with pytest.raises(CacheError):
        bbe.load_kernel_tensor(path, gas2, amp_const_complex, other, QuadratureSpec())


def test_config_hash_sensitivity(gas2, amp_const_complex, grid5):
    base = config_hash(gas2, amp_const_complex, grid5, QuadratureSpec())
    assert base != config_hash(
        gas2, amp_const_complex, grid5, QuadratureSpec(n_radial=16)
    )
    other_grid = bbe.VelocityGrid(extent=4.0, n_axis=7)
    assert base != config_hash(gas2, amp_const_complex, other_grid, QuadratureSpec())
