"""Acceptance criteria, one test per criterion.

Each test prints a single machine-greppable PASS/FAIL line of the form
``[ACCEPTANCE nn] name: PASS (detail)`` and then asserts, so the verdict
is visible in the test log either way.
"""

import numpy as np
import pytest

import bbe
from bbe.evolution import _operator_norm_estimate
from bbe.kernel import gamma_forward, gamma_tilde, kernel_oracle_mc, kernel_point
from bbe.scattering import optical_theorem_residual

from test_kernel import closed_form_elastic


def report(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"\n[ACCEPTANCE {num:02d}] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"acceptance {num} {name}: {detail}"


@pytest.fixture(scope="module")
def bundled_tensors(tensor_unitary7, tensor_const_real5, tensor_const_complex5):
    return {
        "unitary_partial_wave": tensor_unitary7,
        "constant_real": tensor_const_real5,
        "constant_complex": tensor_const_complex5,
    }


@pytest.fixture(scope="module")
def bundled_amps(amp_unitary, amp_const_real, amp_const_complex):
    return {
        "unitary_partial_wave": amp_unitary,
        "constant_real": amp_const_real,
        "constant_complex": amp_const_complex,
    }


def test_01_kernel_hermiticity(bundled_tensors):
    worst = max(t.hermiticity_residual() for t in bundled_tensors.values())
    report(1, "kernel hermiticity", worst <= 1e-12, f"max rel residual {worst:.2e} <= 1e-12")


def test_02_kossakowski_psd(bundled_tensors):
    rng = np.random.default_rng(42)
    worst = 0.0
    for tensor in bundled_tensors.values():
        nn = tensor.grid.n_nodes
        for _ in range(100):
            i, l = (int(x) for x in rng.integers(0, nn, 2))
            mx = float(np.max(np.abs(tensor.kossakowski_matrix(i, l))))
            if mx == 0.0:
                continue
            worst = min(worst, bbe.kossakowski_min_eig(tensor, i, l) / mx)
    report(
        2,
        "Kossakowski positivity",
        worst >= -1e-10,
        f"min eig / max eig {worst:.2e} >= -1e-10 at 100 node pairs x 3 models",
    )


def test_03_closed_form_oracle(gas2, amp_const_real):
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(20):
        v = rng.uniform(-2.0, 2.0, 3)
        v1 = rng.uniform(-2.0, 2.0, 3)
        want = closed_form_elastic(gas2, 0.5, v, v1)
        got = kernel_point(gas2, amp_const_real, (0, 0, 0, 0), v, v1).real
        worst = max(worst, abs(got - want) / want)
    report(3, "closed-form kernel oracle", worst <= 1e-3, f"max rel dev {worst:.2e} <= 1e-3 at 20 geometries")


def test_04_mc_oracle(gas2, bundled_amps):
    eta = gas2.thermal_speed / 20.0
    rng = np.random.default_rng(99)
    worst_z = 0.0
    for name, amp in bundled_amps.items():
        entry = (0, 0, 0, 0)
        for g in range(5):
            v = rng.uniform(-1.5, 1.5, 3)
            v1 = rng.uniform(-1.5, 1.5, 3)
            want = kernel_point(gas2, amp, entry, v, v1)
            got, err = kernel_oracle_mc(
                gas2, amp, entry, v, v1, eta=eta, n_samples=10**6, seed=1000 + g
            )
            z = abs(got.real - want.real) / err
            worst_z = max(worst_z, z)
    report(4, "Monte Carlo kernel oracle", worst_z <= 3.0, f"max |z| {worst_z:.2f} <= 3 sigma, 5 geometries x 3 models")


def test_05_optical_theorem(gas2, amp_unitary, amp_const_real):
    speeds = np.linspace(0.2, 3.4, 20)
    worst_unitary = max(
        optical_theorem_residual(amp_unitary, gas2, 0, v) for v in speeds
    )
    # constant real c: residual = mu |v| |c|^2 exactly (|f_fwd| = 0.5 < 1)
    worst_counter = 0.0
    for v in (0.5, 1.0, 2.0):
        want = gas2.reduced_mass * v * 0.25
        got = optical_theorem_residual(amp_const_real, gas2, 0, v)
        worst_counter = max(worst_counter, abs(got - want))
    ok = worst_unitary <= 1e-10 and worst_counter <= 1e-10
    report(
        5,
        "optical theorem",
        ok,
        f"unitary residual {worst_unitary:.2e} <= 1e-10 at 20 speeds; "
        f"counterexample dev {worst_counter:.2e} <= 1e-10",
    )


def test_06_normalization_identity(gas2, amp_unitary):
    worst = 0.0
    for v in (0.3, 0.8, 1.5, 2.5):
        for m in range(2):
            fwd = gamma_forward(gas2, amp_unitary, m, m, v).real
            xsec = gamma_tilde(m, v, gas=gas2, amp=amp_unitary, mode="continuum")
            worst = max(worst, abs(fwd - xsec) / xsec)
    report(
        6,
        "normalization identity",
        worst <= 1e-2,
        f"forward-amplitude vs cross-section rate, max rel dev {worst:.2e} <= 1e-2",
    )


def test_07_equivalence(gen_me_unitary7, gen_std_unitary7, gas2, amp_unitary):
    rep = bbe.compare_generators(gen_me_unitary7, gen_std_unitary7, gas=gas2, amp=amp_unitary)
    ok = rep.max_rel <= 1e-10 and rep.rate_identity_max_rel <= 1e-2
    report(
        7,
        "formulation equivalence",
        ok,
        f"entrywise rel dev {rep.max_rel:.2e} <= 1e-10; "
        f"independent-route rate dev {rep.rate_identity_max_rel:.2e} <= 1e-2",
    )


def test_08_trace_conservation(gas2, gen_me_unitary7, gen_std_unitary7):
    rho0 = bbe.make_initial_field(gen_me_unitary7.grid, gas2, preset="superposition")
    dt = 0.4 / _operator_norm_estimate(gen_me_unitary7)
    worst = 0.0
    for gen in (gen_me_unitary7, gen_std_unitary7):
        traj = bbe.evolve(gen, rho0, t_final=1000 * dt, dt=dt, sample_every=100)
        worst = max(worst, float(np.max(np.abs(traj.trace - 1.0))))
    report(8, "trace conservation", worst <= 1e-8, f"max |Tr - 1| {worst:.2e} <= 1e-8 over 1000 RK4 steps, both generators")


def test_09_positivity(gas2, amp_const_complex, tensor_const_complex5):
    rates = bbe.build_rate_table(tensor=tensor_const_complex5, amp=amp_const_complex, mode="discrete")
    gens = (
        bbe.build_me_generator(tensor_const_complex5, rates),
        bbe.build_standard_generator(tensor_const_complex5, rates, "reduced"),
    )
    grid = tensor_const_complex5.grid
    dt = 0.4 / _operator_norm_estimate(gens[0])
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(20):
        a = rng.normal(size=(grid.n_nodes, 2, 2)) + 1j * rng.normal(size=(grid.n_nodes, 2, 2))
        psd = np.einsum("iab,icb->iac", a, np.conj(a))
        rho0 = bbe.make_initial_field(grid, gas2, preset="custom", values=psd)
        for gen in gens:
            traj = bbe.evolve(
                gen, rho0, t_final=300 * dt, dt=dt, sample_every=25, positivity_action="ignore"
            )
            worst = min(worst, float(traj.min_eig.min()))
    report(
        9,
        "positivity preservation",
        worst >= -1e-8,
        f"min node eigenvalue {worst:.2e} >= -1e-8, 20 random PSD starts, both generators",
    )


def test_10_re_gamma_identity(bundled_tensors, bundled_amps, gas2):
    worst = 0.0
    for name, tensor in bundled_tensors.items():
        rates = bbe.build_rate_table(tensor=tensor, amp=bundled_amps[name], mode="discrete")
        scale = max(float(np.max(np.abs(rates.gamma_fwd))), 1e-300)
        worst = max(worst, rates.check_re_identity() / scale)
    cont = bbe.build_rate_table(
        gas=gas2,
        amp=bundled_amps["unitary_partial_wave"],
        grid=bundled_tensors["constant_real"].grid,
        mode="continuum",
    )
    scale = max(float(np.max(np.abs(cont.gamma_fwd))), 1e-300)
    worst = max(worst, cont.check_re_identity() / scale)
    report(10, "Re Gamma identity", worst <= 1e-10, f"max rel dev {worst:.2e} <= 1e-10, all bundled models")


def test_11_rk4_order(gas2, amp_const_complex, tensor_const_complex5):
    rates = bbe.build_rate_table(tensor=tensor_const_complex5, amp=amp_const_complex, mode="discrete")
    gen = bbe.build_me_generator(tensor_const_complex5, rates)
    rho0 = bbe.make_initial_field(tensor_const_complex5.grid, gas2, preset="superposition")
    dt0 = 0.3 / _operator_norm_estimate(gen)
    T = 64 * dt0

    def endpoint(steps):
        traj = bbe.evolve(gen, rho0, t_final=T, dt=T / steps, sample_every=steps)
        return traj.populations[-1, 1]

    e1, e2, e3 = endpoint(64), endpoint(128), endpoint(256)
    ratio = (e1 - e2) / (e2 - e3)
    report(11, "RK4 convergence order", 12.0 <= ratio <= 20.0, f"dt vs dt/2 error ratio {ratio:.2f} in [12, 20]")
