import json
import os

import numpy as np
import pytest

import bbe

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


@pytest.fixture(scope="session")
def gas2():
    """Two-level reference model, equal masses, thermal speed 1."""
    return bbe.build_model(
        [0.0, 0.8],
        atom_mass=1.0,
        perturber_mass=1.0,
        perturber_density=1.0,
        thermal_speed=1.0,
    )


@pytest.fixture(scope="session")
def amp_unitary(gas2):
    """Unitary multichannel partial-wave model (s, p, d waves)."""
    with open(os.path.join(CONFIG_DIR, "unitary_two_level_kmat.json")) as fh:
        data = json.load(fh)
    return bbe.PartialWaveAmplitude(
        gas2.level_frequencies,
        gas2.reduced_mass,
        np.asarray(data["energies"]),
        np.asarray(data["kmats"]),
    )


@pytest.fixture(scope="session")
def amp_const_real(gas2):
    """Constant real elastic amplitude: optical-theorem counterexample."""
    return bbe.ConstantAmplitude(
        gas2.level_frequencies, gas2.reduced_mass, np.diag([0.5, 0.5]).astype(complex)
    )


@pytest.fixture(scope="session")
def amp_const_complex(gas2):
    return bbe.ConstantAmplitude(
        gas2.level_frequencies,
        gas2.reduced_mass,
        np.array([[0.5 + 0.1j, 0.2], [0.2, 0.3 + 0.05j]]),
    )


@pytest.fixture(scope="session")
def grid5():
    return bbe.VelocityGrid(extent=4.0, n_axis=5)


@pytest.fixture(scope="session")
def grid7():
    return bbe.VelocityGrid(extent=4.0, n_axis=7)


@pytest.fixture(scope="session")
def tensor_unitary7(gas2, amp_unitary, grid7):
    return bbe.build_kernel_tensor(gas2, amp_unitary, grid7, threads=os.cpu_count())


@pytest.fixture(scope="session")
def tensor_const_real5(gas2, amp_const_real, grid5):
    return bbe.build_kernel_tensor(gas2, amp_const_real, grid5, threads=os.cpu_count())


@pytest.fixture(scope="session")
def tensor_const_complex5(gas2, amp_const_complex, grid5):
    return bbe.build_kernel_tensor(
        gas2, amp_const_complex, grid5, threads=os.cpu_count()
    )


@pytest.fixture(scope="session")
def rates_unitary7(tensor_unitary7, amp_unitary):
    return bbe.build_rate_table(tensor=tensor_unitary7, amp=amp_unitary, mode="discrete")


@pytest.fixture(scope="session")
def gen_me_unitary7(tensor_unitary7, rates_unitary7):
    return bbe.build_me_generator(tensor_unitary7, rates_unitary7)


@pytest.fixture(scope="session")
def gen_std_unitary7(tensor_unitary7, rates_unitary7):
    return bbe.build_standard_generator(tensor_unitary7, rates_unitary7, "reduced")
