"""Collisional (Boltzmann) part of Bloch-Boltzmann equations.

Builds velocity-resolved collision kernels for an n-level nondegenerate
atom in a thermal structureless-perturber bath, assembles the
master-equation and standard-form collisional generators, evolves the
velocity-resolved density matrix, and verifies hermiticity,
normalization, positivity and the equivalence of the two formulations.
"""

from .atom import AtomGasModel, bohr_frequency, build_model, maxwellian
from .backend import available_backends, get_backend
from .grid import VelocityGrid
from .kernel import (
    KernelTensor,
    QuadratureSpec,
    RateTable,
    build_kernel_tensor,
    build_rate_table,
    gamma_forward,
    gamma_tilde,
    kernel_oracle_mc,
    kernel_point,
    load_kernel_tensor,
    save_kernel_tensor,
)
from .evolution import (
    DensityField,
    Trajectory,
    evolve,
    make_initial_field,
    positivity_min_eig,
    trace_total,
)
from .generators import (
    EquivalenceReport,
    Generator,
    build_me_generator,
    build_standard_generator,
    compare_generators,
    kossakowski_min_eig,
)
from .scattering import (
    AmplitudeModel,
    ConstantAmplitude,
    PartialWaveAmplitude,
    TabulatedAmplitude,
    build_amplitude_model,
    load_amplitude_table,
    optical_theorem_residual,
    total_cross_section,
)

__version__ = "0.1.0"
