import numpy as np
import pytest

import bbe
from bbe.errors import GridMismatch
from bbe.generators import kossakowski_min_eig


def _random_hermitian_field(rng, nn, n):
    a = rng.normal(size=(nn, n, n)) + 1j * rng.normal(size=(nn, n, n))
    return a + np.conj(np.swapaxes(a, 1, 2))


def test_zero_tensor_gives_zero_generator(gas2, grid5):
    amp = bbe.build_amplitude_model(gas2, {"kind": "zero"})
    tensor = bbe.build_kernel_tensor(gas2, amp, grid5)
    rates = bbe.build_rate_table(tensor=tensor, amp=amp, mode="discrete")
    for gen in (
        bbe.build_me_generator(tensor, rates),
        bbe.build_standard_generator(tensor, rates, "reduced"),
        bbe.build_standard_generator(tensor, rates, "raw"),
    ):
        assert np.all(gen.pop_block == 0.0)
        assert all(np.all(b == 0.0) for b in gen.coh_blocks.values())


def test_symmetric_constant_model_coherence_equals_population(gas2, grid5):
    """Identical constant elastic amplitudes make K_{11,22} = K_{11,11},
    so the coherence block equals the elastic population diagonal block."""
    amp = bbe.ConstantAmplitude(
        gas2.level_frequencies, gas2.reduced_mass, np.diag([0.5, 0.5]).astype(complex)
    )
    tensor = bbe.build_kernel_tensor(gas2, amp, grid5)
    rates = bbe.build_rate_table(tensor=tensor, amp=amp, mode="discrete")
    gen = bbe.build_me_generator(tensor, rates)
    nn = grid5.n_nodes
    pop00 = gen.pop_block[:nn, :nn]
    coh01 = gen.coh_blocks[(0, 1)]
    assert np.max(np.abs(coh01 - pop00)) <= 1e-12 * np.max(np.abs(pop00))


def test_hermiticity_preservation(gen_me_unitary7, gen_std_unitary7, tensor_unitary7, rates_unitary7):
    rng = np.random.default_rng(11)
    raw = bbe.build_standard_generator(tensor_unitary7, rates_unitary7, "raw")
    nn = gen_me_unitary7.n_nodes
    worst = 0.0
    for _ in range(100):
        f = _random_hermitian_field(rng, nn, 2)
        for gen in (gen_me_unitary7, gen_std_unitary7, raw):
            out = gen.apply(f)
            worst = max(
                worst, float(np.max(np.abs(out - np.conj(np.swapaxes(out, 1, 2)))))
            )
    assert worst <= 1e-12


def test_secular_block_structure(gen_me_unitary7):
    """No population <-> coherence coupling and no cross-coherence coupling."""
    nn, n = gen_me_unitary7.n_nodes, gen_me_unitary7.n_levels
    dense = gen_me_unitary7.dense()
    mask = np.zeros((nn * n * n, nn * n * n), dtype=bool)

    def flat(i, m, k):
        return (i * n + m) * n + k

    idx = np.arange(nn)
    for m in range(n):
        for k in range(n):
            mask[np.ix_(flat(idx, m, m), flat(idx, k, k))] = True
    for m in range(n):
        for k in range(n):
            if m != k:
                mask[np.ix_(flat(idx, m, k), flat(idx, m, k))] = True
    assert np.all(dense[~mask] == 0.0)


def test_trace_column_sums(gen_me_unitary7, gen_std_unitary7):
    assert gen_me_unitary7.trace_column_residual() <= 1e-13
    assert gen_std_unitary7.trace_column_residual() <= 1e-13


def test_equivalence_shared_tensor(gen_me_unitary7, gen_std_unitary7, gas2, amp_unitary):
    report = bbe.compare_generators(
        gen_me_unitary7, gen_std_unitary7, gas=gas2, amp=amp_unitary
    )
    assert report.max_rel <= 1e-10
    assert report.rate_identity_ok
    assert report.optical_theorem_ok
    # self-comparison is exactly zero
    self_rep = bbe.compare_generators(gen_me_unitary7, gen_me_unitary7)
    assert self_rep.pop_max_abs == 0.0 and self_rep.coh_max_abs == 0.0


def test_counterexample_flags(gas2, amp_const_real, tensor_const_real5):
    rates = bbe.build_rate_table(tensor=tensor_const_real5, amp=amp_const_real, mode="discrete")
    gme = bbe.build_me_generator(tensor_const_real5, rates)
    gsr = bbe.build_standard_generator(tensor_const_real5, rates, "reduced")
    report = bbe.compare_generators(gme, gsr, gas=gas2, amp=amp_const_real)
    assert report.rate_identity_ok is False
    assert report.optical_theorem_ok is False
    assert "optical" in report.to_text()


def test_raw_vs_reduced_imaginary_shift(tensor_unitary7, rates_unitary7):
    reduced = bbe.build_standard_generator(tensor_unitary7, rates_unitary7, "reduced")
    raw = bbe.build_standard_generator(tensor_unitary7, rates_unitary7, "raw")
    assert np.array_equal(raw.pop_block, reduced.pop_block)
    for (m, k), rblock in raw.coh_blocks.items():
        diff = rblock - reduced.coh_blocks[(m, k)]
        off = diff.copy()
        np.fill_diagonal(off, 0.0)
        assert np.all(off == 0.0)
        diag = np.diag(diff)
        assert np.all(diag.real == 0.0)
        # the diagonal difference is -i Im Gamma_mn
        assert np.allclose(diag.imag, -rates_unitary7.gamma_fwd[m, k].imag)


def test_kossakowski_psd(tensor_unitary7, tensor_const_real5, tensor_const_complex5):
    rng = np.random.default_rng(23)
    for tensor in (tensor_unitary7, tensor_const_real5, tensor_const_complex5):
        nn = tensor.grid.n_nodes
        for _ in range(30):
            i, l = (int(x) for x in rng.integers(0, nn, 2))
            mx = float(np.max(np.abs(tensor.kossakowski_matrix(i, l))))
            if mx == 0.0:
                continue
            assert kossakowski_min_eig(tensor, i, l) >= -1e-10 * mx


def test_kossakowski_rank_one_single_channel(grid5):
    """One level, constant amplitude: each kernel matrix is a 1x1 block."""
    gas = bbe.build_model(
        [0.0], atom_mass=1.0, perturber_mass=1.0, perturber_density=1.0, thermal_speed=1.0
    )
    amp = bbe.ConstantAmplitude(gas.level_frequencies, gas.reduced_mass, [[0.5]])
    tensor = bbe.build_kernel_tensor(gas, amp, grid5)
    mat = tensor.kossakowski_matrix(3, 17)
    assert mat.shape == (1, 1)
    assert np.linalg.matrix_rank(mat) == 1


def test_grid_mismatch_rejected(tensor_unitary7, amp_unitary, gas2, grid5, tensor_const_real5):
    rates5 = bbe.build_rate_table(tensor=tensor_const_real5, mode="discrete")
    with pytest.raises(GridMismatch):
        bbe.build_me_generator(tensor_unitary7, rates5)


def test_apply_matches_dense(gen_std_unitary7):
    rng = np.random.default_rng(4)
    nn, n = gen_std_unitary7.n_nodes, gen_std_unitary7.n_levels
    f = rng.normal(size=(nn, n, n)) + 1j * rng.normal(size=(nn, n, n))
    direct = gen_std_unitary7.apply(f).reshape(-1)
    via_dense = gen_std_unitary7.dense() @ f.reshape(-1)
    assert np.max(np.abs(direct - via_dense)) <= 1e-12 * max(np.max(np.abs(direct)), 1.0)
