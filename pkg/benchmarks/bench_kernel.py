"""Benchmark the compiled kernel quadrature against the NumPy fallback.

Runs the hot path (batched quadrature geometry + weighted reduction)
and a full kernel-tensor build with each available backend, and prints
timings plus the cross-backend agreement of the results.

Usage: python3 benchmarks/bench_kernel.py [--n-axis 7] [--repeat 3]
"""

import argparse
import time

import numpy as np

import bbe
from bbe.backend import available_backends, get_backend
from bbe.kernel import QuadratureSpec, _radial_rule


def bench_geometry(backend_name: str, n_batch: int, repeat: int) -> float:
    be = get_backend(backend_name)
    rng = np.random.default_rng(0)
    vout = rng.normal(size=(n_batch, 3))
    v1 = np.array([0.3, -0.2, 0.5])
    quad = QuadratureSpec()
    r_nodes, r_weights = _radial_rule(quad)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        speed_in, cos_theta, weight = be.quadrature_geometry(
            vout, v1, 0.0, 2.0, 1.0, 1.0, r_nodes, r_weights, quad.n_phi, quad.radial_margin
        )
        prod = (speed_in * 0.1 + cos_theta).astype(complex)
        be.reduce_kernel(weight, prod)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_build(backend_name: str, n_axis: int) -> tuple[float, bbe.KernelTensor]:
    gas = bbe.build_model(
        [0.0, 0.8], atom_mass=1.0, perturber_mass=1.0, perturber_density=1.0, thermal_speed=1.0
    )
    amp = bbe.ConstantAmplitude(
        gas.level_frequencies, gas.reduced_mass,
        np.array([[0.5 + 0.1j, 0.2], [0.2, 0.3 + 0.05j]]),
    )
    grid = bbe.VelocityGrid(extent=4.0, n_axis=n_axis)
    t0 = time.perf_counter()
    tensor = bbe.build_kernel_tensor(gas, amp, grid, backend=backend_name)
    return time.perf_counter() - t0, tensor


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-axis", type=int, default=7)
    ap.add_argument("--n-batch", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    names = available_backends()
    print(f"available backends: {', '.join(names)}")

    print(f"\nhot path: {args.n_batch} output nodes x quadrature (best of {args.repeat})")
    base = None
    for name in names:
        t = bench_geometry(name, args.n_batch, args.repeat)
        speedup = "" if base is None else f"  ({base / t:.1f}x vs {names[0]})"
        if base is None:
            base = t
        print(f"  {name:8s} {t * 1e3:9.2f} ms{speedup}")

    print(f"\nfull kernel-tensor build, two levels, {args.n_axis}^3 grid")
    tensors = {}
    base = None
    for name in names:
        t, tensors[name] = bench_build(name, args.n_axis)
        speedup = "" if base is None else f"  ({base / t:.1f}x vs {names[0]})"
        if base is None:
            base = t
        print(f"  {name:8s} {t:9.2f} s{speedup}")

    if len(tensors) > 1:
        ref = tensors[names[0]]
        for name in names[1:]:
            dev = max(
                float(np.max(np.abs(ref.pop - tensors[name].pop))),
                float(np.max(np.abs(ref.coh - tensors[name].coh))),
            )
            print(f"\nmax |{names[0]} - {name}| over all entries: {dev:.3e}")


if __name__ == "__main__":
    main()
