"""Batch command-line front end.

Commands
--------
kernel   build (and cache) the kernel tensor, print a summary
rates    emit the per-node rate tables as CSV
evolve   integrate an initial field, emit the trajectory CSV (+ plots)
verify   run the full invariant suite, nonzero exit on failure
compare  entrywise ME vs standard-form comparison report

Configuration is a sectioned key/value text file (INI syntax); the
grammar is documented in the README.  Exit codes: 0 ok, 2 configuration
error, 3 numerical-invariant failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import difflib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .atom import AtomGasModel, build_model
from .errors import (
    BBEError,
    CacheError,
    ConfigError,
    ParseError,
    UnknownKey,
    ValidationError,
)
from .evolution import evolve as run_evolve
from .evolution import make_initial_field, positivity_min_eig, trace_total
from .generators import (
    build_me_generator,
    build_standard_generator,
    compare_generators,
    kossakowski_min_eig,
)
from .grid import VelocityGrid
from .kernel import (
    QuadratureSpec,
    build_kernel_tensor,
    build_rate_table,
    config_hash,
    load_kernel_tensor,
    save_kernel_tensor,
)
from .scattering import (
    build_amplitude_model,
    load_amplitude_table,
    optical_theorem_residual,
)

_SECTION_KEYS = {
    "model": {
        "levels",
        "atom_mass",
        "perturber_mass",
        "perturber_density",
        "thermal_speed",
        "temperature",
        "boltzmann_constant",
        "deg_tol",
    },
    "amplitude": {"kind", "c", "kmat_file", "table_file"},
    "grid": {"extent", "n_axis"},
    "quadrature": {"n_radial", "n_phi", "radial_margin", "refine_shells"},
    "run": {
        "rate_mode",
        "generator",
        "t_final",
        "dt",
        "sample_every",
        "initial",
        "initial_levels",
        "initial_file",
        "initial_thermal_speed",
        "positivity_action",
        "eps_pos",
        "verify_steps",
    },
    "output": {"directory", "plots", "prefix"},
}

_REQUIRED_SECTIONS = ("model", "amplitude", "grid")


@dataclass
class RunSpec:
    """Fully validated run configuration."""

    gas: AtomGasModel
    amplitude: object
    grid: VelocityGrid
    quad: QuadratureSpec
    run: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    path: str = ""


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{x:.17g}"
    return str(x)


def _unknown(section: str, key: str) -> UnknownKey:
    close = difflib.get_close_matches(key, sorted(_SECTION_KEYS[section]), n=1)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return UnknownKey(f"unknown key {key!r} in section [{section}]{hint}")


def _get(cfg: dict, section: str, key: str, conv, default=None, required=False):
    raw = cfg.get(section, {}).get(key)
    if raw is None:
        if required:
            raise ValidationError(f"missing required key {key!r} in section [{section}]")
        return default
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ValidationError(
            f"bad value for [{section}] {key} = {raw!r}: {exc}"
        ) from exc


def _floats(raw: str) -> np.ndarray:
    return np.array([float(t) for t in raw.replace(",", " ").split()])


def _complex_table(raw: str) -> np.ndarray:
    rows = [r for r in raw.split(";") if r.strip()]
    table = [[complex(t) for t in row.split()] for row in rows]
    return np.array(table, dtype=complex)


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _positive(name):
    def conv(raw):
        v = float(raw)
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
        return v

    return conv


def parse_config(path: str) -> RunSpec:
    """Read and validate a configuration file."""
    import configparser

    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except OSError:
        raise
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from exc

    cfg: dict = {}
    for section in parser.sections():
        if section not in _SECTION_KEYS:
            close = difflib.get_close_matches(section, sorted(_SECTION_KEYS), n=1)
            hint = f"; did you mean [{close[0]}]?" if close else ""
            raise UnknownKey(f"unknown section [{section}]{hint}")
        cfg[section] = {}
        for key, value in parser.items(section):
            if key not in _SECTION_KEYS[section]:
                raise _unknown(section, key)
            cfg[section][key] = value
    for section in _REQUIRED_SECTIONS:
        if section not in cfg:
            raise ValidationError(f"missing required section [{section}]")

    base = os.path.dirname(os.path.abspath(path))

    def respath(raw: str) -> str:
        return raw if os.path.isabs(raw) else os.path.join(base, raw)

    levels = _get(cfg, "model", "levels", _floats, required=True)
    if levels.size < 1:
        raise ValidationError("[model] levels must list at least one frequency")
    kwargs = dict(
        atom_mass=_get(cfg, "model", "atom_mass", _positive("atom_mass"), required=True),
        perturber_mass=_get(
            cfg, "model", "perturber_mass", _positive("perturber_mass"), required=True
        ),
        perturber_density=_get(
            cfg,
            "model",
            "perturber_density",
            _positive("perturber_density"),
            required=True,
        ),
        thermal_speed=_get(cfg, "model", "thermal_speed", _positive("thermal_speed")),
        temperature=_get(cfg, "model", "temperature", _positive("temperature")),
        boltzmann_constant=_get(
            cfg, "model", "boltzmann_constant", _positive("boltzmann_constant"), 1.0
        ),
        deg_tol=_get(cfg, "model", "deg_tol", _positive("deg_tol")),
    )
    try:
        gas = build_model(levels, **kwargs)
    except BBEError as exc:
        raise ValidationError(f"[model]: {exc}") from exc

    kind = _get(cfg, "amplitude", "kind", str, required=True).strip().lower()
    amp_spec: dict = {"kind": kind}
    if kind == "constant":
        amp_spec["c"] = _get(cfg, "amplitude", "c", _complex_table, required=True)
        if amp_spec["c"].shape != (gas.level_count, gas.level_count):
            raise ValidationError(
                f"[amplitude] c must be a {gas.level_count}x{gas.level_count} table"
            )
    elif kind == "partial_wave":
        kpath = respath(_get(cfg, "amplitude", "kmat_file", str, required=True))
        try:
            with open(kpath) as fh:
                data = json.load(fh)
            amp_spec["energies"] = np.asarray(data["energies"], dtype=float)
            amp_spec["kmats"] = np.asarray(data["kmats"], dtype=float)
        except OSError as exc:
            raise ValidationError(f"[amplitude] kmat_file: {exc}") from exc
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise ValidationError(
                f"[amplitude] kmat_file {kpath}: malformed reaction-matrix file ({exc})"
            ) from exc
    elif kind != "zero" and kind != "tabulated":
        raise ValidationError(f"[amplitude] unknown kind {kind!r}")
    try:
        if kind == "tabulated":
            tpath = respath(_get(cfg, "amplitude", "table_file", str, required=True))
            try:
                amp = load_amplitude_table(tpath, gas)
            except OSError as exc:
                raise ValidationError(f"[amplitude] table_file: {exc}") from exc
        else:
            amp = build_amplitude_model(gas, amp_spec)
    except ValidationError:
        raise
    except BBEError as exc:
        raise ValidationError(f"[amplitude]: {exc}") from exc

    grid = VelocityGrid(
        extent=_get(cfg, "grid", "extent", _positive("extent"), required=True),
        n_axis=_get(cfg, "grid", "n_axis", int, required=True),
    )
    if grid.n_axis < 2:
        raise ValidationError("[grid] n_axis must be at least 2")

    quad = QuadratureSpec(
        n_radial=_get(cfg, "quadrature", "n_radial", int, QuadratureSpec.n_radial),
        n_phi=_get(cfg, "quadrature", "n_phi", int, QuadratureSpec.n_phi),
        radial_margin=_get(
            cfg,
            "quadrature",
            "radial_margin",
            _positive("radial_margin"),
            QuadratureSpec.radial_margin,
        ),
        refine_shells=_get(
            cfg, "quadrature", "refine_shells", int, QuadratureSpec.refine_shells
        ),
    )
    if min(quad.n_radial, quad.n_phi) < 2 or quad.refine_shells < 0:
        raise ValidationError("[quadrature] rule sizes must be sensible")

    run = {
        "rate_mode": _get(cfg, "run", "rate_mode", str, "discrete").strip().lower(),
        "generator": _get(cfg, "run", "generator", str, "me").strip().lower(),
        "t_final": _get(cfg, "run", "t_final", _positive("t_final")),
        "dt": _get(cfg, "run", "dt", _positive("dt")),
        "sample_every": _get(cfg, "run", "sample_every", int, 1),
        "initial": _get(cfg, "run", "initial", str, "ground-thermal").strip().lower(),
        "initial_levels": tuple(
            _get(cfg, "run", "initial_levels", lambda s: [int(t) for t in s.split()], [0, 1])
        ),
        "initial_file": cfg.get("run", {}).get("initial_file"),
        "initial_thermal_speed": _get(
            cfg, "run", "initial_thermal_speed", _positive("initial_thermal_speed")
        ),
        "positivity_action": _get(cfg, "run", "positivity_action", str, "warn"),
        "eps_pos": _get(cfg, "run", "eps_pos", _positive("eps_pos"), 1e-8),
        "verify_steps": _get(cfg, "run", "verify_steps", int, 1000),
    }
    if run["initial_file"] is not None:
        run["initial_file"] = respath(run["initial_file"])
    if run["rate_mode"] not in ("discrete", "continuum"):
        raise ValidationError(f"[run] rate_mode must be discrete or continuum")
    if run["generator"] not in ("me", "standard-reduced", "standard-raw"):
        raise ValidationError(
            "[run] generator must be me, standard-reduced or standard-raw"
        )

    output = {
        "directory": cfg.get("output", {}).get("directory", "."),
        "plots": _get(cfg, "output", "plots", _bool, False),
        "prefix": _get(cfg, "output", "prefix", str, "bbe"),
    }
    return RunSpec(
        gas=gas, amplitude=amp, grid=grid, quad=quad, run=run, output=output, path=path
    )


def _cached_tensor(spec: RunSpec, outdir: str, threads, use_cache: bool):
    digest = config_hash(spec.gas, spec.amplitude, spec.grid, spec.quad)
    cache_path = os.path.join(outdir, f"kernel_{digest[:16]}.npz")
    if use_cache and os.path.exists(cache_path):
        try:
            tensor = load_kernel_tensor(
                cache_path, spec.gas, spec.amplitude, spec.grid, spec.quad
            )
            return tensor, cache_path, True
        except (CacheError, OSError, ValueError) as exc:
            print(f"warning: cache {cache_path} unusable ({exc}); rebuilding", file=sys.stderr)
    tensor = build_kernel_tensor(
        spec.gas, spec.amplitude, spec.grid, spec.quad, threads=threads
    )
    if use_cache:
        save_kernel_tensor(cache_path, tensor)
    return tensor, cache_path, False


def _write_csv(path: str, header: list, rows) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _cmd_kernel(spec: RunSpec, args) -> int:
    t0 = time.time()
    tensor, cache_path, hit = _cached_tensor(
        spec, args.out, args.threads, not args.no_cache
    )
    elapsed = time.time() - t0
    n, nn = tensor.n_levels, spec.grid.n_nodes
    print(f"kernel tensor: {n} levels, {nn} nodes, backend {tensor.meta.get('backend')}")
    print(f"population entries: {tensor.pop.size}, coherence entries: {tensor.coh.size}")
    print(f"hermiticity residual: {tensor.hermiticity_residual():.3e}")
    print(f"cache: {cache_path} ({'hit' if hit else 'rebuilt'}), {elapsed:.2f} s")
    return 0


def _build_rates(spec: RunSpec, tensor):
    if spec.run["rate_mode"] == "discrete":
        return build_rate_table(tensor=tensor, amp=spec.amplitude, mode="discrete")
    return build_rate_table(
        gas=spec.gas, amp=spec.amplitude, grid=spec.grid, mode="continuum"
    )


def _cmd_rates(spec: RunSpec, args) -> int:
    tensor, _, _ = _cached_tensor(spec, args.out, args.threads, not args.no_cache)
    rates = _build_rates(spec, tensor)
    prefix = os.path.join(args.out, spec.output["prefix"])
    n = spec.gas.level_count
    nodes = spec.grid.nodes
    rows = [
        [l, *nodes[l], *rates.gamma_tilde[:, l]] for l in range(spec.grid.n_nodes)
    ]
    _write_csv(
        f"{prefix}_gamma_tilde.csv",
        ["node", "vx", "vy", "vz"] + [f"gamma_tilde_{m}" for m in range(n)],
        rows,
    )
    rows = []
    for l in range(spec.grid.n_nodes):
        for m in range(n):
            for k in range(n):
                gf = rates.gamma_fwd[m, k, l]
                rows.append([l, m, k, gf.real, gf.imag])
    _write_csv(
        f"{prefix}_gamma_fwd.csv", ["node", "m", "n", "re", "im"], rows
    )
    print(f"rate tables ({rates.mode} mode) written to {prefix}_gamma_*.csv")
    print(f"Re-identity residual: {rates.check_re_identity():.3e}")
    return 0


def _make_generator(spec: RunSpec, tensor, rates):
    kind = spec.run["generator"]
    if kind == "me":
        return build_me_generator(tensor, rates)
    return build_standard_generator(tensor, rates, kind.split("-", 1)[1])


def _initial_field(spec: RunSpec):
    values = None
    if spec.run["initial"] == "custom":
        if not spec.run["initial_file"]:
            raise ValidationError("[run] custom initial state needs initial_file")
        with np.load(spec.run["initial_file"]) as data:
            values = np.asarray(data["values"])
    return make_initial_field(
        spec.grid,
        spec.gas,
        preset=spec.run["initial"],
        levels=tuple(spec.run["initial_levels"][:2]),
        thermal_speed=spec.run["initial_thermal_speed"],
        values=values,
    )


def _plot_trajectory(traj, prefix: str) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = []
    panels = [
        ("populations", traj.populations, [f"pop {m}" for m in range(traj.populations.shape[1])]),
        ("coherences", traj.coherence_abs, [f"|coh {m}{k}|" for (m, k) in traj.coherence_pairs]),
        ("trace", traj.trace[:, None] - 1.0, ["trace - 1"]),
        ("min_eig", traj.min_eig[:, None], ["min node eigenvalue"]),
    ]
    for name, data, labels in panels:
        if data.size == 0:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        for col, label in enumerate(labels):
            ax.plot(traj.times, data[:, col], label=label)
        ax.set_xlabel("t")
        ax.set_title(name.replace("_", " "))
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        path = f"{prefix}_{name}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        files.append(path)
    return files


def _cmd_evolve(spec: RunSpec, args) -> int:
    if spec.run["t_final"] is None or spec.run["dt"] is None:
        raise ValidationError("[run] evolve needs t_final and dt")
    tensor, _, _ = _cached_tensor(spec, args.out, args.threads, not args.no_cache)
    rates = _build_rates(spec, tensor)
    gen = _make_generator(spec, tensor, rates)
    rho0 = _initial_field(spec)
    traj = run_evolve(
        gen,
        rho0,
        t_final=spec.run["t_final"],
        dt=spec.run["dt"],
        sample_every=spec.run["sample_every"],
        positivity_action=spec.run["positivity_action"],
        eps_pos=spec.run["eps_pos"],
    )
    prefix = os.path.join(args.out, spec.output["prefix"])
    csv_path = f"{prefix}_trajectory.csv"
    traj.to_csv(csv_path)
    print(f"trajectory ({len(traj.times)} samples, generator {gen.variant}) -> {csv_path}")
    print(
        f"final trace {traj.trace[-1]:.12f}, min eigenvalue {traj.min_eig.min():.3e}, "
        f"hermiticity residual {traj.herm_residual.max():.3e}"
    )
    if traj.breaches:
        print(f"positivity breaches recorded: {len(traj.breaches)}")
    if spec.output["plots"]:
        for path in _plot_trajectory(traj, prefix):
            print(f"plot -> {path}")
    return 0


def _cmd_compare(spec: RunSpec, args) -> int:
    tensor, _, _ = _cached_tensor(spec, args.out, args.threads, not args.no_cache)
    rates = _build_rates(spec, tensor)
    gme = build_me_generator(tensor, rates)
    gsr = build_standard_generator(tensor, rates, "reduced")
    report = compare_generators(gme, gsr, gas=spec.gas, amp=spec.amplitude)
    text = report.to_text()
    path = os.path.join(args.out, f"{spec.output['prefix']}_compare.txt")
    with open(path, "w") as fh:
        fh.write(text + "\n")
    print(text)
    print(f"report -> {path}")
    return 0


def _cmd_verify(spec: RunSpec, args) -> int:
    rng = np.random.default_rng(args.seed)
    checks: list = []

    def check(name: str, value: float, tol: float, ok=None) -> None:
        if ok is None:
            ok = value <= tol
        checks.append((name, value, tol, bool(ok)))

    tensor, _, _ = _cached_tensor(spec, args.out, args.threads, not args.no_cache)
    check("kernel_hermiticity_rel", tensor.hermiticity_residual(), 1e-12)

    nn = spec.grid.n_nodes
    worst = 0.0
    for _ in range(100):
        i, l = (int(x) for x in rng.integers(0, nn, 2))
        mx = float(np.max(np.abs(tensor.kossakowski_matrix(i, l))))
        if mx > 0:
            worst = min(worst, kossakowski_min_eig(tensor, i, l) / mx)
    check("kossakowski_min_eig_over_max", -worst, 1e-10)

    rates = _build_rates(spec, tensor)
    scale = max(float(np.max(np.abs(rates.gamma_fwd))), 1e-300)
    check("re_gamma_identity_rel", rates.check_re_identity() / scale, 1e-10)

    gme = build_me_generator(tensor, rates)
    gsr = build_standard_generator(tensor, rates, "reduced")
    check("trace_column_residual", gme.trace_column_residual(), 1e-13)
    report = compare_generators(gme, gsr, gas=spec.gas, amp=spec.amplitude)
    check("generator_equivalence_rel", report.max_rel, 1e-10)
    check("rate_identity_independent_rel", report.rate_identity_max_rel, 1e-2)
    check("optical_theorem_residual", report.optical_theorem_residual, 1e-8)

    n_steps = spec.run["verify_steps"]
    from .evolution import _operator_norm_estimate

    dt = 0.4 / max(_operator_norm_estimate(gme), 1e-300)
    preset = "superposition" if spec.gas.level_count > 1 else "ground-thermal"
    rho0 = make_initial_field(spec.grid, spec.gas, preset=preset)
    for gen in (gme, gsr):
        traj = run_evolve(
            gen,
            rho0,
            t_final=n_steps * dt,
            dt=dt,
            sample_every=max(n_steps // 20, 1),
            positivity_action="ignore",
        )
        tag = gen.variant.lower().replace("-", "_")
        check(f"trace_drift_{tag}", float(np.max(np.abs(traj.trace - 1.0))), 1e-8)
        check(f"positivity_min_eig_{tag}", -float(traj.min_eig.min()), 1e-8)
        check(f"hermiticity_evolved_{tag}", float(traj.herm_residual.max()), 1e-10)

    lines = []
    failed = 0
    for name, value, tol, ok in checks:
        failed += 0 if ok else 1
        lines.append(f"{'PASS' if ok else 'FAIL'} {name} = {_fmt(value)} (tol {tol:g})")
    lines.append(f"verify: {len(checks) - failed}/{len(checks)} checks passed")
    text = "\n".join(lines)
    path = os.path.join(args.out, f"{spec.output['prefix']}_verify.txt")
    with open(path, "w") as fh:
        fh.write(text + "\n")
    print(text)
    print(f"report -> {path}")
    return 0 if failed == 0 else 3


_COMMANDS = {
    "kernel": _cmd_kernel,
    "rates": _cmd_rates,
    "evolve": _cmd_evolve,
    "verify": _cmd_verify,
    "compare": _cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bbe",
        description="Collisional Bloch-Boltzmann generators: build, evolve, verify.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the run configuration")
        p.add_argument("--out", default=None, help="output directory (default: [output] directory)")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
        p.add_argument("--no-cache", action="store_true", help="skip the kernel tensor cache")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = parse_config(args.config)
        if args.out is None:
            args.out = spec.output["directory"]
            if not os.path.isabs(args.out):
                args.out = os.path.join(
                    os.path.dirname(os.path.abspath(args.config)), args.out
                )
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](spec, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    except BBEError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
