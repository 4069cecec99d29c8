import os
import shutil

import numpy as np
import pytest

from bbe.cli import main, parse_config
from bbe.errors import UnknownKey, ValidationError

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")

MINIMAL = """
[model]
levels = 0.0 0.8
atom_mass = 1.0
perturber_mass = 1.0
perturber_density = 1.0
thermal_speed = 1.0

[amplitude]
kind = constant
c = 0.5 0.2 ; 0.2 0.3

[grid]
extent = 4.0
n_axis = 3
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_parse_minimal_defaults(tmp_path):
    spec = parse_config(write(tmp_path, MINIMAL))
    assert spec.gas.level_count == 2
    assert spec.grid.n_axis == 3
    assert spec.run["rate_mode"] == "discrete"
    assert spec.quad.n_phi == 32
    assert spec.output["plots"] is False


def test_parse_negative_density(tmp_path):
    bad = MINIMAL.replace("perturber_density = 1.0", "perturber_density = -2.0")
    with pytest.raises(ValidationError, match="perturber_density"):
        parse_config(write(tmp_path, bad))


def test_parse_unknown_key_suggestion(tmp_path):
    bad = MINIMAL.replace("thermal_speed =", "thermal_sped =")
    with pytest.raises(UnknownKey, match="thermal_speed"):
        parse_config(write(tmp_path, bad))


def test_exit_codes(tmp_path, capsys):
    good = write(tmp_path, MINIMAL)
    bad = write(tmp_path, MINIMAL.replace("kind = constant", "kind = bogus"), "bad.ini")
    out = str(tmp_path / "out")
    assert main(["kernel", "--config", good, "--out", out]) == 0
    assert main(["kernel", "--config", bad, "--out", out]) == 2
    assert main(["kernel", "--config", str(tmp_path / "missing.ini"), "--out", out]) == 4


def test_kernel_cache_hit_byte_identical(tmp_path, capsys):
    cfg = write(tmp_path, MINIMAL)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["kernel", "--config", cfg, "--out", out1]) == 0
    assert main(["kernel", "--config", cfg, "--out", out2]) == 0
    (name,) = [f for f in os.listdir(out1) if f.startswith("kernel_")]
    with open(os.path.join(out1, name), "rb") as f1, open(
        os.path.join(out2, name), "rb"
    ) as f2:
        assert f1.read() == f2.read()
    # second run in the same directory is a hit
    assert main(["kernel", "--config", cfg, "--out", out1]) == 0
    assert "(hit)" in capsys.readouterr().out


def test_cache_corruption_recovers(tmp_path, capsys):
    cfg = write(tmp_path, MINIMAL)
    out = str(tmp_path / "out")
    assert main(["kernel", "--config", cfg, "--out", out]) == 0
    (name,) = [f for f in os.listdir(out) if f.startswith("kernel_")]
    with open(os.path.join(out, name), "wb") as fh:
        fh.write(b"garbage")
    assert main(["kernel", "--config", cfg, "--out", out]) == 0
    assert "rebuilding" in capsys.readouterr().err


def test_rates_and_evolve_end_to_end(tmp_path, capsys):
    cfg = write(
        tmp_path,
        MINIMAL
        + """
[run]
t_final = 0.05
dt = 0.001
sample_every = 10
initial = superposition

[output]
prefix = tiny
""",
    )
    out = str(tmp_path / "out")
    assert main(["rates", "--config", cfg, "--out", out]) == 0
    assert main(["evolve", "--config", cfg, "--out", out]) == 0
    gt = os.path.join(out, "tiny_gamma_tilde.csv")
    traj = os.path.join(out, "tiny_trajectory.csv")
    assert os.path.exists(gt) and os.path.exists(traj)
    rows = open(gt).read().strip().splitlines()
    assert rows[0] == "node,vx,vy,vz,gamma_tilde_0,gamma_tilde_1"
    assert len(rows) == 1 + 27
    # rates are positive
    assert all(float(r.split(",")[4]) > 0 for r in rows[1:])


def test_verify_and_compare_counterexample(tmp_path, capsys):
    out = str(tmp_path / "out")
    cfg = os.path.join(CONFIG_DIR, "constant_real.ini")
    assert main(["compare", "--config", cfg, "--out", out]) == 0
    text = capsys.readouterr().out
    assert "FAILS" in text and "optical theorem" in text
    # verify flags the failing invariants with exit code 3
    assert main(["verify", "--config", cfg, "--out", out]) == 3
    text = capsys.readouterr().out
    assert "FAIL rate_identity_independent_rel" in text
    assert "FAIL optical_theorem_residual" in text
    assert "PASS kernel_hermiticity_rel" in text


def test_determinism_csv(tmp_path):
    cfg = write(
        tmp_path,
        MINIMAL + "\n[run]\nt_final = 0.02\ndt = 0.001\n[output]\nprefix = d\n",
    )
    outs = []
    for sub in ("x", "y"):
        out = str(tmp_path / sub)
        assert main(["evolve", "--config", cfg, "--out", out]) == 0
        outs.append(open(os.path.join(out, "d_trajectory.csv")).read())
    assert outs[0] == outs[1]
