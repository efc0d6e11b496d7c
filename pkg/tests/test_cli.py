"""Config resolution and the command-line experiment runner."""
import json
import math
import textwrap

import numpy as np
import pytest

from sclm.cli import main
from sclm.config import build_setup, canonical_json, config_hash, load_toml, resolve
from sclm.errors import ConfigError

DIFFUSION = """
    [manifold]
    name = "torus1d"
    nodes = 64

    [solver]
    epsilon = 0.1
    modes = 9
    dt = 0.015625
    T = 0.25
    seed = 0

    [initial-data]
    name = "sine"
    params = { amplitude = 0.5, mode = 1 }

    [experiment]
    name = "simulate"
"""

BURGERS_NOISE = """
    [manifold]
    name = "torus1d"
    nodes = 128

    [flux]
    name = "burgers-constant"

    [noise]
    name = "bump"
    params = { sigma = 0.2, support = 1.5, plateau = 0.5 }

    [solver]
    epsilon = 0.05
    modes = 17
    dt = 0.015625
    T = 0.25
    seed = 3

    [initial-data]
    name = "sine"
    params = { amplitude = 0.8, mode = 1 }

    [experiment]
    name = "simulate"
"""


def _cfg(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return str(p)


def _manifest(out_dir):
    with open(f"{out_dir}/manifest.json") as fh:
        return json.load(fh)


def _column(path, col):
    lines = open(path).read().splitlines()
    idx = lines[0].split(",").index(col)
    return np.array([float(r.split(",")[idx]) for r in lines[1:]])


# -- resolution and hashing --------------------------------------------------

def test_missing_fields_are_named(tmp_path):
    base = load_toml(_cfg(tmp_path, DIFFUSION))
    del base["solver"]["dt"]
    with pytest.raises(ConfigError, match="solver.dt"):
        resolve(base)
    with pytest.raises(ConfigError, match="manifold.name"):
        resolve({"manifold": {"nodes": 8}})


def test_bad_names_rejected(tmp_path):
    raw = load_toml(_cfg(tmp_path, DIFFUSION))
    raw["typo-section"] = {"a": 1}
    with pytest.raises(ConfigError, match="typo-section"):
        resolve(raw)
    del raw["typo-section"]
    raw["experiment"]["name"] = "frobnicate"
    with pytest.raises(ConfigError, match="frobnicate"):
        resolve(raw)
    raw["experiment"]["name"] = "simulate"
    raw["initial-data"]["name"] = "sawtooth"
    with pytest.raises(ConfigError, match="sawtooth"):
        resolve(raw)


def test_dt_must_divide_horizon(tmp_path):
    raw = load_toml(_cfg(tmp_path, DIFFUSION))
    raw["solver"]["dt"] = 0.3
    with pytest.raises(ConfigError, match="divide"):
        resolve(raw)


def test_hash_ignores_key_order(tmp_path):
    a = _cfg(tmp_path, DIFFUSION, "a.toml")
    reordered = """
        [experiment]
        name = "simulate"

        [initial-data]
        params = { mode = 1, amplitude = 0.5 }
        name = "sine"

        [solver]
        seed = 0
        T = 0.25
        dt = 0.015625
        modes = 9
        epsilon = 0.1

        [manifold]
        nodes = 64
        name = "torus1d"
    """
    b = _cfg(tmp_path, reordered, "b.toml")
    ra, rb = resolve(load_toml(a)), resolve(load_toml(b))
    assert config_hash(ra) == config_hash(rb)
    # canonical form is loadable and faithful
    assert json.loads(canonical_json(ra)) == ra
    # overrides participate in the hash
    assert config_hash(resolve(load_toml(a), seed=99)) != config_hash(ra)


def test_initial_data_profiles(tmp_path):
    raw = load_toml(_cfg(tmp_path, DIFFUSION))
    raw["initial-data"] = {"name": "riemann-smooth",
                           "params": {"left": -0.3, "right": 0.7, "width": 0.8}}
    setup = build_setup(resolve(raw))
    u = setup.u0
    assert abs(u[0] - (-0.3)) < 1e-12            # left state at the seam
    assert abs(np.max(u) - 0.7) < 1e-12          # right plateau attained
    assert np.all(u >= -0.3 - 1e-12) and np.all(u <= 0.7 + 1e-12)

    raw["initial-data"] = {"name": "constant", "params": {"value": 1.25}}
    assert np.all(build_setup(resolve(raw)).u0 == 1.25)


def test_initial_data_from_file(tmp_path):
    raw = load_toml(_cfg(tmp_path, DIFFUSION))
    good = tmp_path / "u0.npy"
    np.save(good, np.linspace(-0.5, 0.5, 64))
    raw["initial-data"] = {"name": "file", "params": {"path": str(good)}}
    assert build_setup(resolve(raw)).u0.shape == (64,)

    bad = tmp_path / "u0bad.npy"
    np.save(bad, np.zeros(32))
    raw["initial-data"]["params"]["path"] = str(bad)
    with pytest.raises(ConfigError, match="shape"):
        build_setup(resolve(raw))


# -- experiments through main() ----------------------------------------------

def test_simulate_outputs(tmp_path):
    cfg = _cfg(tmp_path, DIFFUSION)
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    man = _manifest(out)
    assert man["passed"] is True
    assert man["experiment"] == "simulate"
    assert man["config_hash"] == config_hash(resolve(load_toml(cfg)))
    # pure diffusion: the l2 monitor cannot grow
    l2 = _column(f"{out}/monitors_p0.csv", "l2")
    assert l2.size == 17 and np.all(np.diff(l2) <= 1e-15)
    assert _column(f"{out}/fields_p0.csv", "u").size == 64
    with open(f"{out}/config.canonical.json") as fh:
        assert json.load(fh) == resolve(load_toml(cfg))


def test_rerun_is_bit_exact(tmp_path):
    cfg = _cfg(tmp_path, BURGERS_NOISE)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", cfg, "--out", a]) == 0
    assert main(["simulate", "--config", cfg, "--out", b]) == 0
    ma, mb = _manifest(a), _manifest(b)
    assert ma["metrics"] == mb["metrics"]
    assert ma["config_hash"] == mb["config_hash"]
    with open(f"{a}/monitors_p0.csv") as fa, open(f"{b}/monitors_p0.csv") as fb:
        assert fa.read() == fb.read()


def test_seed_override_changes_run(tmp_path):
    cfg = _cfg(tmp_path, BURGERS_NOISE)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", cfg, "--out", a]) == 0
    assert main(["simulate", "--config", cfg, "--out", b, "--seed", "11"]) == 0
    ma, mb = _manifest(a), _manifest(b)
    assert mb["seed"] == 11
    assert ma["config_hash"] != mb["config_hash"]
    assert ma["metrics"]["terminal_l2"] != mb["metrics"]["terminal_l2"]


def test_threads_do_not_change_results(tmp_path):
    cfg = _cfg(tmp_path, BURGERS_NOISE)
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", cfg, "--out", a, "--paths", "3"]) == 0
    assert main(["simulate", "--config", cfg, "--out", b, "--paths", "3",
                 "--threads", "3"]) == 0
    assert _manifest(a)["metrics"] == _manifest(b)["metrics"]
    for pid in range(3):
        with open(f"{a}/monitors_p{pid}.csv") as fa, \
             open(f"{b}/monitors_p{pid}.csv") as fb:
            assert fa.read() == fb.read()


def test_check_flux(tmp_path, capsys):
    cfg = _cfg(tmp_path, BURGERS_NOISE)
    out = str(tmp_path / "out")
    assert main(["check-flux", "--config", cfg, "--out", out]) == 0
    met = _manifest(out)["metrics"]
    assert met["max_residual"] == 0.0          # constant field, flat torus
    assert met["noise_support_ok"] is True
    assert met["envelope_integral"] <= met["envelope_bound"]
    assert met["growth_interval_only"] is True  # quadratic flux

    # same runner without a [flux] section is a config error
    rc = main(["check-flux", "--config", _cfg(tmp_path, DIFFUSION, "d.toml"),
               "--out", str(tmp_path / "out2")])
    assert rc == 1
    assert "flux" in capsys.readouterr().err


def test_positional_experiment_wins(tmp_path):
    # config says simulate; the command line picks the flux check
    cfg = _cfg(tmp_path, BURGERS_NOISE)
    out = str(tmp_path / "out")
    assert main(["check-flux", "--config", cfg, "--out", out]) == 0
    assert _manifest(out)["experiment"] == "check-flux"


SWEEP = BURGERS_NOISE.replace(
    'name = "simulate"',
    'name = "viscosity-sweep"\nparams = { ladder = [0.1, 0.05, 0.025, 0.0125] }',
).replace("""
    [noise]
    name = "bump"
    params = { sigma = 0.2, support = 1.5, plateau = 0.5 }
""", "")


def test_viscosity_sweep(tmp_path):
    cfg = _cfg(tmp_path, SWEEP)
    out = str(tmp_path / "out")
    assert main(["viscosity-sweep", "--config", cfg, "--out", out]) == 0
    met = _manifest(out)["metrics"]
    assert met["strictly_decreasing"] is True
    assert len(met["distances"]) == 3
    eps_col = _column(f"{out}/sweep.csv", "epsilon")
    assert eps_col.size == 4
    d_col = _column(f"{out}/sweep.csv", "distance_to_next")
    assert math.isnan(d_col[-1]) and np.all(np.isfinite(d_col[:-1]))


def test_sweep_ladder_validation(tmp_path, capsys):
    short = SWEEP.replace("[0.1, 0.05, 0.025, 0.0125]", "[0.1, 0.05]")
    rc = main(["viscosity-sweep", "--config", _cfg(tmp_path, short, "s.toml"),
               "--out", str(tmp_path / "o1")])
    assert rc == 1 and "ladder" in capsys.readouterr().err

    unordered = SWEEP.replace("[0.1, 0.05, 0.025, 0.0125]", "[0.1, 0.1, 0.05]")
    rc = main(["viscosity-sweep", "--config", _cfg(tmp_path, unordered, "u.toml"),
               "--out", str(tmp_path / "o2")])
    assert rc == 1 and "decreasing" in capsys.readouterr().err


def test_contraction(tmp_path):
    cfg = _cfg(tmp_path, BURGERS_NOISE.replace(
        'name = "simulate"',
        'name = "contraction"\nparams = { paths = 4, perturbation = 0.1, perturbation_mode = 3 }'))
    out = str(tmp_path / "out")
    assert main(["contraction", "--config", cfg, "--out", out]) == 0
    met = _manifest(out)["metrics"]
    assert met["ratio"] <= 4.0 and met["max_ratio"] <= 4.0
    assert met["rhs_initial"] > 0.0
    d = _column(f"{out}/kinetic.csv", "D")
    assert d.size == 17
    assert d[0] == math.sqrt(met["rhs_initial"])


def test_isometry(tmp_path):
    iso = """
        [manifold]
        name = "torus1d"
        nodes = 16

        [solver]
        epsilon = 0.0
        modes = 1
        dt = 0.00390625
        T = 1.0
        seed = 7

        [initial-data]
        name = "constant"
        params = { value = 0.0 }

        [experiment]
        name = "isometry"
        params = { paths = 800, integrand = "brownian" }
    """
    out = str(tmp_path / "out")
    assert main(["isometry", "--config", _cfg(tmp_path, iso), "--out", out]) == 0
    met = _manifest(out)["metrics"]
    gap = abs(met["lhs"] - met["rhs"])
    assert gap <= 4.0 * (met["stderr_lhs"] + met["stderr_rhs"])
    assert len(open(f"{out}/isometry.csv").read().splitlines()) == 2


AUDIT = """
    [manifold]
    name = "torus1d"
    nodes = 128

    [flux]
    name = "burgers-constant"

    [solver]
    epsilon = 0.05
    modes = 33
    dt = 0.0078125
    T = 0.25
    seed = 0

    [initial-data]
    name = "sine"
    params = { amplitude = 0.8, mode = 1 }

    [experiment]
    name = "entropy-audit"
    params = { tolerance = 0.01 }
"""


def test_entropy_audit_pass(tmp_path):
    out = str(tmp_path / "out")
    assert main(["entropy-audit", "--config", _cfg(tmp_path, AUDIT),
                 "--out", out]) == 0
    met = _manifest(out)["metrics"]
    assert met["defect_min"] >= -0.01
    assert met["negative_fraction"] <= 0.05
    # single-path audit: the pairing column is identically zero
    assert np.all(_column(f"{out}/kinetic.csv", "D") == 0.0)


def test_entropy_audit_fail_exits_2(tmp_path):
    # an unsatisfiable tolerance must flip the check, not crash the run
    strict = AUDIT.replace("{ tolerance = 0.01 }",
                           "{ tolerance = -1.0, estimate_measure = false }")
    out = str(tmp_path / "out")
    rc = main(["entropy-audit", "--config", _cfg(tmp_path, strict), "--out", out])
    assert rc == 2
    assert _manifest(out)["passed"] is False


# -- failure modes and output routing ----------------------------------------

def test_malformed_toml_exits_1(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("not = [valid\n")
    assert main(["simulate", "--config", str(bad)]) == 1
    assert "TOML" in capsys.readouterr().err


def test_bad_usage_exits_1(tmp_path, capsys):
    assert main(["frobnicate", "--config", "x.toml"]) == 1
    capsys.readouterr()
    assert main(["simulate"]) == 1
    assert "--config" in capsys.readouterr().err


def test_out_dir_priority(tmp_path, monkeypatch):
    cfg_with_out = DIFFUSION + f"""
    [output]
    dir = "{tmp_path / 'from_config'}"
    """
    cfg = _cfg(tmp_path, cfg_with_out)
    flag_dir = tmp_path / "from_flag"
    assert main(["simulate", "--config", cfg, "--out", str(flag_dir)]) == 0
    assert flag_dir.exists() and not (tmp_path / "from_config").exists()

    assert main(["simulate", "--config", cfg]) == 0
    assert (tmp_path / "from_config").exists()

    env_dir = tmp_path / "from_env"
    monkeypatch.setenv("SCLM_OUT", str(env_dir))
    plain = _cfg(tmp_path, DIFFUSION, "plain.toml")
    assert main(["simulate", "--config", plain]) == 0
    assert env_dir.exists()

    monkeypatch.delenv("SCLM_OUT")
    monkeypatch.chdir(tmp_path)
    assert main(["simulate", "--config", plain]) == 0
    assert (tmp_path / "sclm_out").exists()
