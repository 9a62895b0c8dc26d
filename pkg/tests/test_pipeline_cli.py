import hashlib
import math

import numpy as np
import pytest

from nestedprox import cli
from nestedprox.imaging import BlurOp, snr
from nestedprox.io import read_keyvalue, read_pgm, read_raw, read_trace_csv, write_keyvalue, write_pgm
from nestedprox.nested import ConstrainedCompositeProblem, OuterConfig
from nestedprox.pipeline import (
    ConfigError,
    RunConfig,
    load_image,
    normalized_objective,
    restore,
    run_solver,
    simulate,
    trace_rows,
)
from nestedprox.prox import PotentialArray

from conftest import CONFIG_DIR

SMALL = {
    "images.truth": "synthetic:phantom:16", "blur.q": "3", "frame.levels": "2",
    "potential.approx.chi": "0", "potential.approx.omega": "1e-6",
    "potential.detail.chi": "0.04", "potential.detail.omega": "1e-4",
    "solver.outer_cap": "40", "solver.outer_eta": "1e-3", "seed": "7",
}


def write_config(path, items):
    write_keyvalue(path, items)
    return path


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# configuration

def test_shipped_configs_parse():
    for name in ("poisson_reference.conf", "gaussian_reference.conf"):
        cfg = RunConfig.from_file(CONFIG_DIR / name)
        assert cfg.theta > 0 and cfg.solver.kappa > 0


def test_reference_config_values():
    cfg = RunConfig.from_file(CONFIG_DIR / "poisson_reference.conf")
    assert (cfg.blur_q, cfg.family.value, cfg.alpha, cfg.seed) == (5, "poisson", 0.1, 7)
    assert cfg.solver.kappa == 60 and cfg.solver.eta == 1e-4
    assert load_image(cfg.truth).shape == (64, 64)


def test_defaults_when_unspecified():
    cfg = RunConfig.from_mapping({})
    assert (cfg.approx.chi, cfg.approx.omega, cfg.approx.p) == (1.0, 0.1, 2.0)
    assert cfg.detail_potential(3) == cfg.detail[0]
    assert cfg.solver.kappa == 60 and cfg.epsilon == 1e-16


def test_per_level_detail_potentials():
    cfg = RunConfig.from_mapping({"potential.detail.chi": "0.5", "potential.detail2.p": "4/3"})
    assert cfg.detail_potential(2).p == pytest.approx(4 / 3)
    assert cfg.detail_potential(2).chi == 0.5
    assert cfg.detail_potential(1).p == 2.0


@pytest.mark.parametrize("items, msg", [
    ({"solver.kapa": "1"}, "unknown"),
    ({"extension.theta": "0"}, "theta"),
    ({"extension.theta": "abc"}, "parse"),
    ({"solver.kappa": "-1"}, "solver"),
    ({"solver.eta": "0"}, "solver"),
    ({"potential.detail.p": "3"}, "potential.detail"),
    ({"potential.approx.chi": "-1"}, "chi"),
    ({"blur.q": "4"}, "blur.q"),
    ({"noise.family": "laplace"}, "noise.family"),
    ({"solver.algorithm": "admm"}, "algorithm"),
    ({"frame.kind": "dual-tree"}, "frame.kind"),
])
def test_config_rejects(items, msg):
    with pytest.raises(ConfigError, match=msg):
        RunConfig.from_mapping(items)


def test_overrides():
    cfg = RunConfig.from_mapping({})
    new = cfg.with_overrides(theta=1.0, algorithm="dr-outer", seed=5)
    assert (new.theta, new.algorithm, new.seed) == (1.0, "dr-outer", 5)
    with pytest.raises(ConfigError):
        cfg.with_overrides(theta=-1.0)
    with pytest.raises(ConfigError):
        cfg.with_overrides(algorithm="nope")


def test_epsilon_rules():
    cfg = RunConfig.from_mapping({"extension.epsilon_rule": "inverse", "extension.theta": "0.01",
                                  "extension.epsilon": "1e-6"})
    assert cfg.epsilon_value == pytest.approx(1e-4)


def test_relative_paths_resolve_against_config(tmp_path):
    write_pgm(tmp_path / "img.pgm", np.full((8, 8), 9.0))
    cfg = RunConfig.from_file(write_config(tmp_path / "c.conf", {"images.truth": "img.pgm"}))
    assert load_image(cfg.truth).tolist() == np.full((8, 8), 9.0).tolist()


def test_synthetic_spec_errors():
    for bad in ("synthetic:moon:8", "synthetic:phantom", "synthetic:phantom:x"):
        with pytest.raises(ConfigError):
            load_image(bad)


# toy problem through the dispatcher

@pytest.mark.parametrize("algorithm", ["dr-outer", "fb-outer"])
def test_toy_config_reaches_known_solution(algorithm):
    cfg = RunConfig.from_mapping({"solver.kappa": "1", "solver.eta": "1e-10",
                                  "solver.outer_cap": "5000", "solver.outer_eta": "1e-12"})
    p = np.array([2.0, -1.0])
    prob = ConstrainedCompositeProblem.from_potential(
        PotentialArray.l1(np.ones(2)), lambda x: 0.5 * float(np.sum((x - p) ** 2)),
        lambda x: x - p, 1.0, lambda x: np.clip(x, 0, 1), audit=True)
    rep = run_solver(prob, cfg.solver, np.zeros(2), algorithm)
    np.testing.assert_allclose(rep.solution, [1.0, 0.0], atol=1e-6)
    assert prob.outside_calls == 0


def test_unknown_algorithm():
    with pytest.raises(ConfigError):
        run_solver(None, OuterConfig(), np.zeros(1), "admm")


# simulate

def checker_config(tmp_path, **extra):
    items = {"images.truth": "synthetic:checkerboard:64", "blur.q": "5", "noise.family": "poisson",
             "noise.alpha": "0.1", "seed": "7"}
    items.update(extra)
    return write_config(tmp_path / "sim.conf", items)


def test_simulate_is_checksum_stable(tmp_path):
    conf = checker_config(tmp_path)
    digests = []
    for run in ("a", "b"):
        assert cli.main(["simulate", "--config", str(conf), "--out", str(tmp_path / run)]) == 0
        digests.append([sha(tmp_path / run / f) for f in ("observation.pgm", "observation.raw")])
    assert digests[0] == digests[1]
    assert cli.main(["simulate", "--config", str(conf), "--seed", "8", "--out", str(tmp_path / "c")]) == 0
    assert sha(tmp_path / "c" / "observation.raw") != digests[0][1]
    meta = read_keyvalue(tmp_path / "a" / "observation.meta")
    assert (meta["family"], float(meta["alpha"]), meta["seed"], meta["blur.q"]) == ("poisson", 0.1, "7", "5")
    z = read_raw(tmp_path / "a" / "observation.raw")
    np.testing.assert_array_equal(read_pgm(tmp_path / "a" / "observation.pgm"), z)
    assert np.all(z == np.rint(z)) and z.min() >= 0


def test_simulate_gaussian_limit(tmp_path):
    conf = checker_config(tmp_path, **{"noise.family": "gaussian", "noise.alpha": "1e6"})
    assert cli.main(["simulate", "--config", str(conf), "--out", str(tmp_path)]) == 0
    z = read_raw(tmp_path / "observation.raw")
    cfg = RunConfig.from_file(conf)
    blurred = BlurOp(5).apply(load_image(cfg.truth))
    assert snr(z, blurred) >= 60


def test_simulate_missing_input_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "truth.pgm"
    conf = write_config(tmp_path / "m.conf", {"images.truth": str(missing)})
    assert cli.main(["simulate", "--config", str(conf), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_config_names_path(tmp_path, capsys):
    conf = tmp_path / "absent.conf"
    assert cli.main(["simulate", "--config", str(conf), "--out", str(tmp_path)]) == 2
    assert str(conf) in capsys.readouterr().err


def test_out_of_range_input_rejected(tmp_path, capsys):
    write_pgm(tmp_path / "big.pgm", np.full((8, 8), 1000.0), maxval=65535)
    conf = write_config(tmp_path / "c.conf", {"images.truth": "big.pgm"})
    assert cli.main(["simulate", "--config", str(conf), "--out", str(tmp_path)]) == 2
    assert "[0, 255]" in capsys.readouterr().err


# prox command

@pytest.mark.parametrize("argv, want", [
    (["--chi", "1", "--t", "3"], "2"),
    (["--chi", "1", "--t", "3", "--box", "0", "1"], "1"),
    (["--omega", "0.5", "--t", "3"], "1.5"),
])
def test_prox_command(capsys, argv, want):
    assert cli.main(["prox"] + argv) == 0
    assert capsys.readouterr().out.strip() == want


def test_prox_command_four_thirds(capsys):
    assert cli.main(["prox", "--chi", "1", "--omega", "1", "--p", "4/3", "--t", "2"]) == 0
    y = float(capsys.readouterr().out)
    assert abs(y - 1 + (4 / 3) * y ** (1 / 3)) <= 1e-14
    assert y == pytest.approx(0.2096, abs=1e-3)


def test_prox_command_usage_errors(capsys):
    assert cli.main(["prox", "--p", "5/4", "--t", "1"]) == 2
    assert cli.main(["prox", "--chi", "-1", "--t", "1"]) == 2
    with pytest.raises(SystemExit) as err:
        cli.main(["prox"])
    assert err.value.code == 2


def test_restore_requires_config(capsys):
    assert cli.main(["restore"]) == 2
    assert "--config" in capsys.readouterr().err


# restore

def small_conf(tmp_path, **extra):
    items = dict(SMALL)
    items.update(extra)
    return write_config(tmp_path / "small.conf", items)


def drop_time(rows):
    return [{k: v for k, v in r.items() if k != "wall_seconds"} for r in rows]


def test_restore_twice_gives_identical_traces(tmp_path, capsys):
    conf = small_conf(tmp_path)
    traces = []
    for run in ("a", "b"):
        assert cli.main(["restore", "--config", str(conf), "--out", str(tmp_path / run), "--audit"]) == 0
        traces.append(read_trace_csv(tmp_path / run / "trace.csv"))
    assert drop_time(traces[0]) == drop_time(traces[1])
    assert len(traces[0]) >= 2
    walls = [r["wall_seconds"] for r in traces[0]]
    assert walls == sorted(walls)
    rep = read_keyvalue(tmp_path / "a" / "report.txt")
    assert rep["gradient_calls_outside_C"] == "0"
    assert float(rep["snr_restored_db"]) > float(rep["snr_degraded_db"])
    img = read_pgm(tmp_path / "a" / "restored.pgm")
    assert img.shape == (16, 16) and img.min() >= 0 and img.max() <= 255
    assert "objective_final" in capsys.readouterr().out


def test_restore_from_simulated_files(tmp_path):
    sim = small_conf(tmp_path)
    assert cli.main(["simulate", "--config", str(sim), "--out", str(tmp_path / "sim")]) == 0
    items = dict(SMALL)
    items["images.observation"] = "sim/observation.meta"
    conf = write_config(tmp_path / "r.conf", items)
    assert cli.main(["restore", "--config", str(conf), "--algorithm", "dr-outer",
                     "--out", str(tmp_path / "r")]) == 0
    rep = read_keyvalue(tmp_path / "r" / "report.txt")
    assert rep["algorithm"] == "dr-outer"
    # same observation as simulating in-process
    cfg = RunConfig.from_file(conf).with_overrides(algorithm="dr-outer")
    truth, obs = simulate(cfg)
    res = restore(cfg, obs, truth)
    assert float(rep["objective_final"]) == res.report.objective_final


def test_restore_without_truth_omits_snr(tmp_path):
    sim = small_conf(tmp_path)
    assert cli.main(["simulate", "--config", str(sim), "--out", str(tmp_path / "sim")]) == 0
    items = {k: v for k, v in SMALL.items() if k != "images.truth"}
    items["images.observation"] = "sim/observation.raw"
    conf = write_config(tmp_path / "r.conf", items)
    assert cli.main(["restore", "--config", str(conf), "--out", str(tmp_path / "r")]) == 0
    rep = read_keyvalue(tmp_path / "r" / "report.txt")
    assert "snr_restored_db" not in rep and "objective_final" in rep


def test_restore_meta_mismatch_is_usage_error(tmp_path, capsys):
    sim = small_conf(tmp_path)
    assert cli.main(["simulate", "--config", str(sim), "--out", str(tmp_path / "sim")]) == 0
    items = dict(SMALL)
    items.update({"images.observation": "sim/observation.meta", "noise.family": "gaussian"})
    conf = write_config(tmp_path / "r.conf", items)
    assert cli.main(["restore", "--config", str(conf), "--out", str(tmp_path / "r")]) == 2
    assert "does not match" in capsys.readouterr().err


def test_restore_solver_failure_keeps_partial_trace(tmp_path, monkeypatch, capsys):
    import nestedprox.pipeline as pl

    real = pl.SmoothDataTerm.gradient
    calls = {"n": 0}

    def flaky(self, x):
        calls["n"] += 1
        g = real(self, x)
        return g * np.nan if calls["n"] > 5 else g

    monkeypatch.setattr(pl.SmoothDataTerm, "gradient", flaky)
    conf = small_conf(tmp_path, **{"solver.algorithm": "fb-outer"})
    with np.errstate(invalid="ignore"):
        code = cli.main(["restore", "--config", str(conf), "--out", str(tmp_path / "r")])
    assert code == 1
    assert "solver failure" in capsys.readouterr().err
    assert len(read_trace_csv(tmp_path / "r" / "trace_partial.csv")) >= 1


def test_normalized_objective_endpoints():
    cfg = RunConfig.from_mapping(SMALL)
    truth, obs = simulate(cfg)
    res = restore(cfg, obs, truth)
    rows = trace_rows(res.report)
    norm = [r["normalized_objective"] for r in rows]
    assert norm[0] == 1.0 and norm[-1] == 0.0
    assert all(math.isfinite(v) and -1e-12 <= v <= 1 + 1e-12 for v in norm)
    assert normalized_objective([3.0, 3.0]).tolist() == [0.0, 0.0]


def test_shipped_gaussian_config_improves_snr(tmp_path):
    cfg = RunConfig.from_file(CONFIG_DIR / "gaussian_reference.conf")
    truth, obs = simulate(cfg)
    res = restore(cfg, obs, truth, audit=True)
    assert res.snr_restored >= res.snr_degraded
    assert res.setup.problem.outside_calls == 0
