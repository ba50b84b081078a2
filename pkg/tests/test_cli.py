import json
import os

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from stiffwork import cli
from stiffwork.io import read_csv
from stiffwork.propagator import IntegrationError

SMALL = """
[model]
topology = ladder
L = 3
[protocol]
dt = 0.05
[analysis]
graining = 0.3
delta = 0.3
Delta = 1.5
n_energies = 5
force = true
t_max = 10
"""


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return str(p)


def read_outputs(out):
    files = {}
    for root, _, names in os.walk(out):
        for n in names:
            if n != "manifest.json":
                with open(os.path.join(root, n), "rb") as fh:
                    files[os.path.relpath(os.path.join(root, n), out)] = fh.read()
    return files


@pytest.mark.filterwarnings("ignore:initial window holds")
@pytest.mark.parametrize("kind", cli.KINDS)
def test_every_kind_runs(kind, small_config, tmp_path, capsys):
    out = tmp_path / kind
    code = cli.main([kind, "--config", small_config, "--preset", "ladder-weak-weak",
                     "--out", str(out)])
    assert code == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["kind"] == kind and m["files"]
    for f in m["files"]:
        assert (out / f).exists()
    assert m["config"]["lam"] == 0.26  # preset layered under the file


@pytest.mark.filterwarnings("ignore:initial window holds")
def test_outputs_are_bitwise_reproducible(small_config, tmp_path):
    for name in ("a", "b"):
        assert cli.main(["drive", "--config", small_config, "--preset", "ladder-weak-strong",
                         "--seed", "5", "--out", str(tmp_path / name)]) == 0
    assert read_outputs(tmp_path / "a") == read_outputs(tmp_path / "b")


@pytest.mark.filterwarnings("ignore:initial window holds")
def test_worker_count_does_not_change_results(small_config, tmp_path, monkeypatch):
    cfg_text = SMALL.replace("L = 3", "L = 3\n[run]\nout = x").replace("n_energies = 5",
                                                                          "n_energies = 5\nsizes = 2,3")
    p = tmp_path / "s.ini"
    p.write_text(cfg_text)
    assert cli.main(["stiffness", "--config", str(p), "--workers", "1",
                     "--out", str(tmp_path / "w1")]) == 0
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    assert cli.main(["stiffness", "--config", str(p), "--out", str(tmp_path / "w2")]) == 0
    m = json.loads((tmp_path / "w2" / "manifest.json").read_text())
    assert m["config"]["workers"] == 2
    assert read_outputs(tmp_path / "w1") == read_outputs(tmp_path / "w2")


def test_env_var_sits_between_file_and_flag(small_config):
    env = {cli.WORKERS_ENV: "3"}
    assert cli.build_config("dos", small_config, environ=env).workers == 3
    assert cli.build_config("dos", small_config, workers=2, environ=env).workers == 2


def test_numeric_breach_exit_code(small_config, tmp_path, monkeypatch):
    def boom(run):
        raise IntegrationError("norm drift")
    monkeypatch.setitem(cli.RUNNERS, "drive", boom)
    assert cli.main(["drive", "--config", small_config, "--out", str(tmp_path)]) == 3


def test_small_window_refused_without_force(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(SMALL.replace("force = true", "force = false"))
    assert cli.main(["drive", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_unknown_preset_and_missing_config(tmp_path):
    assert cli.main(["dos", "--preset", "nope"]) == 2
    assert cli.main(["dos", "--config", str(tmp_path / "missing.ini")]) == 2
    assert cli.main(["dos"]) == 2


INVALID = [
    ("model", "topology", "ring"),
    ("model", "L", "-1"),
    ("model", "L", "2.5"),
    ("model", "L", "9"),
    ("model", "sector", "0.25"),
    ("model", "sector", "abc"),
    ("model", "colour", "red"),
    ("protocol", "nu", "0"),
    ("protocol", "lam", "-1"),
    ("protocol", "half_periods", "0"),
    ("protocol", "dt", "0.5"),
    ("analysis", "delta", "0"),
    ("analysis", "Delta", "-2"),
    ("analysis", "graining", "0"),
    ("analysis", "theta", "1.0"),
    ("analysis", "E0", "middle"),
    ("analysis", "mode", "mixed"),
    ("analysis", "method", "magic"),
    ("analysis", "floor", "1.5"),
    ("analysis", "n_seeds", "0"),
    ("run", "seed", "-3"),
    ("run", "workers", "0"),
    ("nowhere", "x", "1"),
]


@pytest.mark.parametrize("section, key, value", INVALID)
def test_invalid_config_exits_before_compute(section, key, value, tmp_path, monkeypatch):
    called = []
    for k in cli.KINDS:
        monkeypatch.setitem(cli.RUNNERS, k, lambda run: called.append(run))
    p = tmp_path / "bad.ini"
    p.write_text(f"[{section}]\n{key} = {value}\n")
    assert cli.main(["drive", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert called == []
    assert not (tmp_path / "o").exists()


def test_sector_rejected_for_driven_kinds(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[model]\nL = 3\nsector = 0.5\n")
    assert cli.main(["drive", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(key=st.sampled_from(["lam", "nu", "dt", "delta", "Delta", "graining", "half_periods",
                            "n_energies", "L", "workers"]),
       value=st.one_of(st.floats(allow_nan=True, allow_infinity=True), st.text(max_size=5),
                       st.integers(-10**6, 10**6)))
def test_fuzzed_values_never_crash(key, value, tmp_path):
    cfg = cli.ExperimentConfig()
    try:
        cli._coerce(cfg, {key: value}, "fuzz")
        cfg.validate("stiffness")
    except cli.ConfigError:
        return
    # anything accepted must be a runnable configuration
    assert cfg.nu > 0 and cfg.dt > 0 and cfg.delta > 0 and cfg.workers >= 1
    assert cfg.spec().N <= 15


def test_presets_are_valid():
    for name in cli.PRESETS:
        cli.preset(name).validate("drive")
    p = cli.preset("ladder-strong-strong")
    assert (p.kappa, p.lam, p.half_periods) == (0.6, 2.5, 1)


@pytest.mark.filterwarnings("ignore:initial window holds")
def test_crooks_counts_residual_vanishes(small_config, tmp_path):
    out = tmp_path / "crooks"
    assert cli.main(["crooks", "--config", small_config, "--out", str(out)]) == 0
    _, cols = read_csv(out / "crooks.csv")
    assert len(cols["W"]) >= 2
    # exact up to the integration error of the dt = 0.05 step
    assert max(abs(x) for x in cols["residual_counts"]) < 1e-4


def test_relax_reports_infinite_time_value(small_config, tmp_path):
    out = tmp_path / "relax"
    assert cli.main(["relax", "--config", small_config, "--out", str(out)]) == 0
    _, cols = read_csv(out / "relaxation.csv")
    assert len(cols["infinite_time"]) == 2
    assert all(abs(x) <= 0.5 for x in cols["infinite_time"])
