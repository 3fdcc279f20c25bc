import json
from pathlib import Path

import jsonschema
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lienard.cli import load_schema, main
from lienard.config import ConfigError, RunConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def report(tmp_path, name):
    return json.loads((tmp_path / f"{name}.json").read_text())


# ---------------------------------------------------------------- config


def test_dumped_config_matches_file():
    cfg = RunConfig.load(CONFIGS / "squares.toml")
    assert RunConfig.loads(cfg.dumps()) == cfg
    assert cfg.build_system().name == "squares"


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="nonsense"):
        RunConfig.loads('seed = 1\n[check]\nnonsense = 3\n')


def test_builtin_and_inline_are_exclusive():
    cfg = RunConfig.load(CONFIGS / "circle.toml")
    cfg.system.builtin = "squares"
    with pytest.raises(ConfigError):
        cfg.build_system()


finite = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    grid=st.integers(101, 1001),
    z0=st.lists(finite, max_size=4),
    eps=st.lists(st.floats(1e-3, 1.0), min_size=1, max_size=4),
    stratum=st.sampled_from(["case_a", "case_b", "case_c"]),
)
def test_config_round_trip(seed, grid, z0, eps, stratum):
    cfg = RunConfig(seed=seed)
    cfg.check.grid_density = grid
    cfg.simulate.z0 = z0
    cfg.periodic.eps_list = sorted(set(eps), reverse=True)
    cfg.probe.stratum = stratum
    assert RunConfig.loads(cfg.dumps()) == cfg


# ---------------------------------------------------------------- exit codes


@pytest.mark.parametrize("name", ["squares", "ellipses", "intro"])
def test_check_passes(tmp_path, name, capsys):
    assert run(tmp_path, "check", "--system", name) == 0
    assert "PASS" in capsys.readouterr().out


def test_check_circle_fails(tmp_path):
    assert run(tmp_path, "check", "--config", str(CONFIGS / "circle.toml")) == 1
    fails = report(tmp_path, "check")["report"]
    assert fails["verdict"] == "FAIL"


@pytest.mark.parametrize("cfg", ["negative_restoring.toml", "indefinite_damping.toml"])
def test_check_fixture_failures(tmp_path, cfg):
    assert run(tmp_path, "check", "--config", str(CONFIGS / cfg)) == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["check", "--system", "nope"],
        ["check", "--bogus"],
        ["simulate", "--system", "squares", "--z0", "1,2"],
        ["simulate", "--system", "squares", "--z0", "a,b"],
        ["simulate", "--system", "squares", "--axes", "x1,q9"],
        ["probe", "--system", "squares", "--stratum", "case_q"],
        ["periodic", "--system", "squares", "--eps", "0.1,0.2"],
    ],
)
def test_bad_arguments_exit_64(tmp_path, argv):
    with pytest.raises(SystemExit) as exc:
        code = run(tmp_path, *argv)
        raise SystemExit(code)
    assert exc.value.code == 64


def test_missing_config_file(tmp_path):
    assert run(tmp_path, "check", "--config", str(tmp_path / "absent.toml")) == 64


def test_simulate_out_of_domain(tmp_path):
    assert run(tmp_path, "simulate", "--system", "squares", "--z0", "6,0,0,0") == 3


def test_simulate_early_stop(tmp_path):
    code = run(tmp_path, "simulate", "--config", str(CONFIGS / "negative_restoring.toml"), "--z0", "0.5,0,0,0")
    assert code == 3
    assert report(tmp_path, "simulate")["reason"] == "left_domain"


def test_probe_that_never_leaves(tmp_path):
    assert run(tmp_path, "probe", "--system", "oscillator", "--count", "3") == 1


# ---------------------------------------------------------------- reports


FAST = {
    "check": ["check", "--system", "ellipses"],
    "simulate": ["simulate", "--system", "ellipses", "--t-max", "20"],
    "roa": ["roa", "--system", "squares", "--points-per-axis", "17"],
    "eigen": ["eigen", "--system", "squares"],
    "probe": ["probe", "--system", "squares", "--stratum", "case_c", "--count", "5"],
    "periodic": ["periodic", "--system", "squares", "--eps", "0.1,0.05"],
}


@pytest.mark.parametrize("cmd", sorted(FAST))
def test_reports_validate(tmp_path, cmd):
    assert run(tmp_path, *FAST[cmd]) == 0
    data = report(tmp_path, cmd)
    jsonschema.validate(data, load_schema(cmd))
    assert data["command"] == cmd
    assert (tmp_path / f"{cmd}.txt").read_text().strip()


@pytest.mark.parametrize("cmd", ["check", "probe", "simulate", "periodic"])
def test_reruns_are_byte_identical(tmp_path, cmd):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, *FAST[cmd]) == run(b, *FAST[cmd])
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_simulate_outputs(tmp_path):
    run(tmp_path, *FAST["simulate"], "--axes", "x2,y2")
    svg = (tmp_path / "phase.svg").read_text()
    assert svg.startswith("<svg") and "<polyline" in svg and "V=" in svg
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[1]
    assert header == "t,x1,x2,y1,y2,V,Vdot"


def test_periodic_writes_orbits(tmp_path):
    run(tmp_path, *FAST["periodic"])
    data = report(tmp_path, "periodic")
    assert data["files"] == ["orbit_0.csv", "orbit_1.csv"]
    assert data["result"]["trend"] == "PASS"
    assert (tmp_path / "orbit_1.csv").exists()


def test_seed_changes_probe_points(tmp_path):
    run(tmp_path / "a", *FAST["probe"], "--seed", "1")
    run(tmp_path / "b", *FAST["probe"], "--seed", "2")
    pa = report(tmp_path / "a", "probe")["probes"]
    pb = report(tmp_path / "b", "probe")["probes"]
    assert pa != pb
