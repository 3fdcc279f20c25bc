import numpy as np
import pytest

from lienard.analysis import (
    CASE_A,
    CASE_B,
    CASE_C,
    PreconditionError,
    WOPoint,
    non_invariance_probe,
    probe_many,
    sample_sublevel,
    seed_WO_points,
    verify_attraction,
)
from lienard.lyapunov import LyapunovData
from lienard.model import LienardSystem, builtin

BOX = [(-5.0, 5.0), (-5.0, 5.0)]


def test_case_a_points_have_zero_velocity():
    rep = seed_WO_points(builtin("squares"), 25, CASE_A, seed=3)
    assert len(rep.points) == 25
    for p in rep.points:
        assert np.all(p.z[2:] == 0) and np.any(p.z[:2] != 0)
        assert p.vdot == 0.0


def test_case_b_points_lie_on_stratum():
    sys = builtin("ellipses")
    rep = seed_WO_points(sys, 20, CASE_B, subset=[1], seed=0)
    assert len(rep.points) == 20
    for p in rep.points:
        assert p.z[2] == 0.0
        assert abs(sys.f_values(p.z[:2])[1]) <= 1e-12
        assert abs(p.vdot) < 1e-10
        assert np.linalg.norm(p.z) > 0


def test_case_b_default_cycles_through_subsets():
    rep = seed_WO_points(builtin("squares"), 20, CASE_B, seed=1)
    subsets = {p.subset for p in rep.points}
    assert subsets == {(1,), (2,)}


def test_case_c_points_sit_on_common_zeros():
    sys = builtin("squares")
    rep = seed_WO_points(sys, 20, CASE_C, seed=2)
    assert len(rep.points) == 20
    roots = {tuple(np.round(p.z[:2], 8)) for p in rep.points}
    assert (1.0, 1.0) in roots
    for p in rep.points:
        assert 0.1 <= np.linalg.norm(p.z[2:]) <= 1.0
        np.testing.assert_allclose(sys.f_values(p.z[:2]), 0.0, atol=1e-12)


def test_empty_stratum_is_reported():
    sys = LienardSystem(2, ("1 + x1^2", "1"), ("x1", "x2"), BOX, BOX, "positive")
    rep = seed_WO_points(sys, 10, CASE_C)
    assert rep.points == [] and rep.note
    rep = seed_WO_points(sys, 10, CASE_B)
    assert rep.points == [] and rep.empty_subsets == [[1], [2]]


def test_unknown_stratum():
    with pytest.raises(ValueError):
        seed_WO_points(builtin("squares"), 5, "case_d")


def test_probe_examples():
    sys = builtin("ellipses")
    p = WOPoint(np.array([2 ** -0.5, 0.0, 0.0, 1.0]), CASE_B, (1,), 0.0)
    res = non_invariance_probe(sys, p)
    assert res.left and res.leave_time < 0.1
    assert res.vdot_at_leave < -1e-10
    q = WOPoint(np.array([0.7, -0.4, 0.0, 0.0]), CASE_A, (1, 2), 0.0)
    res = non_invariance_probe(builtin("squares"), q)
    assert res.left and 0 < res.leave_time < 1.0


def test_probe_rejects_origin():
    with pytest.raises(ValueError):
        non_invariance_probe(builtin("squares"), WOPoint(np.zeros(4), CASE_A, (1, 2), 0.0))


def test_probe_failure_carries_trajectory():
    # no damping anywhere: Vdot stays 0 and the orbit never leaves W_O
    p = WOPoint(np.array([0.5, 0.0, 0.0, 0.0]), CASE_A, (1, 2), 0.0)
    res = non_invariance_probe(builtin("oscillator"), p)
    assert not res.left and res.leave_time is None
    assert res.trajectory is not None and res.trajectory.t[-1] == 1.0


@pytest.mark.parametrize("name", ["squares", "ellipses"])
@pytest.mark.parametrize("stratum", [CASE_A, CASE_B, CASE_C])
def test_every_seeded_point_leaves(name, stratum):
    sys = builtin(name)
    pts = seed_WO_points(sys, 10, stratum, seed=7).points
    for p, r in zip(pts, probe_many(sys, pts)):
        assert abs(p.vdot) < 1e-10
        assert r.left
        assert 0 <= r.leave_time <= 1.0
        assert r.vdot_at_leave < -1e-10


def test_sublevel_samples_inside_level():
    sys = builtin("ellipses")
    Z = sample_sublevel(sys, 0.25, 200, seed=4)
    assert Z.shape == (200, 4)
    assert np.all(LyapunovData.for_system(sys).V(Z) < 0.25)
    np.testing.assert_array_equal(Z, sample_sublevel(sys, 0.25, 200, seed=4))


def test_attraction_ellipses():
    rep = verify_attraction(builtin("ellipses"), 0.25, 100, 500.0, seed=0)
    assert rep.converged_fraction == 1.0
    assert np.all(rep.terminal_norms < rep.convergence_radius)
    assert np.all(rep.max_V_increase <= 1e-8)


def test_attraction_terminal_energy_at_tight_radius():
    rep = verify_attraction(builtin("ellipses"), 0.25, 20, 500.0, seed=1, convergence_radius=1e-9)
    assert rep.converged_fraction == 1.0
    assert np.all(rep.terminal_V < 1e-15)


def test_attraction_requires_passing_check():
    with pytest.raises(PreconditionError):
        verify_attraction(builtin("oscillator"), 0.5, 5, 10.0)


def test_attraction_override_on_conservative_system():
    with pytest.warns(UserWarning):
        rep = verify_attraction(builtin("oscillator"), 0.5, 20, 50.0, override=True)
    assert rep.converged_fraction == 0.0
    assert rep.overridden
    d = rep.to_dict()
    assert d["slowest"]["terminal_norm"] == pytest.approx(rep.terminal_norms.max())
