import json
from importlib import resources

import numpy as np
import pytest

from lienard.hypotheses import (
    CONTINUUM,
    FAIL,
    INCONCLUSIVE,
    ISOLATED,
    PASS,
    ConstraintSet,
    Tolerances,
    check_all,
    check_h1,
    check_h2,
    isolation_probe,
    solve_constraint_set,
)
from lienard.model import LienardSystem, builtin

BOX = [(-5.0, 5.0), (-5.0, 5.0)]
R3 = 3 ** -0.5


def circle():
    f = "(x1^2 + x2^2 - 1)^2"
    return LienardSystem(2, (f, f), ("x1", "x2"), BOX, BOX, "circle")


def hausdorff(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = np.linalg.norm(a[:, None] - b[None], axis=-1)
    return max(d.min(axis=1).max(), d.min(axis=0).max())


def reference():
    return json.loads(resources.files("lienard.data").joinpath("reference_roots.json").read_text())


def test_h1_examples():
    assert check_h1(builtin("squares")).passed
    assert check_h1(builtin("cubic")).passed
    sys = LienardSystem(2, ("1", "1"), ("x1*(x1 - 1)", "x2"), BOX, BOX)
    v = check_h1(sys)
    assert not v.passed
    axis, x = v.witness
    assert axis == 1 and 0 < x < 1


def test_h1_needs_enough_samples():
    with pytest.raises(ValueError):
        check_h1(builtin("squares"), grid_density=50)


def test_h2_examples():
    assert check_h2(builtin("squares")).passed
    assert check_h2(builtin("ellipses")).passed
    sys = LienardSystem(2, ("x1", "1"), ("x1", "x2"), BOX, BOX)
    v = check_h2(sys)
    assert not v.passed and v.witness[0] < 0


def test_constraint_set_is_square():
    cs = ConstraintSet.from_indices(3, [2])
    assert cs.indices == (2,)
    assert cs.equations() == ["f1 = 0", "x2 = 0", "f3 = 0"]


@pytest.mark.parametrize(
    "name, subset, expected",
    [
        ("squares", (), [(0, 0), (0, -1), (1, 1), (-1, 0), (-1, -1)]),
        ("squares", (2,), [(0, 0), (-1, 0)]),
        ("squares", (1,), [(0, 0), (0, -1)]),
        ("ellipses", (), [(R3, R3), (R3, -R3), (-R3, R3), (-R3, -R3)]),
        ("ellipses", (2,), [(1, 0), (-1, 0)]),
        ("ellipses", (1,), [(0, 1), (0, -1)]),
        ("intro", (), [(0, 0), (-1, -1)]),
    ],
)
def test_root_sets(name, subset, expected):
    rf = solve_constraint_set(builtin(name), subset)
    assert rf.status == "complete"
    assert hausdorff(rf.roots, expected) < 1e-6
    assert all(v == ISOLATED for v in rf.verdicts)
    assert np.all(rf.residuals < 1e-9)


@pytest.mark.parametrize("name", ["intro", "squares", "ellipses", "cubic", "oscillator"])
def test_full_subset_gives_origin(name):
    rf = solve_constraint_set(builtin(name), (1, 2))
    np.testing.assert_array_equal(rf.roots, [[0.0, 0.0]])
    assert rf.verdict == PASS


def test_reference_file_matches_solver():
    ref = reference()
    for name in ("squares", "ellipses"):
        for key, pts in ref[name].items():
            rf = solve_constraint_set(builtin(name), tuple(json.loads(key)))
            assert hausdorff(rf.roots, pts) < 1e-6


def test_roots_pairwise_separated():
    rf = solve_constraint_set(builtin("ellipses"), ())
    d = np.linalg.norm(rf.roots[:, None] - rf.roots[None], axis=-1)
    assert d[np.triu_indices(len(rf.roots), 1)].min() > Tolerances().cluster_radius


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_subdivision_order_insensitive(seed):
    base = solve_constraint_set(builtin("squares"), (), probe=False)
    shuffled = solve_constraint_set(builtin("squares"), (), order_seed=seed, probe=False)
    assert len(base.roots) == len(shuffled.roots)
    assert hausdorff(base.roots, shuffled.roots) < 1e-9


def test_isolation_probe_examples():
    res = isolation_probe(builtin("ellipses"), (), np.array([R3, R3]), (1e-2, 1e-3, 1e-4))
    assert res.verdict == ISOLATED
    res = isolation_probe(builtin("squares"), (), np.zeros(2), (1e-2, 1e-3, 1e-4))
    assert res.verdict == ISOLATED
    res = isolation_probe(circle(), (), np.array([1.0, 0.0]), (1e-2, 1e-3, 1e-4))
    assert res.verdict == CONTINUUM
    assert res.witness is not None


def test_higher_order_vanishing_still_isolated():
    # with x1 pinned, f2 = x2^4 near 0: the root has quartic rather than quadratic clearance
    rf = solve_constraint_set(builtin("intro"), (1,))
    assert rf.verdicts == [ISOLATED]


def test_budget_exhaustion_is_inconclusive():
    rf = solve_constraint_set(builtin("squares"), (), tolerances=Tolerances(max_cells=20))
    assert rf.status == "budget_exhausted"
    assert rf.verdict == INCONCLUSIVE


def test_budget_exhaustion_still_exposes_continuum():
    rf = solve_constraint_set(circle(), (), tolerances=Tolerances(max_cells=200))
    assert rf.verdict == FAIL


@pytest.mark.parametrize("name", ["intro", "squares", "ellipses", "cubic"])
def test_check_all_passes(name):
    rep = check_all(builtin(name))
    assert rep.verdict == PASS
    assert len(rep.h3) == 4
    assert rep.h4.subset == []
    assert rep.radial["monotone"]


def test_check_all_circle_fails_with_witness():
    rep = check_all(circle())
    assert rep.verdict == FAIL
    fails = rep.failures()
    assert fails and fails[0]["hypothesis"] == "h4"
    assert fails[0]["evidence"] == CONTINUUM
    w = np.array(fails[0]["witness"])
    assert abs(w @ w - 1) < 1e-6


def test_check_all_oscillator_fails():
    rep = check_all(builtin("oscillator"))
    assert rep.verdict == FAIL


def test_check_all_rejects_large_n():
    n = 13
    box = [(-1.0, 1.0)] * n
    sys = LienardSystem(n, tuple("1" for _ in range(n)), tuple(f"x{i}" for i in range(1, n + 1)), box, box)
    with pytest.raises(ValueError):
        check_all(sys)


def test_three_dimensional_system():
    box = [(-2.0, 2.0)] * 3
    f = ("x1^2 + x2^2", "x2^2 + x3^2", "x3^2 + x1^2")
    sys = LienardSystem(3, f, ("x1", "x2", "x3"), box, box, "three")
    rep = check_all(sys, grid_density=101)
    assert rep.verdict == PASS
    assert len(rep.h3) == 8
    np.testing.assert_allclose(rep.h4.roots, [[0, 0, 0]], atol=1e-6)
