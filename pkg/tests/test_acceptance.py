"""End-to-end acceptance suite.

Each test checks one criterion at its stated tolerance and records a
PASS/FAIL line, listed again in the terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest

from lienard import expr as ex
from lienard.analysis import CASE_A, CASE_B, CASE_C, probe_many, seed_WO_points, verify_attraction
from lienard.cli import main
from lienard.hypotheses import CONTINUUM, ISOLATED, solve_constraint_set
from lienard.integrate import integrate
from lienard.lyapunov import LyapunovData
from lienard.model import LienardSystem, Perturbation, builtin, linearization_eigenvalues
from lienard.periodic import continuation

R3 = 3 ** -0.5
BOX = [(-5.0, 5.0), (-5.0, 5.0)]


def hausdorff(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.size == 0 or b.size == 0:
        return math.inf
    d = np.linalg.norm(a[:, None] - b[None], axis=-1)
    return max(d.min(axis=1).max(), d.min(axis=0).max())


def root_sets_match(name, cases, time_limit):
    ok, parts = True, []
    for subset, expected in cases:
        t0 = time.perf_counter()
        rf = solve_constraint_set(builtin(name), subset)
        dt = time.perf_counter() - t0
        h = hausdorff(rf.roots, expected)
        good = h < 1e-6 and rf.status == "complete" and all(v == ISOLATED for v in rf.verdicts)
        if time_limit is not None:
            good = good and dt < time_limit
        ok &= good
        parts.append(f"S={list(subset)} d_H={h:.1e} {dt:.2f}s")
    return ok, "; ".join(parts)


def test_criterion_01_squares_root_sets(acceptance):
    cases = [
        ((), [(0, 0), (0, -1), (1, 1), (-1, 0), (-1, -1)]),
        ((2,), [(0, 0), (-1, 0)]),
        ((1,), [(0, 0), (0, -1)]),
    ]
    ok, detail = root_sets_match("squares", cases, 10.0)
    assert acceptance(1, ok, detail)


def test_criterion_02_ellipses_root_sets(acceptance):
    cases = [
        ((), [(R3, R3), (R3, -R3), (-R3, R3), (-R3, -R3)]),
        ((2,), [(1, 0), (-1, 0)]),
        ((1,), [(0, 1), (0, -1)]),
    ]
    ok, detail = root_sets_match("ellipses", cases, None)
    assert acceptance(2, ok, detail)


def test_criterion_03_full_check(tmp_path, acceptance):
    codes = {name: main(["check", "--system", name, "--out", str(tmp_path / name)]) for name in ("intro", "squares", "ellipses")}
    circle = tmp_path / "circle.toml"
    circle.write_text(
        '[system]\nname = "circle"\nn = 2\n'
        'f = ["(x1^2 + x2^2 - 1)^2", "(x1^2 + x2^2 - 1)^2"]\ng = ["x1", "x2"]\n'
        "omega_box = [[-5.0, 5.0], [-5.0, 5.0]]\nxdomain = [[-5.0, 5.0], [-5.0, 5.0]]\n"
    )
    codes["circle"] = main(["check", "--config", str(circle), "--out", str(tmp_path / "circle")])
    rep = json.loads((tmp_path / "circle" / "check.json").read_text())["report"]
    evidence = [f.get("evidence") for f in rep["failures"]]
    ok = codes == {"intro": 0, "squares": 0, "ellipses": 0, "circle": 1} and CONTINUUM in evidence
    assert acceptance(3, ok, f"exit codes {codes}; circle evidence {evidence}")


def test_criterion_04_lyapunov_monotonicity(acceptance):
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, c in (("squares", 1.0), ("ellipses", 0.25)):
        rep = verify_attraction(
            builtin(name), c, sample_count=100, t_max=500.0, seed=0,
            convergence_radius=1e-3, rel_tol=1e-10, abs_tol=1e-10,
        )
        mono = bool(np.all(rep.max_V_increase <= 1e-8))
        ok &= mono and rep.converged_count == 100
        parts.append(
            f"{name}: monotone={mono} reached |z|<1e-3: {rep.converged_count}/100 "
            f"(max terminal |z| {rep.terminal_norms.max():.3g})"
        )
    dt = time.perf_counter() - t0
    ok &= dt < 60
    assert acceptance(4, ok, "; ".join(parts) + f"; {dt:.1f}s")


def test_criterion_05_conservation(acceptance):
    tr = integrate(builtin("oscillator"), [0.8, -0.3, 0.2, 0.5], (0.0, 100.0), 1e-10, 1e-10, convergence_radius=None)
    drift = float(np.abs(tr.V - tr.V[0]).max())
    assert acceptance(5, drift < 1e-7 and tr.t[-1] == 100.0, f"max |V(t) - V(0)| = {drift:.2e}")


def test_criterion_06_vdot_consistency(acceptance):
    sys = builtin("ellipses")
    ld = LyapunovData.for_system(sys)
    Vexpr = ld.V_expression()
    grads = [ex.compile_vectorized(ex.differentiate(Vexpr, v), 2) for v in ("x1", "x2", "y1", "y2")]
    rng = np.random.default_rng(0)
    Z = rng.uniform(-2, 2, (1000, 4))
    gradV = np.column_stack([np.broadcast_to(g(Z[:, :2], Z[:, 2:], 0.0, 0.0), (1000,)) for g in grads])
    chain = np.einsum("ij,ij->i", gradV, sys.rhs(0.0, Z))
    vd = ld.Vdot(Z)
    mask = np.abs(chain) > 0
    rel = float(np.max(np.abs(vd[mask] - chain[mask]) / np.abs(chain[mask])))

    tr = integrate(sys, [0.4, -0.3, 0.2, 0.1], (0.0, 5.0), 1e-12, 1e-12)
    h = 1e-4
    ts = np.linspace(0.5, 4.5, 41)
    fd = (ld.V(tr.sample(ts + h)) - ld.V(tr.sample(ts - h))) / (2 * h)
    exact = ld.Vdot(tr.sample(ts))
    fd_rel = float(np.max(np.abs(fd - exact) / np.maximum(np.abs(exact), 1e-12)))
    ok = rel < 1e-10 and fd_rel < 1e-4
    assert acceptance(6, ok, f"chain rule rel err {rel:.1e}; central difference rel err {fd_rel:.1e}")


def test_criterion_07_non_invariance(acceptance):
    ok, parts = True, []
    for name in ("squares", "ellipses"):
        sys = builtin(name)
        for stratum in (CASE_A, CASE_B, CASE_C):
            pts = seed_WO_points(sys, 20, stratum, seed=0).points
            res = probe_many(sys, pts, horizon=1.0, threshold=1e-10)
            left = sum(r.left and r.vdot_at_leave < -1e-10 for r in res)
            origin = any(not np.any(p.z) for p in pts)
            latest = max((r.leave_time for r in res if r.left), default=math.nan)
            ok &= len(pts) >= 20 and left == len(pts) and not origin
            parts.append(f"{name}/{stratum} {left}/{len(pts)} (t<={latest:.2g})")
    assert acceptance(7, ok, "; ".join(parts))


def test_criterion_08_degenerate_linearization(tmp_path, acceptance):
    flag = linearization_eigenvalues(builtin("cubic")).flag
    code = main(["check", "--system", "cubic", "--out", str(tmp_path)])
    rep = verify_attraction(
        builtin("cubic"), 0.1, sample_count=100, t_max=2000.0, seed=0,
        convergence_radius=1e-3, rel_tol=1e-10, abs_tol=1e-10,
    )
    ok = flag == "degenerate" and code == 0 and rep.converged_count == 100
    detail = (
        f"flag {flag}; check exit {code}; converged {rep.converged_count}/100 "
        f"(max terminal |z| {rep.terminal_norms.max():.3g})"
    )
    assert acceptance(8, ok, detail)


def test_criterion_09_periodic_orbits(acceptance):
    sys = builtin("squares")
    pert = Perturbation(("eps*cos(2*t)", "0"), math.pi)
    t0 = time.perf_counter()
    res = continuation(sys, pert, [0.2, 0.1, 0.05, 0.025])
    dt = time.perf_counter() - t0
    orbits = res.orbits
    converged = res.failure is None and len(orbits) == 4 and all(o.residual < 1e-9 for o in orbits)
    amps = [o.amplitude for o in orbits]
    decreasing = all(b < a for a, b in zip(amps, amps[1:]))
    x1 = next((o.component_amplitudes[0] for o in orbits if o.eps == 0.05), math.nan)
    linear = abs(x1 - 0.05 / 3) <= 0.2 * (0.05 / 3)
    top = max((float(o.multiplier_moduli.max()) for o in orbits), default=math.nan)
    stable = all(o.stable for o in orbits)
    ok = converged and decreasing and linear and stable and dt < 120
    detail = (
        f"converged={converged} decreasing={decreasing} x1 amp at 0.05 = {x1:.5f} "
        f"max |multiplier| = {top:.12f} {dt:.1f}s"
    )
    assert acceptance(9, ok, detail)


RERUNS = {
    "check": ["check", "--system", "squares"],
    "simulate": ["simulate", "--system", "ellipses", "--t-max", "50"],
    "roa": ["roa", "--system", "ellipses", "--points-per-axis", "21"],
    "eigen": ["eigen", "--system", "cubic"],
    "probe": ["probe", "--system", "ellipses", "--stratum", "case_b", "--count", "20", "--seed", "3"],
    "periodic": ["periodic", "--system", "squares", "--eps", "0.1,0.05"],
}


def test_criterion_10_reproducibility(tmp_path, acceptance):
    differing = []
    for cmd, argv in RERUNS.items():
        a, b = tmp_path / cmd / "a", tmp_path / cmd / "b"
        main([*argv, "--out", str(a)])
        main([*argv, "--out", str(b)])
        names = sorted(p.name for p in a.iterdir())
        if names != sorted(p.name for p in b.iterdir()):
            differing.append(cmd)
            continue
        differing += [f"{cmd}/{n}" for n in names if (a / n).read_bytes() != (b / n).read_bytes()]
    ok = not differing
    assert acceptance(10, ok, f"{len(RERUNS)} subcommands rerun; differing outputs: {differing or 'none'}")
