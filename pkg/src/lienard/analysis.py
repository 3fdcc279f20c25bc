"""Numerical side of the LaSalle argument.

Points are seeded on the strata of the vanishing set
``W_O = {sum_i y_i^2 f_i(X) = 0}`` and integrated until ``Vdot`` turns strictly
negative, which is the observable consequence of leaving ``W_O``. Attraction
is verified by integrating an ensemble drawn from a Lyapunov sublevel set.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import expr as ex
from .hypotheses import PASS, check_all, solve_constraint_set
from .integrate import Trajectory, integrate_many, sample_dense
from .lyapunov import LyapunovData, sublevel_component
from .model import LienardSystem, ModelError

CASE_A, CASE_B, CASE_C = "case_a", "case_b", "case_c"
STRATA = (CASE_A, CASE_B, CASE_C)

VDOT_SEED_TOL = 1e-10
PROJECTION_TOL = 1e-12


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class WOPoint:
    """A state on ``W_O`` tagged with its stratum.

    ``subset`` holds the 1-based axes with ``y_i = 0`` for ``case_b``; it is
    all axes for ``case_a`` and empty for ``case_c``.
    """

    z: np.ndarray
    stratum: str
    subset: tuple[int, ...]
    vdot: float

    def to_dict(self) -> dict:
        return {"z": self.z.tolist(), "stratum": self.stratum, "subset": list(self.subset), "vdot": self.vdot}


@dataclass
class SeedReport:
    stratum: str
    requested: int
    points: list[WOPoint]
    empty_subsets: list[list[int]] = field(default_factory=list)
    note: str = ""


def _default_box(sys: LienardSystem, half_width: float = 2.0) -> np.ndarray:
    sb = np.array(sys.search_box, dtype=float)
    inner = np.column_stack([np.maximum(sb[:, 0] * 0.8, -half_width), np.minimum(sb[:, 1] * 0.8, half_width)])
    return inner


class _FZeroSet:
    """Residual and exact Jacobian of ``{f_j = 0 : j in free}`` on the position space."""

    def __init__(self, sys: LienardSystem, free: Sequence[int]):
        self.sys = sys
        self.free = list(free)  # 0-based
        n = sys.n
        self._grad = []
        for j in self.free:
            row = []
            for k in range(n):
                try:
                    d = ex.differentiate(sys.f[j], f"x{k + 1}")
                    row.append(ex.compile_vectorized(d, n))
                except ex.NonPolynomialError:
                    row.append(None)
            self._grad.append(row)

    def residual(self, X: np.ndarray) -> np.ndarray:
        return self.sys.f_values(X)[..., self.free]

    def jacobian(self, X: np.ndarray) -> np.ndarray:
        n = self.sys.n
        J = np.empty(X.shape[:-1] + (len(self.free), n))
        Y = np.zeros_like(X)
        for a, row in enumerate(self._grad):
            for k, fn in enumerate(row):
                if fn is not None:
                    J[..., a, k] = fn(X, Y, 0.0, 0.0)
                else:
                    h = 1e-6 * np.maximum(1.0, np.abs(X[..., k]))
                    E = np.zeros_like(X)
                    E[..., k] = h
                    j = self.free[a]
                    J[..., a, k] = (self.sys.f_values(X + E)[..., j] - self.sys.f_values(X - E)[..., j]) / (2 * h)
        return J


def _project(zs: _FZeroSet, X: np.ndarray, iters: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-norm Gauss-Newton projection onto the common zero set."""
    X = np.array(X, dtype=float)
    for _ in range(iters):
        F = zs.residual(X)
        if np.all(np.abs(F) <= 1e-15):
            break
        J = zs.jacobian(X)
        step = -np.einsum("mij,mj->mi", np.linalg.pinv(J, rcond=1e-13), F)
        sn = np.linalg.norm(step, axis=1)
        X = X + step / np.maximum(sn / 0.5, 1.0)[:, None]
    return X, np.abs(zs.residual(X)).max(axis=1)


def _inside(X: np.ndarray, box: np.ndarray) -> np.ndarray:
    return np.all((X >= box[:, 0]) & (X <= box[:, 1]), axis=1)


def seed_WO_points(
    sys: LienardSystem,
    count: int,
    stratum: str,
    *,
    subset: Sequence[int] | None = None,
    seed: int = 0,
    box=None,
) -> SeedReport:
    """Draw ``count`` states on one stratum of ``W_O``, origin excluded.

    ``case_a``: ``y = 0`` and ``X`` uniform in ``box``.
    ``case_b``: for ``S = subset`` (1-based; default cycles through every
    non-empty proper subset) ``y_i = 0`` on ``S`` and ``X`` lies on
    ``{f_j = 0, j not in S}``; positions are projected there from uniform
    draws and from draws near the roots recovered by the hypothesis check,
    free velocities are uniform in ``[-1, 1]``.
    ``case_c``: ``X`` is a root of every ``f_i`` and ``|y|`` is uniform in
    ``[0.1, 1]`` with a uniform direction.

    Every returned point satisfies ``|Vdot| < 1e-10``.
    """
    if stratum not in STRATA:
        raise ValueError(f"unknown stratum {stratum!r}; expected one of {STRATA}")
    n = sys.n
    rng = np.random.default_rng(seed)
    box = _default_box(sys) if box is None else np.array(box, dtype=float)
    ld = LyapunovData.for_system(sys)
    report = SeedReport(stratum=stratum, requested=count, points=[])

    if stratum == CASE_A:
        X = rng.uniform(box[:, 0], box[:, 1], size=(count, n))
        X = X[np.linalg.norm(X, axis=1) > 1e-6]
        for x in X:
            z = np.concatenate([x, np.zeros(n)])
            report.points.append(WOPoint(z, CASE_A, tuple(range(1, n + 1)), float(ld.Vdot(z))))
        return report

    if stratum == CASE_C:
        rf = solve_constraint_set(sys, (), probe=False)
        roots = rf.roots[_inside(rf.roots, box)] if len(rf.roots) else rf.roots
        if len(roots) == 0:
            report.note = "no common zero of f inside the box"
            return report
        for k in range(count):
            x = roots[k % len(roots)]
            u = rng.normal(size=n)
            y = u / np.linalg.norm(u) * rng.uniform(0.1, 1.0)
            z = np.concatenate([x, y])
            v = float(ld.Vdot(z))
            if abs(v) < VDOT_SEED_TOL:
                report.points.append(WOPoint(z, CASE_C, (), v))
        return report

    if subset is not None:
        subsets = [tuple(sorted(int(i) for i in subset))]
        if not subsets[0] or len(subsets[0]) == n or any(not 1 <= i <= n for i in subsets[0]):
            raise ValueError("case_b needs a non-empty proper subset of 1..n")
    else:
        subsets = [c for r in range(1, n) for c in itertools.combinations(range(1, n + 1), r)]
    if not subsets:
        report.note = "case_b needs n >= 2"
        return report

    per = [count // len(subsets) + (1 if k < count % len(subsets) else 0) for k in range(len(subsets))]
    for S, want in zip(subsets, per):
        if want == 0:
            continue
        free = [j for j in range(n) if j + 1 not in S]
        zs = _FZeroSet(sys, free)
        rf = solve_constraint_set(sys, S, probe=False)
        anchors = rf.roots[_inside(rf.roots, box)] if len(rf.roots) else np.zeros((0, n))
        got: list[WOPoint] = []
        for _attempt in range(8):
            m = 4 * want
            starts = rng.uniform(box[:, 0], box[:, 1], size=(m, n))
            if len(anchors):
                near = anchors[rng.integers(len(anchors), size=m // 2)] + rng.normal(scale=0.1, size=(m // 2, n))
                starts[: m // 2] = near
            X, res = _project(zs, starts)
            ok = (res <= PROJECTION_TOL) & _inside(X, box) & np.all(np.isfinite(X), axis=1)
            for x in X[ok]:
                y = rng.uniform(-1.0, 1.0, size=n)
                y[[i - 1 for i in S]] = 0.0
                z = np.concatenate([x, y])
                v = float(ld.Vdot(z))
                if np.linalg.norm(z) > 1e-6 and abs(v) < VDOT_SEED_TOL:
                    got.append(WOPoint(z, CASE_B, S, v))
                if len(got) == want:
                    break
            if len(got) == want:
                break
        if not got:
            report.empty_subsets.append(list(S))
        report.points.extend(got)
    if report.empty_subsets:
        report.note = "no zeros of the free damping terms found inside the box for some subsets"
    return report


# ---------------------------------------------------------------- probes


@dataclass
class ProbeResult:
    point: WOPoint
    left: bool
    leave_time: float | None
    vdot_at_leave: float | None
    horizon: float
    threshold: float
    trajectory: Trajectory | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "z0": self.point.z.tolist(),
            "stratum": self.point.stratum,
            "subset": list(self.point.subset),
            "vdot0": self.point.vdot,
            "left": self.left,
            "leave_time": self.leave_time,
            "vdot_at_leave": self.vdot_at_leave,
        }


def _leave_time(ld: LyapunovData, traj: Trajectory, threshold: float) -> tuple[float, float] | None:
    below = np.flatnonzero(traj.Vdot < -threshold)
    if below.size == 0:
        return None
    k = int(below[0])
    if k == 0:
        return float(traj.t[0]), float(traj.Vdot[0])
    lo, hi = float(traj.t[k - 1]), float(traj.t[k])
    # bisection on the dense output for the first crossing inside the step
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ld.Vdot(sample_dense(traj, mid)) < -threshold:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return hi, float(ld.Vdot(sample_dense(traj, hi)))


def probe_many(
    sys: LienardSystem,
    points: Sequence[WOPoint],
    horizon: float = 1.0,
    threshold: float = 1e-10,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
) -> list[ProbeResult]:
    """Batched :func:`non_invariance_probe`."""
    if not points:
        return []
    Z0 = np.array([p.z for p in points])
    if np.any(np.all(Z0 == 0.0, axis=1)):
        raise ValueError("the origin is an equilibrium and cannot leave W_O")
    ld = LyapunovData.for_system(sys)
    trajs = integrate_many(sys, Z0, (0.0, horizon), rel_tol, abs_tol, convergence_radius=None, dense=True)
    out = []
    for p, tr in zip(points, trajs):
        hit = _leave_time(ld, tr, threshold)
        if hit is None:
            out.append(ProbeResult(p, False, None, None, horizon, threshold, tr))
        else:
            out.append(ProbeResult(p, True, hit[0], hit[1], horizon, threshold, None))
    return out


def non_invariance_probe(
    sys: LienardSystem,
    p: WOPoint,
    horizon: float = 1.0,
    threshold: float = 1e-10,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
) -> ProbeResult:
    """First time ``t <= horizon`` at which ``Vdot(z(t)) < -threshold``.

    A probe that never crosses comes back with ``left=False`` and the
    trajectory attached.
    """
    return probe_many(sys, [p], horizon, threshold, rel_tol, abs_tol)[0]


# ---------------------------------------------------------------- attraction


@dataclass
class AttractionReport:
    system: str
    c_level: float
    sample_count: int
    converged_count: int
    convergence_radius: float
    t_max: float
    initial_states: np.ndarray
    terminal_norms: np.ndarray
    terminal_times: np.ndarray
    terminal_V: np.ndarray
    reasons: list[str]
    max_V_increase: np.ndarray  # per sample, max over k of V(t_{k+1}) - V(t_k)
    seed: int
    overridden: bool = False

    @property
    def converged_fraction(self) -> float:
        return self.converged_count / self.sample_count if self.sample_count else 0.0

    @property
    def slowest(self) -> int:
        """Latest arrival if every sample converged, else the farthest straggler."""
        conv = self.converged
        if conv.all():
            return int(np.argmax(self.terminal_times))
        return int(np.argmax(np.where(conv, -np.inf, self.terminal_norms)))

    @property
    def converged(self) -> np.ndarray:
        return np.array([r == "converged_to_origin" for r in self.reasons])

    def to_dict(self) -> dict:
        s = self.slowest if self.sample_count else None
        return {
            "system": self.system,
            "c_level": self.c_level,
            "sample_count": self.sample_count,
            "converged_count": self.converged_count,
            "converged_fraction": self.converged_fraction,
            "convergence_radius": self.convergence_radius,
            "t_max": self.t_max,
            "seed": self.seed,
            "overridden": self.overridden,
            "slowest": None if s is None else {
                "index": s,
                "z0": self.initial_states[s].tolist(),
                "terminal_norm": float(self.terminal_norms[s]),
                "terminal_time": float(self.terminal_times[s]),
            },
            "terminal_norms": self.terminal_norms.tolist(),
            "terminal_times": self.terminal_times.tolist(),
            "max_V_increase": self.max_V_increase.tolist(),
        }


def sample_sublevel(
    sys: LienardSystem,
    c_level: float,
    count: int,
    seed: int = 0,
    box=None,
    points_per_axis: int | None = None,
) -> np.ndarray:
    """Uniform draws from the component of ``{V < c}`` containing O.

    The component is found by flood fill on a grid; a draw is kept when
    ``V < c`` there and its nearest grid node lies in the (one-node dilated)
    component.
    """
    n = sys.n
    ld = LyapunovData.for_system(sys)
    if box is None:
        inner = [(0.8 * lo, 0.8 * hi) for lo, hi in sys.search_box]
        box = inner + inner
    box = np.array(box, dtype=float)
    k = points_per_axis or (41 if n == 1 else 21 if n == 2 else 9)
    axes, mask = sublevel_component(ld, c_level, box, k)
    if not mask.any():
        raise ModelError("the sublevel component is empty on the grid")
    if mask[tuple([0] * 2 * n)] or any(np.any(np.take(mask, [0, -1], axis=a)) for a in range(2 * n)):
        raise ModelError("the sublevel component reaches the grid boundary; enlarge the box")
    # tighten the sampling box to the component and refine the grid there
    idx = np.argwhere(mask)
    lo_i, hi_i = idx.min(axis=0) - 1, idx.max(axis=0) + 1
    tight = np.array([[a[l], a[h]] for a, l, h in zip(axes, lo_i, hi_i)])
    axes, mask = sublevel_component(ld, c_level, tight, k)
    mask = ndimage.binary_dilation(mask)
    spacing = np.array([a[1] - a[0] for a in axes])
    rng = np.random.default_rng(seed)
    out = np.empty((0, 2 * n))
    for _ in range(1000):
        Z = rng.uniform(tight[:, 0], tight[:, 1], size=(max(4 * count, 64), 2 * n))
        nearest = np.rint((Z - tight[:, 0]) / spacing).astype(int)
        nearest = np.clip(nearest, 0, k - 1)
        keep = (ld.V(Z) < c_level) & mask[tuple(nearest.T)]
        out = np.vstack([out, Z[keep]])
        if len(out) >= count:
            return out[:count]
    raise ModelError("rejection sampling of the sublevel set did not fill the request")


def verify_attraction(
    sys: LienardSystem,
    c_level: float,
    sample_count: int = 100,
    t_max: float = 500.0,
    seed: int = 0,
    *,
    convergence_radius: float = 1e-3,
    override: bool = False,
    box=None,
    points_per_axis: int | None = None,
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-10,
) -> AttractionReport:
    """Integrate a seeded ensemble from ``{V < c_level}`` and count arrivals at O.

    A sample counts as converged once ``|z| < convergence_radius`` holds for
    ten consecutive accepted steps before ``t_max``. The hypothesis check must
    pass unless ``override`` is set, in which case a warning is issued.
    """
    if not override:
        rep = check_all(sys)
        if rep.verdict != PASS:
            raise PreconditionError(f"hypothesis check returned {rep.verdict}; pass override=True to proceed")
    else:
        warnings.warn("verify_attraction running without a passing hypothesis check", stacklevel=2)
    Z0 = sample_sublevel(sys, c_level, sample_count, seed, box, points_per_axis)
    trajs = integrate_many(
        sys, Z0, (0.0, t_max), rel_tol, abs_tol, convergence_radius=convergence_radius, dense=False
    )
    reasons = [tr.reason for tr in trajs]
    dV = np.array([float(np.max(np.diff(tr.V), initial=-np.inf)) for tr in trajs])
    return AttractionReport(
        system=sys.name,
        c_level=float(c_level),
        sample_count=len(trajs),
        converged_count=sum(r == "converged_to_origin" for r in reasons),
        convergence_radius=convergence_radius,
        t_max=float(t_max),
        initial_states=Z0,
        terminal_norms=np.array([np.linalg.norm(tr.final) for tr in trajs]),
        terminal_times=np.array([tr.t[-1] for tr in trajs]),
        terminal_V=np.array([tr.V[-1] for tr in trajs]),
        reasons=reasons,
        max_V_increase=dV,
        seed=seed,
        overridden=override,
    )

