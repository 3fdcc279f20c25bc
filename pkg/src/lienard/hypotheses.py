"""Numerical checks of the four stability hypotheses for a Liénard system.

1. ``x_i g_i(x_i) > 0`` away from 0 on each restoring interval.
2. ``f_i >= 0`` on the damping box.
3. For every subset ``S`` of axes, ``{x_i = 0, i in S} ∩ {f_j = 0, j not in S}``
   consists of isolated points.
4. ``∩_i {f_i = 0}`` consists of isolated points (the ``S = {}`` case of 3).

Root sets are located by Lipschitz-pruned box subdivision followed by batched
Gauss-Newton polishing; isolation is a semi-decision made by probing small
spheres around each root.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize_scalar

from . import expr as ex
from .lyapunov import LyapunovData, radial_growth
from .model import LienardSystem

ISOLATED = "isolated"
CONTINUUM = "suspected_continuum"
INCONCLUSIVE = "inconclusive"

PASS, FAIL = "PASS", "FAIL"
MAX_DIMENSION = 12


@dataclass(frozen=True)
class Tolerances:
    root_tol: float = 1e-9
    cluster_radius: float = 1e-5
    min_width_fraction: float = 2.0**-10  # leaf size relative to the widest box edge
    depth_cap: int = 40
    max_cells: int = 50_000
    newton_iters: int = 300
    radii: tuple[float, ...] = (1e-2, 1e-3, 1e-4)
    probe_samples: int = 16
    theta: float = 1e-3
    max_probes: int = 32


# ---------------------------------------------------------------- subsets


@dataclass(frozen=True)
class ConstraintSet:
    """Subset ``S`` of ``{1..n}`` as a bitmask (bit ``i-1`` set means ``i in S``).

    The induced square system has equation ``x_i = 0`` in slot ``i`` for
    ``i in S`` and ``f_i(X) = 0`` otherwise.
    """

    n: int
    mask: int

    def __post_init__(self):
        if not 0 <= self.mask < (1 << self.n):
            raise ValueError(f"mask {self.mask} out of range for n={self.n}")

    @classmethod
    def from_indices(cls, n: int, indices: Iterable[int]) -> "ConstraintSet":
        mask = 0
        for i in indices:
            if not 1 <= i <= n:
                raise ValueError(f"axis index {i} outside 1..{n}")
            mask |= 1 << (i - 1)
        return cls(n, mask)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(i + 1 for i in range(self.n) if self.mask >> i & 1)

    @property
    def label(self) -> str:
        return "{" + ",".join(map(str, self.indices)) + "}"

    def pinned(self) -> np.ndarray:
        return np.array([bool(self.mask >> i & 1) for i in range(self.n)])

    def equations(self) -> list[str]:
        return [f"x{i + 1} = 0" if self.mask >> i & 1 else f"f{i + 1} = 0" for i in range(self.n)]


def _as_constraint_set(sys: LienardSystem, S) -> ConstraintSet:
    if isinstance(S, ConstraintSet):
        return S
    if isinstance(S, (int, np.integer)):
        return ConstraintSet(sys.n, int(S))
    return ConstraintSet.from_indices(sys.n, S)


class ConstraintSystem:
    """Residual and Jacobian of the square system induced by a subset."""

    def __init__(self, sys: LienardSystem, cs: ConstraintSet):
        self.sys, self.cs, self.n = sys, cs, sys.n
        self.pin = cs.pinned()
        self._f = [ex.compile_vectorized(e, sys.n) for e in sys.f]
        self._grad = []
        for i, fi in enumerate(sys.f):
            if self.pin[i]:
                self._grad.append(None)
            elif ex.is_polynomial(fi):
                self._grad.append([ex.compile_vectorized(ex.differentiate(fi, f"x{k + 1}"), sys.n) for k in range(sys.n)])
            else:
                self._grad.append("fd")

    def residual(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape)
        for i in range(self.n):
            out[..., i] = X[..., i] if self.pin[i] else self._f[i](X, X, 0.0, 0.0)
        return out

    def jacobian(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        J = np.zeros(X.shape + (self.n,))
        for i in range(self.n):
            g = self._grad[i]
            if g is None:
                J[..., i, i] = 1.0
            elif g == "fd":
                h = 1e-7 * np.maximum(1.0, np.abs(X))
                for k in range(self.n):
                    dX = np.zeros_like(X)
                    dX[..., k] = h[..., k]
                    J[..., i, k] = (self._f[i](X + dX, X, 0.0, 0.0) - self._f[i](X - dX, X, 0.0, 0.0)) / (2 * h[..., k])
            else:
                for k in range(self.n):
                    J[..., i, k] = g[k](X, X, 0.0, 0.0)
        return J


# ------------------------------------------------------------ root finding


@dataclass
class RootFinding:
    subset: list[int]
    equations: list[str]
    roots: np.ndarray  # (k, n), lexicographically sorted
    residuals: np.ndarray
    verdicts: list[str]
    box: list[list[float]]
    status: str  # "complete" | "budget_exhausted"
    cells_examined: int
    leaves: int
    depth: int
    seconds: float
    notes: list[str] = field(default_factory=list)
    probes: list[dict] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        if CONTINUUM in self.verdicts:
            return FAIL
        if self.status != "complete" or INCONCLUSIVE in self.verdicts:
            return INCONCLUSIVE
        return PASS

    def to_dict(self) -> dict:
        return {
            "subset": self.subset,
            "equations": self.equations,
            "verdict": self.verdict,
            "status": self.status,
            "roots": [[float(v) for v in r] for r in self.roots],
            "residuals": [float(v) for v in self.residuals],
            "isolation": self.verdicts,
            "box": self.box,
            "cells_examined": self.cells_examined,
            "leaves": self.leaves,
            "depth": self.depth,
            "notes": self.notes,
        }


def _corner_signs(n: int) -> np.ndarray:
    if n <= 6:
        return np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    rng = np.random.default_rng(12345)
    return np.vstack([np.eye(n), -np.eye(n), rng.choice((-1.0, 1.0), size=(2 * n, n))])


def _subdivide(cons: ConstraintSystem, box: np.ndarray, tol: Tolerances, order_seed: int | None):
    n = cons.n
    lo, hi = box[:, 0], box[:, 1]
    centers = ((lo + hi) / 2)[None, :]
    half = (hi - lo) / 2
    min_width = tol.min_width_fraction * float(np.max(hi - lo))
    signs = _corner_signs(n)
    children = np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    rng = np.random.default_rng(order_seed) if order_seed is not None else None
    examined = 0
    depth = 0
    while True:
        if rng is not None:
            centers = centers[rng.permutation(len(centers))]
        examined += len(centers)
        F = cons.residual(centers)
        samples = centers[:, None, :] + signs[None, :, :] * half
        grads = np.concatenate([cons.jacobian(centers)[:, None], cons.jacobian(samples)], axis=1)
        L = np.linalg.norm(grads, axis=-1).max(axis=1)  # (m, n) per equation
        diam = 2 * np.linalg.norm(half)
        keep = np.all(np.abs(F) <= L * diam + 1e-300, axis=1)
        centers = centers[keep]
        if 2 * half.max() <= min_width or len(centers) == 0:
            return centers, "complete", examined, depth
        if depth >= tol.depth_cap or len(centers) * len(children) > tol.max_cells:
            return centers, "budget_exhausted", examined, depth
        half = half / 2
        centers = (centers[:, None, :] + children[None, :, :] * half).reshape(-1, n)
        depth += 1


def polish(cons: ConstraintSystem, seeds: np.ndarray, iters: int = 300) -> tuple[np.ndarray, np.ndarray]:
    """Batched Gauss-Newton with row equilibration; returns points and max-abs residuals.

    Squared factors make the Jacobian vanish at roots, where Newton degrades to
    linear convergence; the iteration count allows for that.
    """
    X = np.array(seeds, dtype=float, ndmin=2)
    active = np.ones(len(X), dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Xa = X[idx]
        F = cons.residual(Xa)
        J = cons.jacobian(Xa)
        scale = np.linalg.norm(J, axis=-1)
        scale = np.where(scale > 0, scale, 1.0)
        Js, Fs = J / scale[..., None], F / scale
        step = -np.einsum("mij,mj->mi", np.linalg.pinv(Js, rcond=1e-13), Fs)
        # keep steps local; a seed sits within one leaf cell of its root
        sn = np.linalg.norm(step, axis=1)
        step = step / np.maximum(sn, 1.0)[:, None]
        X[idx] = Xa + step
        done = (sn <= 1e-15 * (1 + np.linalg.norm(Xa, axis=1))) | np.all(F == 0, axis=1) | ~np.all(np.isfinite(step), axis=1)
        active[idx[done]] = False
    res = np.abs(cons.residual(X)).max(axis=1)
    return X, res


def merge_roots(points: np.ndarray, residuals: np.ndarray, radius: float):
    """Greedy clustering: lower residual wins, ties broken lexicographically."""
    if len(points) == 0:
        return points.reshape(0, points.shape[-1] if points.ndim == 2 else 0), residuals
    keys = [residuals] + [points[:, k] for k in reversed(range(points.shape[1]))]
    order = np.lexsort(keys)
    kept: list[int] = []
    for i in order:
        p = points[i]
        if kept and np.min(np.linalg.norm(points[kept] - p, axis=1)) <= radius:
            continue
        kept.append(i)
    P, R = points[kept], residuals[kept]
    lex = np.lexsort([P[:, k] for k in reversed(range(P.shape[1]))])
    return P[lex], R[lex]


def solve_constraint_set(
    sys: LienardSystem,
    S,
    box: Sequence[Sequence[float]] | None = None,
    tolerances: Tolerances | None = None,
    *,
    order_seed: int | None = None,
    probe: bool = True,
) -> RootFinding:
    """All solutions of the subset system inside ``box``, each with an isolation verdict.

    An exhausted subdivision budget is reported (``status='budget_exhausted'``)
    and never passes; a sample of surviving cells is still polished and probed
    so that a continuum can be exposed with a witness.
    """
    tol = tolerances or Tolerances()
    cs = _as_constraint_set(sys, S)
    cons = ConstraintSystem(sys, cs)
    box_arr = np.array(box if box is not None else sys.search_box, dtype=float)
    for i, (lo, hi) in enumerate(box_arr):
        olo, ohi = sys.omega_box[i]
        if lo < olo or hi > ohi:
            raise ValueError("search box must lie inside the damping box")
    t0 = time.perf_counter()
    leaves, status, examined, depth = _subdivide(cons, box_arr, tol, order_seed)
    notes = []
    if status != "complete":
        notes.append(f"subdivision budget exhausted at depth {depth} with {len(leaves)} live cells")
        pick = np.linspace(0, len(leaves) - 1, min(len(leaves), 64)).astype(int)
        seeds = leaves[np.lexsort([leaves[:, k] for k in reversed(range(cs.n))])][pick]
    else:
        seeds = leaves
    pts, res = polish(cons, seeds, tol.newton_iters) if len(seeds) else (np.empty((0, cs.n)), np.empty(0))
    slack = 1e-9 * np.max(box_arr[:, 1] - box_arr[:, 0])
    ok = (res < tol.root_tol) & np.all((pts >= box_arr[:, 0] - slack) & (pts <= box_arr[:, 1] + slack), axis=1)
    roots, residuals = merge_roots(pts[ok], res[ok], tol.cluster_radius)
    verdicts = [INCONCLUSIVE] * len(roots)
    probes = []
    if probe:
        probed = 0
        for k, r in enumerate(roots):
            if probed >= tol.max_probes:
                notes.append(f"{len(roots) - probed} roots not probed (probe budget {tol.max_probes})")
                break
            result = isolation_probe(sys, cs, r, tol.radii, tolerances=tol, _cons=cons)
            verdicts[k] = result.verdict
            probes.append(result.to_dict())
            probed += 1
            if result.verdict == CONTINUUM and k + 1 < len(roots):
                notes.append(f"continuum found at root {k}; remaining {len(roots) - k - 1} roots not probed")
                break
    return RootFinding(
        subset=list(cs.indices),
        equations=cs.equations(),
        roots=roots,
        residuals=residuals,
        verdicts=verdicts,
        box=box_arr.tolist(),
        status=status,
        cells_examined=examined,
        leaves=len(leaves),
        depth=depth,
        seconds=time.perf_counter() - t0,
        notes=notes,
        probes=probes,
    )


# --------------------------------------------------------------- isolation


@dataclass
class IsolationResult:
    verdict: str
    root: np.ndarray
    radii: tuple[float, ...]
    min_scaled: list[float]  # per radius: min over samples of the order-normalised residual
    min_raw: list[float]  # per radius: min over samples of max_j |E_j|
    orders: list[int]
    witness: list[float] | None  # near-root point with tiny residual (continuum evidence)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "root": self.root.tolist(),
            "radii": list(self.radii),
            "min_scaled_residual": self.min_scaled,
            "min_raw_residual": self.min_raw,
            "orders": self.orders,
            "witness": self.witness,
        }


def _sphere_directions(n: int, m: int, seed: int = 0) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        a = 2 * np.pi * (np.arange(m) + 0.5) / m
        return np.column_stack([np.cos(a), np.sin(a)])
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(m, n))
    U = np.vstack([np.eye(n), -np.eye(n), U])
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def _sphere_minimizers(objective, root: np.ndarray, r: float, U: np.ndarray, scan: int = 720) -> np.ndarray:
    """Local minimisers of ``objective`` restricted to the sphere ``|X - root| = r``."""
    n = root.size
    if n == 1:
        return root + r * U
    if n == 2:
        # circle: dense angular scan, then Brent refinement of every local minimum
        a = 2 * np.pi * np.arange(scan) / scan
        P = root + r * np.column_stack([np.cos(a), np.sin(a)])
        phi = objective(P)
        is_min = (phi <= np.roll(phi, 1)) & (phi <= np.roll(phi, -1))
        cand = np.flatnonzero(is_min)
        cand = cand[np.argsort(phi[cand], kind="stable")][: max(len(U), 4)]
        da = 2 * np.pi / scan
        out = []
        for i in cand:
            res = minimize_scalar(
                lambda th: float(objective(root + r * np.array([np.cos(th), np.sin(th)]))),
                bounds=(a[i] - da, a[i] + da), method="bounded", options={"xatol": 1e-14},
            )
            th = res.x if res.fun <= phi[i] else a[i]
            out.append(root + r * np.array([np.cos(th), np.sin(th)]))
        return np.array(out)
    out = []
    for u0 in U:
        sol = least_squares(
            lambda u: np.sqrt(objective(root + r * u / np.linalg.norm(u))) * np.ones(1),
            u0, method="trf", xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=100,
        )
        out.append(root + r * sol.x / np.linalg.norm(sol.x))
    return np.array(out)


def _vanishing_orders(cons: ConstraintSystem, root: np.ndarray, U: np.ndarray, r: float) -> np.ndarray:
    """Estimated order of vanishing of each equation at ``root`` from radial scaling."""
    big = np.abs(cons.residual(root + r * U)).max(axis=0)
    small = np.abs(cons.residual(root + 0.1 * r * U)).max(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.log10(big / small)
    d = np.where(np.isfinite(d) & (small > 0), np.rint(d), 1)
    return np.clip(d, 1, 8).astype(int)


def isolation_probe(
    sys: LienardSystem,
    S,
    root,
    radii_sequence: Sequence[float] = (1e-2, 1e-3, 1e-4),
    *,
    tolerances: Tolerances | None = None,
    _cons: ConstraintSystem | None = None,
) -> IsolationResult:
    """Decide whether ``root`` is isolated by minimising the residual on small spheres.

    From each of ``m`` points on the sphere of radius ``r`` the residual is
    minimised over the sphere. Residuals are normalised per equation by their
    order of vanishing at the root (``|E_j|^(1/d_j)``), so squared factors do
    not masquerade as tangency. Verdict:

    * ``isolated`` if every normalised minimum exceeds ``theta * r**2``;
    * ``suspected_continuum`` if at every radius some raw minimum is below
      ``root_tol``;
    * ``inconclusive`` otherwise.
    """
    tol = tolerances or Tolerances()
    cs = _as_constraint_set(sys, S)
    cons = _cons or ConstraintSystem(sys, cs)
    root = np.asarray(root, dtype=float)
    n = cs.n
    U = _sphere_directions(n, tol.probe_samples)
    orders = _vanishing_orders(cons, root, U, radii_sequence[0])
    inv = 1.0 / orders

    def scaled(E):
        return np.sign(E) * np.abs(E) ** inv

    def objective(P):
        return (np.abs(cons.residual(P)) ** (2 * inv)).sum(axis=-1)

    min_scaled, min_raw = [], []
    witness = None
    for r in radii_sequence:
        pts = _sphere_minimizers(objective, root, r, U)
        E = cons.residual(pts)
        s = np.abs(scaled(E)).max(axis=1)
        raw = np.abs(E).max(axis=1)
        j = int(np.argmin(raw))
        min_scaled.append(float(s.min()))
        min_raw.append(float(raw[j]))
        if raw[j] < tol.root_tol and witness is None:
            witness = pts[j].tolist()
    if all(s > tol.theta * r * r for s, r in zip(min_scaled, radii_sequence)):
        verdict = ISOLATED
    elif all(raw < tol.root_tol for raw in min_raw):
        verdict = CONTINUUM
    else:
        verdict = INCONCLUSIVE
    return IsolationResult(verdict, root, tuple(radii_sequence), min_scaled, min_raw, orders.tolist(), witness)


# ---------------------------------------------------------------- h1, h2


@dataclass
class Verdict:
    passed: bool
    witness: list[float] | None
    detail: str

    def to_dict(self) -> dict:
        return {"verdict": PASS if self.passed else FAIL, "witness": self.witness, "detail": self.detail}


def check_h1(sys: LienardSystem, grid_density: int = 201) -> Verdict:
    """``x g_i(x) > 0`` at ``grid_density`` samples on each side of 0 in ``(a_i, b_i)``.

    Samples are scanned outward from the origin (positive side first), so the
    witness is the violating sample nearest to the equilibrium.
    """
    if grid_density < 100:
        raise ValueError("grid_density must be at least 100 samples per axis")
    for i, gi in enumerate(sys.g):
        a, b = sys.xdomain[i]
        k = np.arange(1, grid_density + 1) / (grid_density + 1)
        pos, negs = b * k, a * k
        order = np.empty(2 * grid_density)
        order[0::2], order[1::2] = pos, negs
        fn = ex.compile_univariate(gi, f"x{i + 1}")
        with np.errstate(all="ignore"):
            prod = order * fn(order)
        bad = np.flatnonzero(~(prod > 0))
        if bad.size:
            w = float(order[bad[0]])
            return Verdict(False, [i + 1, w], f"x{i + 1}*g{i + 1}(x{i + 1}) = {prod[bad[0]]:.6g} at x{i + 1} = {w:.6g}")
    return Verdict(True, None, f"{grid_density} samples per side on every axis")


def check_h2(sys: LienardSystem, grid_density: int = 201, max_points: int = 4_000_000) -> Verdict:
    """``f_i >= -1e-12`` on a full grid over the damping box."""
    n = sys.n
    k = grid_density
    while k**n > max_points and k > 3:
        k = int(k * 0.9)
    axes = [np.linspace(lo, hi, k) for lo, hi in sys.omega_box]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    F = sys.f_values(X)
    worst = np.unravel_index(np.argmin(F), F.shape)
    fmin = float(F[worst])
    if not fmin >= -1e-12:
        return Verdict(False, X[worst[0]].tolist(), f"f{worst[1] + 1} = {fmin:.6g} at {X[worst[0]].tolist()}")
    return Verdict(True, None, f"min f = {fmin:.3g} on a {k}^{n} grid")


# ---------------------------------------------------------------- report


@dataclass
class HypothesisReport:
    system: str
    h1: Verdict
    h2: Verdict
    h3: list[RootFinding]
    box: list[list[float]]
    grid_density: int
    seconds: float
    radial: dict = field(default_factory=dict)

    @property
    def h4(self) -> RootFinding:
        return next(r for r in self.h3 if not r.subset)

    @property
    def verdict(self) -> str:
        parts = [PASS if self.h1.passed else FAIL, PASS if self.h2.passed else FAIL] + [r.verdict for r in self.h3]
        if FAIL in parts:
            return FAIL
        if INCONCLUSIVE in parts:
            return INCONCLUSIVE
        return PASS

    def failures(self) -> list[dict]:
        out = []
        if not self.h1.passed:
            out.append({"hypothesis": "h1", "witness": self.h1.witness})
        if not self.h2.passed:
            out.append({"hypothesis": "h2", "witness": self.h2.witness})
        for r in self.h3:
            if r.verdict == FAIL:
                k = r.verdicts.index(CONTINUUM)
                probe = next(p for p in r.probes if p["root"] == r.roots[k].tolist())
                out.append(
                    {
                        "hypothesis": "h4" if not r.subset else "h3",
                        "subset": r.subset,
                        "witness": r.roots[k].tolist(),
                        "evidence": CONTINUUM,
                        "nearby_zero": probe["witness"],
                    }
                )
        return out

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "verdict": self.verdict,
            "h1": self.h1.to_dict(),
            "h2": self.h2.to_dict(),
            "h3": [r.to_dict() for r in self.h3],
            "h4": self.h4.to_dict(),
            "failures": self.failures(),
            "box": self.box,
            "grid_density": self.grid_density,
            "radial_growth": self.radial,
        }


def check_all(
    sys: LienardSystem,
    grid_density: int = 201,
    tolerances: Tolerances | None = None,
) -> HypothesisReport:
    """Run h1, h2 and the constraint-set search for all ``2^n`` subsets."""
    if sys.n > MAX_DIMENSION:
        raise ValueError(f"n = {sys.n} exceeds the subset enumeration budget (n <= {MAX_DIMENSION})")
    t0 = time.perf_counter()
    h1 = check_h1(sys, grid_density)
    h2 = check_h2(sys, grid_density)
    subsets = [solve_constraint_set(sys, ConstraintSet(sys.n, mask), tolerances=tolerances) for mask in range(1 << sys.n)]
    return HypothesisReport(
        system=sys.name,
        h1=h1,
        h2=h2,
        h3=subsets,
        box=[list(b) for b in sys.search_box],
        grid_density=grid_density,
        seconds=time.perf_counter() - t0,
        radial=radial_growth(LyapunovData.for_system(sys)),
    )
