"""Energy function ``V = sum_i G_i(x_i) + y_i^2/2`` and its orbital derivative.

``G_i`` is the antiderivative of ``g_i`` vanishing at 0: exact for polynomial
restoring terms, adaptive quadrature otherwise. Along solutions of the unforced
system ``Vdot = -sum_i y_i^2 f_i(X)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as spi
from scipy import ndimage

from . import expr as ex
from .model import Box, LienardSystem, ModelError, as_vector


class QuadratureError(RuntimeError):
    pass


def _quad_antiderivative(gi: ex.Expression, var: str) -> Callable[[np.ndarray], np.ndarray]:
    def G_scalar(x: float) -> float:
        if x == 0.0:
            return 0.0
        val, err = spi.quad(lambda s: float(ex.evaluate(gi, {var: s})), 0.0, x, epsabs=1e-12, epsrel=1e-12, limit=200)
        if not np.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
            raise QuadratureError(f"quadrature of g for {var} failed at {x} (error estimate {err})")
        return val

    vec = np.vectorize(G_scalar, otypes=[float])
    return lambda x: vec(np.asarray(x, dtype=float))


@dataclass(frozen=True, eq=False)
class LyapunovData:
    """Per-axis antiderivatives ``G_i`` of the owning system's restoring terms."""

    system: LienardSystem
    G_exprs: tuple[ex.Expression | None, ...]  # None where quadrature is used
    G_fns: tuple[Callable[[np.ndarray], np.ndarray], ...]

    @staticmethod
    def for_system(sys: LienardSystem) -> "LyapunovData":
        return _lyapunov_cached(sys)

    @property
    def exact(self) -> bool:
        return all(e is not None for e in self.G_exprs)

    def G(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape)
        for i, fn in enumerate(self.G_fns):
            out[..., i] = fn(X[..., i])
        return out

    def V(self, z) -> np.ndarray | float:
        Z = as_vector(z, self.system.n)
        n = self.system.n
        val = self.G(Z[..., :n]).sum(axis=-1) + 0.5 * (Z[..., n:] ** 2).sum(axis=-1)
        return float(val) if np.ndim(val) == 0 else val

    def Vdot(self, z) -> np.ndarray | float:
        """Closed form ``-sum y_i^2 f_i(X)``; no differencing."""
        Z = as_vector(z, self.system.n)
        n = self.system.n
        val = -(Z[..., n:] ** 2 * self.system.f_values(Z[..., :n])).sum(axis=-1)
        return float(val) if np.ndim(val) == 0 else val

    def V_expression(self) -> ex.Expression:
        """``V`` as a single expression tree (polynomial restoring terms only)."""
        if not self.exact:
            raise ex.NonPolynomialError("V has no closed form for non-polynomial restoring terms")
        total: ex.Expression = ex.ZERO
        for i, Gi in enumerate(self.G_exprs, 1):
            kinetic = ex.div(ex.power(ex.Var(f"y{i}"), 2), ex.const(2))
            total = ex.add(total, ex.add(Gi, kinetic))
        return total


@lru_cache(maxsize=64)
def _lyapunov_cached(sys: LienardSystem) -> LyapunovData:
    exprs, fns = [], []
    for i, gi in enumerate(sys.g, 1):
        var = f"x{i}"
        if ex.is_polynomial(gi):
            Gi = ex.antiderivative(gi, var)
            exprs.append(Gi)
            fns.append(ex.compile_univariate(Gi, var))
        else:
            exprs.append(None)
            fns.append(_quad_antiderivative(gi, var))
    return LyapunovData(sys, tuple(exprs), tuple(fns))


def V(ld: LyapunovData, z):
    return ld.V(z)


def Vdot(ld: LyapunovData, z):
    return ld.Vdot(z)


# ---------------------------------------------------------------- checks


@dataclass
class PositiveDefiniteResult:
    passed: bool
    min_value: float
    min_point: np.ndarray
    value_at_origin: float
    radius: float
    grid_density: int

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "min_value": self.min_value,
            "min_point": self.min_point.tolist(),
            "value_at_origin": self.value_at_origin,
            "radius": self.radius,
            "grid_density": self.grid_density,
        }


def check_positive_definite(ld: LyapunovData, radius: float = 1.0, grid_density: int = 21) -> PositiveDefiniteResult:
    """Sample ``V`` on a grid over the punctured ball of ``radius`` about O.

    Passes when ``V(O) == 0`` and every sample is strictly positive; a failure
    is a verdict carrying the worst sample, not an exception.
    """
    n = ld.system.n
    if grid_density % 2 == 0:
        grid_density += 1  # keep the axes (and O) on the grid
    axis = np.linspace(-radius, radius, grid_density)
    Z = np.stack(np.meshgrid(*([axis] * (2 * n)), indexing="ij"), axis=-1).reshape(-1, 2 * n)
    r = np.linalg.norm(Z, axis=1)
    Z = Z[(r > 0) & (r <= radius * (1 + 1e-12))]
    inside = ld.system.in_domain(Z)
    if not np.all(inside):
        raise ModelError("ball of the requested radius leaves the system domain")
    vals = ld.V(Z)
    k = int(np.argmin(vals))
    v0 = float(ld.V(np.zeros(2 * n)))
    return PositiveDefiniteResult(
        passed=bool(v0 == 0.0 and vals[k] > 0),
        min_value=float(vals[k]),
        min_point=Z[k],
        value_at_origin=v0,
        radius=float(radius),
        grid_density=grid_density,
    )


def radial_growth(ld: LyapunovData, rays: int = 64, samples: int = 200, seed: int = 0) -> dict:
    """Spot check that ``V`` grows along rays from O out to the edge of the domain.

    A finite box cannot certify radial unboundedness; this only reports
    whether ``V`` increased monotonically along each sampled ray and the
    smallest value reached at the ray ends.
    """
    sys = ld.system
    n = sys.n
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(rays, 2 * n))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    lo = np.array([iv[0] for iv in sys.search_box] * 2)
    hi = np.array([iv[1] for iv in sys.search_box] * 2)
    with np.errstate(divide="ignore"):
        reach = np.where(U > 0, hi / U, np.where(U < 0, lo / U, np.inf)).min(axis=1)
    s = np.linspace(0.0, 1.0, samples)[1:] * 0.999
    Z = U[:, None, :] * (reach[:, None] * s)[:, :, None]
    Vr = ld.V(Z)
    return {
        "rays": rays,
        "monotone": bool(np.all(np.diff(Vr, axis=1) >= 0)),
        "min_end_value": float(Vr[:, -1].min()),
    }


@dataclass
class RoaReport:
    level: float
    boundary_min: float
    resolution: list[float]  # grid spacing per state axis
    points_per_axis: int
    box: list[list[float]]
    worst_vdot: float  # max Vdot over the certified component
    component_size: int
    candidates_tried: int
    rejected_witness: list[float] | None  # a grid point with Vdot > 0 from a rejected level
    rejected_vdot: float | None
    nontrivial: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _default_points(dim: int, budget: int = 2_000_000) -> int:
    k = int(budget ** (1.0 / dim))
    k = max(5, min(k, 201))
    return k if k % 2 else k - 1


def estimate_roa_level(
    ld: LyapunovData,
    box: Sequence[Sequence[float]] | None = None,
    points_per_axis: int | None = None,
    shrink: float = 0.9,
    vdot_tol: float = 0.0,
) -> RoaReport:
    """Largest level ``c`` whose sublevel component about O is certified on a grid.

    ``box`` covers all ``2n`` state axes (positions first). Candidate levels
    start at the minimum of ``V`` over the box boundary and shrink
    geometrically. A level is accepted when the grid component of ``{V < c}``
    containing O (face-connected flood fill) does not touch the box boundary
    and ``Vdot <= vdot_tol`` at each of its grid points. The claim holds at
    the reported grid resolution only.
    """
    sys = ld.system
    n = sys.n
    if box is None:
        # shrink the search box so it sits strictly inside an open domain
        inner = [(0.8 * lo, 0.8 * hi) for lo, hi in sys.search_box]
        box = inner + inner
    box = [(float(lo), float(hi)) for lo, hi in box]
    if len(box) != 2 * n:
        raise ModelError(f"box must have {2 * n} intervals")
    for i in range(n):
        lo, hi = box[i]
        if not (lo <= 0 <= hi):
            raise ModelError("box must contain the origin")
        if lo < sys.omega_box[i][0] or hi > sys.omega_box[i][1] or lo <= sys.xdomain[i][0] or hi >= sys.xdomain[i][1]:
            raise ModelError(f"box axis x{i + 1} = [{lo}, {hi}] is outside the system domain")
    k = points_per_axis or _default_points(2 * n)
    axes = [np.linspace(lo, hi, k) for lo, hi in box]
    # snap the grid point nearest to 0 onto 0 so O is sampled exactly
    for a in axes:
        a[np.argmin(np.abs(a))] = 0.0
    mesh = np.meshgrid(*axes, indexing="ij", sparse=False)
    Z = np.stack(mesh, axis=-1)
    del mesh
    Vg = ld.V(Z)
    Vd = ld.Vdot(Z)
    origin_idx = tuple(int(np.argmin(np.abs(a))) for a in axes)

    boundary = np.zeros(Vg.shape, dtype=bool)
    for ax in range(2 * n):
        sl = [slice(None)] * (2 * n)
        sl[ax] = 0
        boundary[tuple(sl)] = True
        sl[ax] = -1
        boundary[tuple(sl)] = True
    c0 = float(Vg[boundary].min())

    positive = Vg[Vg > 0]
    floor = float(positive.min()) if positive.size else 0.0
    c = c0
    tried = 0
    witness, witness_v = None, None
    while True:
        tried += 1
        labels, _ = ndimage.label(Vg < c)
        lab = labels[origin_idx]
        comp = labels == lab if lab else np.zeros(Vg.shape, dtype=bool)
        if lab:
            touches = bool(np.any(comp & boundary))
            vmax = float(Vd[comp].max())
            if not touches and vmax <= vdot_tol:
                break
            if vmax > vdot_tol and witness is None:
                j = np.unravel_index(np.argmax(np.where(comp, Vd, -np.inf)), Vd.shape)
                witness, witness_v = Z[j].tolist(), float(Vd[j])
        if c <= floor:
            # only O itself remains; the trivial level is certified vacuously
            c, vmax = floor, float(Vd[origin_idx])
            comp = np.zeros(Vg.shape, dtype=bool)
            comp[origin_idx] = True
            break
        c *= shrink
    return RoaReport(
        level=float(c),
        boundary_min=c0,
        resolution=[float(a[1] - a[0]) for a in axes],
        points_per_axis=k,
        box=[list(b) for b in box],
        worst_vdot=vmax,
        component_size=int(comp.sum()),
        candidates_tried=tried,
        rejected_witness=witness,
        rejected_vdot=witness_v,
        nontrivial=bool(comp.sum() > 1),
    )


def sublevel_component(ld: LyapunovData, c: float, box, points_per_axis: int):
    """Grid axes and boolean mask of the component of ``{V < c}`` containing O."""
    n = ld.system.n
    axes = [np.linspace(lo, hi, points_per_axis) for lo, hi in box]
    for a in axes:
        a[np.argmin(np.abs(a))] = 0.0
    Z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    labels, _ = ndimage.label(ld.V(Z) < c)
    lab = labels[tuple(int(np.argmin(np.abs(a))) for a in axes)]
    if len(box) != 2 * n:
        raise ModelError("box must cover every state axis")
    return axes, (labels == lab) if lab else np.zeros(labels.shape, dtype=bool)
