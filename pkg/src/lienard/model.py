"""Coupled Liénard systems ``x_i'' + f_i(X) x_i' + g_i(x_i) = 0`` in first-order form.

The state is ``Z = (x_1..x_n, y_1..y_n)`` and the field is

    x_i' = y_i,    y_i' = -g_i(x_i) - y_i f_i(X)   (+ h_i(t, X, Y, eps) when forced).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import expr as ex

Box = tuple[tuple[float, float], ...]

BUILTINS = ("intro", "squares", "ellipses", "cubic", "oscillator")


class ModelError(ValueError):
    pass


class DomainError(ModelError):
    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


def _as_expr(e) -> ex.Expression:
    return e if isinstance(e, ex.Expression) else ex.parse(str(e))


def _as_box(box, n: int, name: str) -> Box:
    out = tuple((float(lo), float(hi)) for lo, hi in box)
    if len(out) != n:
        raise ModelError(f"{name} has {len(out)} intervals, expected {n}")
    for lo, hi in out:
        if not lo < hi:
            raise ModelError(f"{name} interval ({lo}, {hi}) is empty")
    return out


@dataclass(frozen=True)
class State:
    """Positions ``x`` and velocities ``y``; converts to the stacked vector ``Z``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape != y.shape:
            raise ModelError("x and y must have the same length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ModelError("state entries must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_vector(cls, z) -> "State":
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size % 2:
            raise ModelError("stacked state must have even length")
        n = z.size // 2
        return cls(z[:n], z[n:])

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    def __array__(self, dtype=None, copy=None):
        return self.z if dtype is None else self.z.astype(dtype)


def as_vector(z, n: int | None = None) -> np.ndarray:
    v = np.asarray(z, dtype=float)
    if n is not None and v.shape[-1] != 2 * n:
        raise ModelError(f"state has length {v.shape[-1]}, expected {2 * n}")
    return v


@dataclass(frozen=True)
class LienardSystem:
    """``n`` damping terms ``f_i(X)`` and restoring terms ``g_i(x_i)`` with their boxes.

    ``omega_box`` is the closed box where the damping terms are considered and
    ``xdomain`` the open intervals ``(a_i, b_i)`` on which each ``g_i`` lives.
    """

    n: int
    f: tuple[ex.Expression, ...]
    g: tuple[ex.Expression, ...]
    omega_box: Box
    xdomain: Box
    name: str = "custom"

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise ModelError("dimension must be positive")
        f = tuple(_as_expr(e) for e in self.f)
        g = tuple(_as_expr(e) for e in self.g)
        if len(f) != n or len(g) != n:
            raise ModelError(f"need {n} damping and {n} restoring expressions")
        xvars = {f"x{i}" for i in range(1, n + 1)}
        for i, fi in enumerate(f, 1):
            extra = fi.variables - xvars
            if extra:
                raise ModelError(f"f{i} may only use x1..x{n}; found {sorted(extra)}")
        for i, gi in enumerate(g, 1):
            extra = gi.variables - {f"x{i}"}
            if extra:
                raise ModelError(f"g{i} may only depend on x{i}; found {sorted(extra)}")
        omega = _as_box(self.omega_box, n, "omega_box")
        xdom = _as_box(self.xdomain, n, "xdomain")
        for i, (a, b) in enumerate(xdom, 1):
            if not a < 0 < b:
                raise ModelError(f"xdomain interval {i} must satisfy a < 0 < b")
        for i, gi in enumerate(g, 1):
            g0 = float(ex.evaluate(gi, {f"x{i}": 0.0}))
            if abs(g0) > 1e-12:
                raise ModelError(f"g{i}(0) = {g0} but the origin must be an equilibrium")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "omega_box", omega)
        object.__setattr__(self, "xdomain", xdom)

    # -- compiled evaluators --------------------------------------------------

    @cached_property
    def _f_fns(self):
        return [ex.compile_vectorized(e, self.n) for e in self.f]

    @cached_property
    def _g_fns(self):
        return [ex.compile_vectorized(e, self.n) for e in self.g]

    @cached_property
    def polynomial(self) -> bool:
        return all(ex.is_polynomial(e) for e in self.f + self.g)

    @cached_property
    def nonpolynomial_terms(self) -> list[str]:
        names = [f"f{i}" for i, e in enumerate(self.f, 1) if not ex.is_polynomial(e)]
        return names + [f"g{i}" for i, e in enumerate(self.g, 1) if not ex.is_polynomial(e)]

    def f_values(self, X: np.ndarray) -> np.ndarray:
        """Damping terms at positions ``X`` of shape ``(..., n)``."""
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape)
        for i, fn in enumerate(self._f_fns):
            out[..., i] = fn(X, X, 0.0, 0.0)
        return out

    def g_values(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape)
        for i, fn in enumerate(self._g_fns):
            out[..., i] = fn(X, X, 0.0, 0.0)
        return out

    @property
    def search_box(self) -> Box:
        """Intersection of ``omega_box`` and ``xdomain``."""
        return tuple(
            (max(lo1, lo2), min(hi1, hi2)) for (lo1, hi1), (lo2, hi2) in zip(self.omega_box, self.xdomain)
        )

    def in_domain(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        X = Z[..., : self.n]
        ok = np.ones(Z.shape[:-1], dtype=bool)
        for i in range(self.n):
            lo, hi = self.omega_box[i]
            a, b = self.xdomain[i]
            xi = X[..., i]
            ok &= (xi >= lo) & (xi <= hi) & (xi > a) & (xi < b)
        return ok & np.all(np.isfinite(Z), axis=-1)

    def rhs(self, t, Z: np.ndarray) -> np.ndarray:
        """Unchecked vector field on stacked states ``(..., 2n)``."""
        n = self.n
        X, Y = Z[..., :n], Z[..., n:]
        out = np.empty_like(Z)
        out[..., :n] = Y
        for i in range(n):
            out[..., n + i] = -self._g_fns[i](X, Y, t, 0.0) - Y[..., i] * self._f_fns[i](X, Y, t, 0.0)
        return out

    def with_name(self, name: str) -> "LienardSystem":
        return LienardSystem(self.n, self.f, self.g, self.omega_box, self.xdomain, name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "f": [str(e) for e in self.f],
            "g": [str(e) for e in self.g],
            "omega_box": [list(iv) for iv in self.omega_box],
            "xdomain": [list(iv) for iv in self.xdomain],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LienardSystem":
        n = int(d["n"])
        default = [[-5.0, 5.0]] * n
        return cls(
            n=n,
            f=tuple(d["f"]),
            g=tuple(d["g"]),
            omega_box=d.get("omega_box", default),
            xdomain=d.get("xdomain", default),
            name=d.get("name", "custom"),
        )


def _check_state(sys: LienardSystem, z) -> np.ndarray:
    v = as_vector(z, sys.n)
    if not np.all(sys.in_domain(v)):
        raise DomainError(f"state {v.tolist()} lies outside the domain of {sys.name}", v)
    return v


def vector_field(sys: LienardSystem, z) -> np.ndarray:
    """``(y, -g(x) - y*f(x))`` at a state inside the domain."""
    v = _check_state(sys, z)
    return sys.rhs(0.0, v)


# ------------------------------------------------------------- perturbation


@dataclass(frozen=True)
class Perturbation:
    """T-periodic forcing ``h(t, X, Y, eps)`` added to the velocity equations.

    The constructor samples ``h`` at random points and rejects it unless
    ``h(t + T) == h(t)``; :meth:`cosine` builds the standard family
    ``eps * c_i * cos(2*pi*t/T + phi_i)``.
    """

    h: tuple[ex.Expression, ...]
    period: float
    description: str = ""
    check_seed: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        h = tuple(_as_expr(e) for e in self.h)
        if not self.period > 0:
            raise ModelError("forcing period must be positive")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "period", float(self.period))
        n = len(h)
        allowed = {"t", "eps"} | {f"x{i}" for i in range(1, n + 1)} | {f"y{i}" for i in range(1, n + 1)}
        for i, hi in enumerate(h, 1):
            extra = hi.variables - allowed
            if extra:
                raise ModelError(f"h{i} uses unsupported variables {sorted(extra)}")
        rng = np.random.default_rng(self.check_seed)
        for _ in range(8):
            X, Y = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
            t, eps = rng.uniform(0, self.period), rng.uniform(0, 1)
            a = self.evaluate(t, X, Y, eps)
            b = self.evaluate(t + self.period, X, Y, eps)
            if not np.allclose(a, b, rtol=1e-9, atol=1e-12):
                raise ModelError(f"forcing is not {self.period}-periodic in t")

    @classmethod
    def cosine(cls, n: int, period: float, amplitudes: Sequence[float], phases: Sequence[float] | None = None):
        phases = [0.0] * n if phases is None else list(phases)
        if len(amplitudes) != n or len(phases) != n:
            raise ModelError("need one amplitude and one phase per component")
        omega = 2 * math.pi / float(period)
        t_arg: ex.Expression = ex.mul(ex.const(omega), ex.Var("t"))
        h = []
        for c, phi in zip(amplitudes, phases):
            if c == 0:
                h.append(ex.ZERO)
                continue
            arg = ex.add(t_arg, ex.const(phi)) if phi else t_arg
            h.append(ex.mul(ex.mul(ex.Var("eps"), ex.const(c)), ex.Func("cos", arg)))
        desc = f"eps*c_i*cos(2*pi*t/T + phi_i), T={period!r}, c={list(map(float, amplitudes))}, phi={phases}"
        return cls(tuple(h), float(period), desc)

    @property
    def n(self) -> int:
        return len(self.h)

    @cached_property
    def _fns(self):
        return [ex.compile_vectorized(e, self.n) for e in self.h]

    def evaluate(self, t, X, Y, eps) -> np.ndarray:
        binding = {"t": float(t), "eps": float(eps)}
        for i in range(self.n):
            binding[f"x{i + 1}"] = float(X[i])
            binding[f"y{i + 1}"] = float(Y[i])
        return np.array([float(ex.evaluate(e, binding)) for e in self.h])

    def values(self, t, Z: np.ndarray, eps: float) -> np.ndarray:
        n = self.n
        X, Y = Z[..., :n], Z[..., n:]
        out = np.empty(X.shape)
        for i, fn in enumerate(self._fns):
            out[..., i] = fn(X, Y, t, eps)
        return out

    @cached_property
    def eps_scaled(self) -> bool:
        """True when ``h`` vanishes identically at ``eps = 0`` (checked on samples)."""
        rng = np.random.default_rng(1)
        for _ in range(16):
            X, Y = rng.uniform(-2, 2, self.n), rng.uniform(-2, 2, self.n)
            if np.any(self.evaluate(rng.uniform(0, self.period), X, Y, 0.0) != 0.0):
                return False
        return True

    def to_dict(self) -> dict:
        return {"h": [str(e) for e in self.h], "period": self.period, "description": self.description}


def perturbed_rhs(sys: LienardSystem, pert: Perturbation, eps: float):
    if pert.n != sys.n:
        raise ModelError("forcing dimension does not match the system")
    n = sys.n

    def rhs(t, Z):
        out = sys.rhs(t, Z)
        out[..., n:] += pert.values(t, Z, eps)
        return out

    return rhs


def perturbed_vector_field(sys: LienardSystem, pert: Perturbation, eps: float, t: float, z) -> np.ndarray:
    if eps < 0:
        raise ModelError("eps must be non-negative")
    v = _check_state(sys, z)
    return perturbed_rhs(sys, pert, eps)(float(t), v)


# ------------------------------------------------------------ linearization


@dataclass(frozen=True)
class Linearization:
    eigenvalues: np.ndarray  # (2n,) complex, ordered (+, -) per component
    flag: str  # "clear" | "inconclusive" | "degenerate"
    f_origin: np.ndarray
    g_prime: np.ndarray
    reasons: tuple[str, ...]


def _g_prime_at_zero(gi: ex.Expression, var: str) -> float:
    if ex.is_polynomial(gi):
        return float(ex.evaluate(ex.differentiate(gi, var), {var: 0.0}))
    warnings.warn(f"{var}-restoring term is not polynomial; g'(0) from central differences", stacklevel=3)
    h = 1e-6
    return float((ex.evaluate(gi, {var: h}) - ex.evaluate(gi, {var: -h})) / (2 * h))


def linearization_eigenvalues(sys: LienardSystem) -> Linearization:
    """Eigenvalues ``(-f_i(0) +- sqrt(f_i(0)^2 - 4 g_i'(0))) / 2`` of the linearization at O.

    ``flag`` is ``degenerate`` when some ``g_i'(0) = 0`` and ``inconclusive``
    when some ``f_i(0) = 0`` with ``g_i'(0) > 0`` (purely imaginary pair).
    """
    n = sys.n
    f0 = sys.f_values(np.zeros(n))
    gp = np.array([_g_prime_at_zero(gi, f"x{i}") for i, gi in enumerate(sys.g, 1)])
    eig = []
    for fi, gpi in zip(f0, gp):
        disc = np.sqrt(complex(fi * fi - 4 * gpi))
        eig += [(-fi + disc) / 2, (-fi - disc) / 2]
    reasons = []
    flag = "clear"
    for i in range(n):
        if gp[i] == 0:
            reasons.append(f"g{i + 1}'(0) = 0: linearization is degenerate")
        elif f0[i] == 0 and gp[i] > 0:
            reasons.append(f"f{i + 1}(O) = 0 with g{i + 1}'(0) > 0: eigenvalues on the imaginary axis")
    if np.prod(gp) == 0:
        flag = "degenerate"
    elif reasons:
        flag = "inconclusive"
    return Linearization(np.array(eig, dtype=complex), flag, f0, gp, tuple(reasons))


# ---------------------------------------------------------------- builtins

_SQUARES_F = ("x1^2*(x2 - 1)^2*(x1 + 1)^2", "x2^2*(x1 - 1)^2*(x2 + 1)^2")

_BUILTIN_DEFS = {
    "intro": (("(x1 - x2)^2", "(x1 + x2^2)^2"), ("x1", "x2")),
    "squares": (_SQUARES_F, ("x1", "x2")),
    "ellipses": (("(x1^2 + 2*x2^2 - 1)^2", "(2*x1^2 + x2^2 - 1)^2"), ("x1", "x2")),
    # degenerate restoring force with the squares damping
    "cubic": (_SQUARES_F, ("x1^3", "x2^3")),
    "oscillator": (("0", "0"), ("x1", "x2")),
}


def builtin(name: str) -> LienardSystem:
    """One of the named reference systems; every box is ``[-5, 5]`` per axis."""
    try:
        f, g = _BUILTIN_DEFS[name]
    except KeyError:
        raise ModelError(f"unknown builtin system {name!r}; choose from {', '.join(BUILTINS)}") from None
    box = ((-5.0, 5.0), (-5.0, 5.0))
    return LienardSystem(2, f, g, box, box, name)
