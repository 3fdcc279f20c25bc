"""Periodic solutions of the T-periodically forced system by shooting.

A fixed point of the period map ``P(z) = z(T; z)`` is found by damped Newton
iteration with a forward-difference Jacobian. The same Jacobian is the
monodromy matrix whose eigenvalues are reported as Floquet multipliers.
Continuation walks a decreasing list of ``eps`` values, warm-starting each
solve from the previous orbit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .integrate import IntegrationError, integrate_perturbed, run_batch
from .model import LienardSystem, Perturbation, as_vector, perturbed_rhs

MAP_TOL = 1e-11
VERIFY_TOL = 1e-12
NEWTON_TOL = 1e-10
RESIDUAL_BOUND = 1e-9
FD_STEP = 1e-7
MAX_HALVINGS = 8


class ShootingError(RuntimeError):
    def __init__(self, message: str, last_iterate: np.ndarray | None = None, residual: float | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


@dataclass
class PeriodicOrbit:
    eps: float
    period: float
    z_star: np.ndarray
    residual: float  # |z(T) - z*| from the re-verification run
    newton_residual: float  # |P(z*) - z*| at the Newton tolerance
    t: np.ndarray
    samples: np.ndarray
    amplitude: float  # max_t |z(t)|
    component_amplitudes: np.ndarray  # max_t |z_k(t)| per state component
    multipliers: np.ndarray  # eigenvalues of the finite-difference monodromy
    newton_steps: int
    notes: list[str] = field(default_factory=list)

    @property
    def multiplier_moduli(self) -> np.ndarray:
        return np.abs(self.multipliers)

    @property
    def stable(self) -> bool:
        return bool(np.all(self.multiplier_moduli < 1.0))

    def summary(self) -> dict:
        n = self.z_star.size // 2
        return {
            "eps": self.eps,
            "period": self.period,
            "z_star": self.z_star.tolist(),
            "residual": self.residual,
            "newton_residual": self.newton_residual,
            "newton_steps": self.newton_steps,
            "amplitude": self.amplitude,
            "x_amplitudes": self.component_amplitudes[:n].tolist(),
            "multipliers": [[float(m.real), float(m.imag)] for m in self.multipliers],
            "multiplier_moduli": self.multiplier_moduli.tolist(),
            "notes": list(self.notes),
        }

    def to_csv(self, path) -> None:
        """Columns ``t, x1..xn, y1..yn, norm`` after one ``#`` header line."""
        n = self.z_star.size // 2
        cols = ["t"] + [f"x{i}" for i in range(1, n + 1)] + [f"y{i}" for i in range(1, n + 1)] + ["norm"]
        norms = np.linalg.norm(self.samples, axis=1)
        with open(path, "w", newline="\n") as fh:
            fh.write(f"# eps={self.eps!r} period={self.period!r} residual={self.residual!r}\n")
            fh.write(",".join(cols) + "\n")
            for tk, zk, nk in zip(self.t, self.samples, norms):
                fh.write(",".join(repr(float(v)) for v in (tk, *zk, nk)) + "\n")


def _map_rows(sys, pert, eps, Z, tol, shared_step=False) -> np.ndarray:
    rhs = perturbed_rhs(sys, pert, eps)
    recs = run_batch(
        rhs, Z, (0.0, pert.period), tol, tol, in_domain=sys.in_domain,
        convergence_radius=None, dense=False, shared_step=shared_step,
    )
    for r in recs:
        if r["reason"] != "t_end":
            raise IntegrationError(f"period map integration stopped with {r['reason']}")
    return np.array([r["z"][-1] for r in recs])


def period_map(sys: LienardSystem, pert: Perturbation, eps: float, z0, tol: float = MAP_TOL) -> np.ndarray:
    """State after one forcing period, integrated at ``tol``."""
    z0 = as_vector(z0, sys.n)
    if not sys.in_domain(z0[None])[0]:
        from .model import DomainError

        raise DomainError("initial state outside the domain", z0)
    return _map_rows(sys, pert, eps, z0[None], tol)[0]


def _monodromy(sys, pert, eps, z, h, tol):
    """``P(z)`` and the forward-difference Jacobian from one shared-step batch."""
    d = z.size
    Z = np.vstack([z, z + h * np.eye(d)])
    P = _map_rows(sys, pert, eps, Z, tol, shared_step=True)
    return P[0], (P[1:] - P[0]).T / h


def null_orbit(sys: LienardSystem, pert: Perturbation, samples: int = 256) -> PeriodicOrbit:
    d = 2 * sys.n
    t = np.linspace(0.0, pert.period, samples + 1)
    return PeriodicOrbit(
        eps=0.0, period=pert.period, z_star=np.zeros(d), residual=0.0, newton_residual=0.0,
        t=t, samples=np.zeros((t.size, d)), amplitude=0.0, component_amplitudes=np.zeros(d),
        multipliers=np.array([], dtype=complex), newton_steps=0,
        notes=["eps = 0 with eps-scaled forcing: the equilibrium O is the periodic solution"],
    )


def shoot(
    sys: LienardSystem,
    pert: Perturbation,
    eps: float,
    guess=None,
    *,
    tol: float = NEWTON_TOL,
    fd_step: float = FD_STEP,
    max_iter: int = 40,
    map_tol: float = MAP_TOL,
    samples: int = 256,
) -> PeriodicOrbit:
    """Fixed point of the period map by damped Newton iteration.

    Each iteration evaluates ``P`` at ``z`` and at ``z + fd_step * e_k`` in
    one batch with a shared step sequence, so the finite-difference Jacobian
    is free of step-selection noise. A full step is halved up to eight times
    until ``|F|`` decreases. The converged orbit is re-integrated at
    tolerance 1e-12 and must close to within 1e-9.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    d = 2 * sys.n
    z = np.zeros(d) if guess is None else np.array(as_vector(guess, sys.n), dtype=float)
    if eps == 0 and pert.eps_scaled and not np.any(z):
        return null_orbit(sys, pert, samples)
    notes: list[str] = []
    P, M = _monodromy(sys, pert, eps, z, fd_step, map_tol)
    F = P - z
    fn = float(np.linalg.norm(F))
    steps = 0
    while fn >= tol:
        if steps >= max_iter:
            raise ShootingError(f"no convergence in {max_iter} Newton steps", z, fn)
        J = M - np.eye(d)
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > 1e12:
            raise ShootingError("singular shooting Jacobian: a Floquet multiplier is near 1", z, fn)
        dz = np.linalg.solve(J, -F)
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            z_try = z + lam * dz
            if sys.in_domain(z_try[None])[0]:
                f_try = float(np.linalg.norm(period_map(sys, pert, eps, z_try, map_tol) - z_try))
                if f_try < fn:
                    break
            lam *= 0.5
        else:
            raise ShootingError("Newton step failed to reduce the residual after 8 halvings", z, fn)
        z = z_try
        steps += 1
        P, M = _monodromy(sys, pert, eps, z, fd_step, map_tol)
        F = P - z
        fn = float(np.linalg.norm(F))
    multipliers = np.linalg.eigvals(M)
    order = np.lexsort((multipliers.imag, multipliers.real, -np.abs(multipliers)))
    multipliers = multipliers[order]

    tr = integrate_perturbed(
        sys, pert, eps, z, (0.0, pert.period), VERIFY_TOL, VERIFY_TOL, convergence_radius=None, dense=True
    )
    if tr.reason != "t_end":
        raise ShootingError(f"re-verification run stopped with {tr.reason}", z, fn)
    residual = float(np.linalg.norm(tr.final - z))
    if residual >= RESIDUAL_BOUND:
        raise ShootingError(f"re-verified residual {residual:.3e} exceeds {RESIDUAL_BOUND}", z, residual)
    t = np.linspace(0.0, pert.period, samples + 1)
    Zs = tr.sample(t)
    Zs[-1] = tr.final
    if np.any(np.abs(multipliers - 1.0) < 1e-6):
        notes.append("a Floquet multiplier is within 1e-6 of 1")
    return PeriodicOrbit(
        eps=float(eps), period=pert.period, z_star=z, residual=residual, newton_residual=fn,
        t=t, samples=Zs, amplitude=float(np.linalg.norm(Zs, axis=1).max()),
        component_amplitudes=np.abs(Zs).max(axis=0), multipliers=multipliers,
        newton_steps=steps, notes=notes,
    )


@dataclass
class ContinuationResult:
    orbits: list[PeriodicOrbit]
    eps_list: list[float]
    trend: str  # "PASS" | "FAIL"
    note: str
    failure: str | None = None

    @property
    def largest_converged_eps(self) -> float | None:
        """Empirical lower bound on the existence threshold for eps."""
        pos = [o.eps for o in self.orbits if o.eps > 0]
        return max(pos) if pos else None

    def to_dict(self) -> dict:
        return {
            "eps_list": self.eps_list,
            "trend": self.trend,
            "note": self.note,
            "failure": self.failure,
            "largest_converged_eps": self.largest_converged_eps,
            "orbits": [o.summary() for o in self.orbits],
        }


def _trend(orbits: Sequence[PeriodicOrbit]) -> tuple[str, str]:
    pos = [o for o in orbits if o.eps > 0]
    if len(pos) < 2:
        return "PASS", "insufficient points for trend"
    amp = np.array([o.amplitude for o in pos])
    ratio = amp / np.array([o.eps for o in pos])
    decreasing = bool(np.all(np.diff(amp) < 0))
    band = float(ratio.max() / ratio.min()) if ratio.min() > 0 else np.inf
    ok = decreasing and band <= 2.0
    note = f"amplitudes {'strictly decreasing' if decreasing else 'not strictly decreasing'}; amplitude/eps band {band:.4g}"
    return ("PASS" if ok else "FAIL"), note


def continuation(
    sys: LienardSystem,
    pert: Perturbation,
    eps_list: Sequence[float],
    guess=None,
    **shoot_kwargs,
) -> ContinuationResult:
    """Shoot along a strictly decreasing ``eps_list``; a trailing 0 is allowed.

    The trend passes when orbit amplitudes strictly decrease and
    ``amplitude / eps`` stays within a factor 2 band. A failed solve stops the
    sweep and returns the orbits found so far.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("eps_list is empty")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if any(e < 0 for e in eps_list) or any(e == 0 for e in eps_list[:-1]):
        raise ValueError("eps values must be positive (a single trailing 0 is allowed)")
    orbits: list[PeriodicOrbit] = []
    z = guess
    for eps in eps_list:
        if eps == 0.0 and pert.eps_scaled:
            orbits.append(null_orbit(sys, pert, shoot_kwargs.get("samples", 256)))
            continue
        try:
            orb = shoot(sys, pert, eps, z, **shoot_kwargs)
        except (ShootingError, IntegrationError) as err:
            trend, note = _trend(orbits)
            return ContinuationResult(orbits, eps_list, "FAIL", note, failure=f"eps={eps!r}: {err}")
        orbits.append(orb)
        z = orb.z_star
    trend, note = _trend(orbits)
    return ContinuationResult(orbits, eps_list, trend, note)
