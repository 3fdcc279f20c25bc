"""Adaptive Dormand-Prince 5(4) integration with dense output.

The stepper advances a *batch* of independent trajectories at once: every row
has its own time, step size and controller state, and rows drop out as they
finish. A single trajectory is a batch of one, so ensembles and single runs
share the exact same arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import LienardSystem, Perturbation, as_vector, perturbed_rhs

# Butcher tableau (Dormand & Prince 1980)
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# 5th minus 4th order weights
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension (Hairer, Norsett & Wanner, dopri5 contd5)
D = np.array(
    [
        -12715105075 / 11282082432,
        0.0,
        87487479700 / 32700410799,
        -10690763975 / 1880347072,
        701980252875 / 199316789632,
        -1453857185 / 822651844,
        69997945 / 29380423,
    ]
)

SAFETY = 0.9
FAC_MIN, FAC_MAX = 0.2, 5.0
BETA = 0.04  # PI controller
ALPHA = 0.2 - 0.75 * BETA
MIN_STEP = 1e-14
CONVERGED_STEPS = 10

TERMINATIONS = ("t_end", "converged_to_origin", "left_domain", "step_underflow")


class IntegrationError(RuntimeError):
    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class Trajectory:
    """Accepted steps of one run, with V and Vdot sampled at every step."""

    t: np.ndarray
    z: np.ndarray
    V: np.ndarray
    Vdot: np.ndarray
    reason: str
    accepted: int
    rejected: int
    nfev: int
    rtol: float
    atol: float
    system: str = ""
    exit_point: np.ndarray | None = None
    dense: np.ndarray | None = field(default=None, repr=False)  # (K-1, 5, 2n)

    @property
    def final(self) -> np.ndarray:
        return self.z[-1]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.t[0]), float(self.t[-1])

    def sample(self, t) -> np.ndarray:
        return sample_dense(self, t)

    def to_csv(self, path, header_note: str = "") -> None:
        write_csv(self, path, header_note)


def sample_dense(traj: Trajectory, t) -> np.ndarray:
    """State at time(s) ``t`` from the 4th-order continuous extension.

    Stored time stamps return the stored state exactly.
    """
    if traj.dense is None:
        raise ValueError("trajectory was integrated without dense output")
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    t0, t1 = traj.t[0], traj.t[-1]
    lo, hi = min(t0, t1), max(t0, t1)
    if np.any((ts < lo) | (ts > hi)):
        raise ValueError(f"time outside trajectory span [{lo}, {hi}]")
    forward = t1 >= t0
    tk = traj.t if forward else traj.t[::-1]
    out = np.empty((ts.size, traj.z.shape[1]))
    for j, tj in enumerate(ts):
        pos = np.searchsorted(tk, tj)
        if pos < tk.size and tk[pos] == tj:
            idx = pos if forward else traj.t.size - 1 - pos
            out[j] = traj.z[idx]
            continue
        # step k covers [t_k, t_{k+1}] in integration order
        k = (pos - 1) if forward else (traj.t.size - 1 - pos)
        h = traj.t[k + 1] - traj.t[k]
        theta = (tj - traj.t[k]) / h
        r = traj.dense[k]
        th1 = 1.0 - theta
        out[j] = r[0] + theta * (r[1] + th1 * (r[2] + theta * (r[3] + th1 * r[4])))
    return out[0] if np.ndim(t) == 0 else out


def _initial_step(rhs, t0, Z, F0, direction, rtol, atol, order=5):
    """Hairer's starting step heuristic, row-wise."""
    sc = atol + rtol * np.abs(Z)
    d0 = np.sqrt(np.mean((Z / sc) ** 2, axis=-1))
    d1 = np.sqrt(np.mean((F0 / sc) ** 2, axis=-1))
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.where(d1 > 0, d1, 1.0))
    Z1 = Z + direction * h0[:, None] * F0
    F1 = rhs(t0 + direction * h0, Z1)
    d2 = np.sqrt(np.mean(((F1 - F0) / sc) ** 2, axis=-1)) / h0
    dmax = np.maximum(d1, d2)
    h1 = np.where(dmax <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / np.where(dmax > 0, dmax, 1.0)) ** (1.0 / order))
    return np.minimum(100 * h0, h1)


def _check_tols(rtol, atol):
    for name, v in (("rel_tol", rtol), ("abs_tol", atol)):
        if not 1e-13 <= v <= 1e-3:
            raise ValueError(f"{name}={v} outside [1e-13, 1e-3]")


def run_batch(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    Z0: np.ndarray,
    t_span: tuple[float, float],
    rtol: float,
    atol: float,
    *,
    in_domain: Callable[[np.ndarray], np.ndarray] | None = None,
    convergence_radius: float | None = 1e-9,
    first_step: float | None = None,
    dense: bool = True,
    shared_step: bool = False,
) -> list[dict]:
    """Integrate every row of ``Z0`` over ``t_span`` and return raw per-row records.

    With ``shared_step`` the batch is controlled as one system (error norm is
    the max over rows), so all rows take identical steps; the shooting code
    relies on this for smooth finite-difference Jacobians.
    """
    _check_tols(rtol, atol)
    Z = np.array(Z0, dtype=float, ndmin=2)
    m, dim = Z.shape
    t0, t1 = float(t_span[0]), float(t_span[1])
    direction = 1.0 if t1 >= t0 else -1.0
    length = abs(t1 - t0)

    t = np.full(m, t0)
    active = np.ones(m, dtype=bool)
    reason = np.array([""] * m, dtype=object)
    exit_point: list = [None] * m
    accepted = np.zeros(m, dtype=int)
    rejected = np.zeros(m, dtype=int)
    nfev = np.zeros(m, dtype=int)
    near_origin = np.zeros(m, dtype=int)
    err_old = np.full(m, 1e-4)
    last_rejected = np.zeros(m, dtype=bool)

    # chunks of (row_ids, t, z, dense)
    rec_rows = [np.arange(m)]
    rec_t = [t.copy()]
    rec_z = [Z.copy()]
    rec_dense: list = []

    if length == 0.0:
        active[:] = False
        reason[:] = "t_end"

    K1 = rhs(t0, Z) if m else Z
    nfev += 1
    if first_step is not None:
        h = np.full(m, float(first_step))
    elif m and length > 0:
        h = _initial_step(rhs, t0, Z, K1, direction, rtol, atol)
        nfev += 1
    else:
        h = np.zeros(m)
    if shared_step and m:
        h[:] = h.min()
    h = np.minimum(h, length)

    stages = np.empty((7, m, dim))
    while np.any(active):
        idx = np.flatnonzero(active)
        Zi, ti = Z[idx], t[idx]
        remaining = np.abs(t1 - ti)
        hi = np.minimum(h[idx], remaining)
        hs = direction * hi
        k = stages[:, : idx.size]
        k[0] = K1[idx]
        for s in range(1, 7):
            acc = Zi.copy()
            for j, a in enumerate(A[s]):
                if a:
                    acc += (hs * a)[:, None] * k[j]
            k[s] = rhs(ti + C[s] * hs, acc)
        Znew = acc  # stage 7 argument is the 5th-order solution (FSAL)
        nfev[idx] += 6
        errv = np.tensordot(E, k, axes=(0, 0)) * hs[:, None]
        sc = atol + rtol * np.maximum(np.abs(Zi), np.abs(Znew))
        with np.errstate(invalid="ignore", over="ignore"):
            err = np.sqrt(np.mean((errv / sc) ** 2, axis=-1))
        finite = np.all(np.isfinite(k), axis=(0, 2)) & np.isfinite(err)
        err = np.where(finite, err, np.inf)
        if shared_step:
            err[:] = err.max()
        ok = err <= 1.0

        # step size update (PI controller, growth frozen right after a rejection)
        with np.errstate(divide="ignore", over="ignore"):
            fac = np.where(
                ok,
                SAFETY * np.maximum(err, 1e-10) ** (-ALPHA) * err_old[idx] ** BETA,
                SAFETY * np.maximum(err, 1e-10) ** (-0.2),
            )
        fac = np.clip(np.nan_to_num(fac, nan=FAC_MIN, posinf=FAC_MAX), FAC_MIN, FAC_MAX)
        fac = np.where(ok & last_rejected[idx], np.minimum(fac, 1.0), fac)
        h_next = hi * fac

        acc_idx = idx[ok]
        if acc_idx.size:
            okh = hs[ok]
            t_new = np.where(np.abs(t1 - (ti[ok] + okh)) <= 1e-14 * max(1.0, abs(t1)), t1, ti[ok] + okh)
            if dense:
                y0, y1 = Zi[ok], Znew[ok]
                kk = k[:, ok]
                r = np.empty((acc_idx.size, 5, dim))
                r[:, 0] = y0
                r[:, 1] = y1 - y0
                r[:, 2] = okh[:, None] * kk[0] - r[:, 1]
                r[:, 3] = r[:, 1] - okh[:, None] * kk[6] - r[:, 2]
                r[:, 4] = okh[:, None] * np.tensordot(D, kk, axes=(0, 0))
                rec_dense.append(r)
            Z[acc_idx] = Znew[ok]
            t[acc_idx] = t_new
            K1[acc_idx] = k[6][ok]
            accepted[acc_idx] += 1
            err_old[acc_idx] = np.maximum(err[ok], 1e-4)
            rec_rows.append(acc_idx)
            rec_t.append(t_new)
            rec_z.append(Znew[ok].copy())

            done = t_new == t1
            if in_domain is not None:
                inside = in_domain(Znew[ok])
                for j in np.flatnonzero(~inside):
                    row = acc_idx[j]
                    reason[row] = "left_domain"
                    exit_point[row] = Znew[ok][j].copy()
                    active[row] = False
            if convergence_radius is not None:
                small = np.linalg.norm(Znew[ok], axis=-1) < convergence_radius
                near_origin[acc_idx] = np.where(small, near_origin[acc_idx] + 1, 0)
                conv = acc_idx[(near_origin[acc_idx] >= CONVERGED_STEPS) & active[acc_idx]]
                reason[conv] = "converged_to_origin"
                active[conv] = False
            fin = acc_idx[done & active[acc_idx]]
            reason[fin] = "t_end"
            active[fin] = False

        rej_idx = idx[~ok]
        rejected[rej_idx] += 1
        last_rejected[idx] = ~ok
        h[idx] = h_next
        if shared_step:
            h[idx] = h_next.min()
        under = idx[(h[idx] < MIN_STEP) & active[idx]]
        reason[under] = "step_underflow"
        active[under] = False

    rows = np.concatenate(rec_rows)
    ts = np.concatenate(rec_t)
    zs = np.concatenate(rec_z)
    order = np.argsort(rows, kind="stable")
    split = np.cumsum(np.bincount(rows, minlength=m))[:-1]
    t_rows = np.split(ts[order], split)
    z_rows = np.split(zs[order], split)
    if dense and rec_dense:
        drows = np.concatenate(rec_rows[1:])
        dd = np.concatenate(rec_dense)
        dorder = np.argsort(drows, kind="stable")
        dsplit = np.cumsum(np.bincount(drows, minlength=m))[:-1]
        d_rows = np.split(dd[dorder], dsplit)
    else:
        d_rows = [np.empty((0, 5, dim)) if dense else None for _ in range(m)]
    return [
        dict(
            t=t_rows[i],
            z=z_rows[i],
            dense=d_rows[i],
            reason=reason[i],
            exit_point=exit_point[i],
            accepted=int(accepted[i]),
            rejected=int(rejected[i]),
            nfev=int(nfev[i]),
        )
        for i in range(m)
    ]


def _finish(sys: LienardSystem, rec: dict, rtol: float, atol: float) -> Trajectory:
    from .lyapunov import LyapunovData

    ld = LyapunovData.for_system(sys)
    return Trajectory(
        t=rec["t"],
        z=rec["z"],
        V=ld.V(rec["z"]),
        Vdot=ld.Vdot(rec["z"]),
        reason=rec["reason"],
        accepted=rec["accepted"],
        rejected=rec["rejected"],
        nfev=rec["nfev"],
        rtol=rtol,
        atol=atol,
        system=sys.name,
        exit_point=rec["exit_point"],
        dense=rec["dense"],
    )


def integrate(
    sys: LienardSystem,
    z0,
    t_span: tuple[float, float],
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-10,
    *,
    convergence_radius: float | None = 1e-9,
    first_step: float | None = None,
    dense: bool = True,
) -> Trajectory:
    """Integrate the unforced system from ``z0`` over ``t_span``.

    Stops early with ``converged_to_origin`` once ``|z|`` stays below
    ``convergence_radius`` for ten consecutive steps (pass ``None`` to disable).
    """
    return integrate_many(
        sys, [as_vector(z0, sys.n)], t_span, rel_tol, abs_tol,
        convergence_radius=convergence_radius, first_step=first_step, dense=dense,
    )[0]


def integrate_many(
    sys: LienardSystem,
    Z0: Sequence,
    t_span: tuple[float, float],
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-10,
    *,
    convergence_radius: float | None = 1e-9,
    first_step: float | None = None,
    dense: bool = False,
) -> list[Trajectory]:
    """Vectorised ensemble version of :func:`integrate`."""
    Z0 = as_vector(np.array(Z0, dtype=float, ndmin=2), sys.n)
    _check_start(sys, Z0)
    recs = run_batch(
        sys.rhs, Z0, t_span, rel_tol, abs_tol, in_domain=sys.in_domain,
        convergence_radius=convergence_radius, first_step=first_step, dense=dense,
    )
    return [_finish(sys, r, rel_tol, abs_tol) for r in recs]


def integrate_perturbed(
    sys: LienardSystem,
    pert: Perturbation,
    eps: float,
    z0,
    t_span: tuple[float, float],
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-10,
    *,
    convergence_radius: float | None = 1e-9,
    first_step: float | None = None,
    dense: bool = True,
) -> Trajectory:
    """As :func:`integrate` for the forced system; V is recorded but need not decrease."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    Z0 = as_vector(np.array(z0, dtype=float, ndmin=2), sys.n)
    _check_start(sys, Z0)
    rec = run_batch(
        perturbed_rhs(sys, pert, eps), Z0, t_span, rel_tol, abs_tol, in_domain=sys.in_domain,
        convergence_radius=convergence_radius, first_step=first_step, dense=dense,
    )[0]
    return _finish(sys, rec, rel_tol, abs_tol)


def _check_start(sys: LienardSystem, Z0: np.ndarray) -> None:
    bad = ~sys.in_domain(Z0)
    if np.any(bad):
        from .model import DomainError

        raise DomainError(f"initial state {Z0[np.argmax(bad)].tolist()} outside the domain", Z0[np.argmax(bad)])


def write_csv(traj: Trajectory, path, header_note: str = "") -> None:
    """Columns ``t, x1..xn, y1..yn, V, Vdot`` after one ``#`` header line."""
    n = traj.z.shape[1] // 2
    cols = ["t"] + [f"x{i}" for i in range(1, n + 1)] + [f"y{i}" for i in range(1, n + 1)] + ["V", "Vdot"]
    head = f"# system={traj.system} rel_tol={traj.rtol!r} abs_tol={traj.atol!r} reason={traj.reason}"
    if header_note:
        head += " " + header_note
    data = np.column_stack([traj.t, traj.z, traj.V, traj.Vdot])
    with open(path, "w", newline="\n") as fh:
        fh.write(head + "\n")
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def observed_order(errors: Sequence[float], steps: Sequence[int]) -> float:
    """Slope of log(error) against log(1/steps) between the first and last run."""
    return math.log(errors[0] / errors[-1]) / math.log(steps[-1] / steps[0])
