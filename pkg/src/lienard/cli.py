"""``lienard`` command line.

Every subcommand writes a JSON report (sorted keys, validated against the
schema shipped in ``lienard/schemas``) and a short plain-text summary into the
output directory, and prints the summary.

Exit codes: ``check`` 0 PASS / 1 FAIL / 2 inconclusive; ``simulate`` 3 when
integration stops early; ``roa`` 4, ``eigen`` 5, ``probe`` 6 and ``periodic``
7 on module errors; ``probe`` and ``periodic`` return 1 for a negative
outcome (a point that never left, a failed trend); 64 for bad configuration
or arguments.
"""
from __future__ import annotations

import argparse
import json
import sys as _sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import analysis, hypotheses, lyapunov, periodic
from .config import ConfigError, RunConfig
from .expr import ExpressionError
from .integrate import IntegrationError, integrate
from .model import LienardSystem, ModelError, linearization_eigenvalues
from .plot import phase_portrait_svg

EXIT_OK, EXIT_FAIL, EXIT_INCONCLUSIVE = 0, 1, 2
EXIT_SIMULATE = 3
EXIT_MODULE = {"roa": 4, "eigen": 5, "probe": 6, "periodic": 7}
EXIT_CONFIG = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(_sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lienard", description="Stability analysis of coupled Liénard systems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--system", help="builtin system name")
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="random seed")

    sp = sub.add_parser("check", help="check the stability hypotheses")
    common(sp)
    sp.add_argument("--grid-density", type=int)

    sp = sub.add_parser("simulate", help="integrate one trajectory")
    common(sp)
    sp.add_argument("--z0", type=_floats)
    sp.add_argument("--t-max", type=float)
    sp.add_argument("--tol", type=float, help="relative and absolute tolerance")
    sp.add_argument("--axes", type=_names, help="coordinate pair for the portrait, e.g. x1,y1")

    sp = sub.add_parser("roa", help="estimate a region of attraction")
    common(sp)
    sp.add_argument("--points-per-axis", type=int)

    sp = sub.add_parser("eigen", help="linearization eigenvalues at the origin")
    common(sp)

    sp = sub.add_parser("probe", help="seed points on the vanishing set of Vdot and watch them leave")
    common(sp)
    sp.add_argument("--stratum", choices=analysis.STRATA)
    sp.add_argument("--count", type=int)
    sp.add_argument("--subset", type=_ints)
    sp.add_argument("--horizon", type=float)

    sp = sub.add_parser("periodic", help="periodic orbits of the forced system by continuation in eps")
    common(sp)
    sp.add_argument("--eps", type=_floats, help="strictly decreasing eps values")
    sp.add_argument("--period", type=float)
    sp.add_argument("--amplitudes", type=_floats)
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.system:
        cfg.system = type(cfg.system)(builtin=args.system)
    if args.out:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    c = args.command
    if c == "check" and args.grid_density:
        cfg.check.grid_density = args.grid_density
    if c == "simulate":
        if args.z0 is not None:
            cfg.simulate.z0 = args.z0
        if args.t_max is not None:
            cfg.simulate.t_max = args.t_max
        if args.tol is not None:
            cfg.simulate.rel_tol = cfg.simulate.abs_tol = args.tol
        if args.axes is not None:
            cfg.simulate.plot_axes = args.axes
    if c == "roa" and args.points_per_axis:
        cfg.roa.points_per_axis = args.points_per_axis
    if c == "probe":
        for key in ("stratum", "count", "subset", "horizon"):
            if getattr(args, key) is not None:
                setattr(cfg.probe, key, getattr(args, key))
    if c == "periodic":
        if args.eps is not None:
            cfg.periodic.eps_list = args.eps
        if args.period is not None:
            cfg.periodic.period = args.period
        if args.amplitudes is not None:
            cfg.periodic.amplitudes = args.amplitudes
    return cfg


# ---------------------------------------------------------------- output


def load_schema(name: str) -> dict:
    return json.loads(resources.files("lienard.schemas").joinpath(f"{name}.json").read_text())


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _emit(out: Path, name: str, report: dict, summary: str) -> None:
    jsonschema.validate(report, load_schema(name))
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(dumps_report(report))
    (out / f"{name}.txt").write_text(summary + "\n")
    print(summary)


def _envelope(cfg: RunConfig, sys: LienardSystem, command: str) -> dict:
    return {"command": command, "seed": cfg.seed, "system": sys.to_dict()}


# ---------------------------------------------------------------- commands


def cmd_check(cfg: RunConfig) -> int:
    sys = cfg.build_system()
    rep = hypotheses.check_all(sys, cfg.check.grid_density)
    report = _envelope(cfg, sys, "check") | {"report": rep.to_dict()}
    code = {hypotheses.PASS: EXIT_OK, hypotheses.FAIL: EXIT_FAIL}.get(rep.verdict, EXIT_INCONCLUSIVE)
    if rep.verdict == hypotheses.PASS:
        text = (
            f"{sys.name}: PASS. Restoring terms satisfy x g(x) > 0, every damping term is nonnegative, "
            "and each constraint set checked over all subsets of axes consists of isolated points. "
            "The Lyapunov-LaSalle stability theorem for coupled Liénard systems applies: "
            "the origin is asymptotically stable."
        )
    else:
        fails = "; ".join(
            f"{f['hypothesis']}" + (f" subset {f['subset']}" if "subset" in f else "") + f" witness {f['witness']}"
            for f in rep.failures()
        )
        text = (
            f"{sys.name}: {rep.verdict}. "
            + (f"Failures: {fails}. " if fails else "Some constraint set could not be decided. ")
            + "The Lyapunov-LaSalle stability theorem for coupled Liénard systems does not apply as checked."
        )
    _emit(Path(cfg.output_dir), "check", report, text)
    return code


def cmd_simulate(cfg: RunConfig) -> int:
    sys = cfg.build_system()
    p = cfg.simulate
    n = sys.n
    z0 = np.array(p.z0 if p.z0 else [0.5] * n + [0.0] * n, dtype=float)
    if z0.size != 2 * n:
        raise ConfigError(f"simulate.z0 needs {2 * n} values")
    coords = [f"{c}{i}" for c in "xy" for i in range(1, n + 1)]
    if len(p.plot_axes) != 2 or any(a not in coords for a in p.plot_axes):
        raise ConfigError(f"simulate.plot_axes needs two of {', '.join(coords)}")
    tr = integrate(sys, z0, (0.0, p.t_max), p.rel_tol, p.abs_tol, convergence_radius=p.convergence_radius)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tr.to_csv(out / "trajectory.csv")
    svg = phase_portrait_svg(sys, tr, tuple(p.plot_axes))
    (out / "phase.svg").write_text(svg)
    dV = np.diff(tr.V)
    report = _envelope(cfg, sys, "simulate") | {
        "z0": z0.tolist(),
        "t_max": p.t_max,
        "rel_tol": p.rel_tol,
        "abs_tol": p.abs_tol,
        "convergence_radius": p.convergence_radius,
        "reason": tr.reason,
        "t_final": float(tr.t[-1]),
        "z_final": tr.final.tolist(),
        "norm_final": float(np.linalg.norm(tr.final)),
        "V_initial": float(tr.V[0]),
        "V_final": float(tr.V[-1]),
        "max_V_increase": float(dV.max()) if dV.size else 0.0,
        "accepted_steps": tr.accepted,
        "rejected_steps": tr.rejected,
        "exit_point": None if tr.exit_point is None else np.asarray(tr.exit_point).tolist(),
        "files": {"csv": "trajectory.csv", "svg": "phase.svg"},
    }
    ok = tr.reason in ("t_end", "converged_to_origin")
    text = (
        f"{sys.name}: integrated from {z0.tolist()} to t = {tr.t[-1]:.6g} ({tr.reason}); "
        f"final |z| = {np.linalg.norm(tr.final):.3e}, V fell from {tr.V[0]:.6g} to {tr.V[-1]:.3e}. "
        "The trajectory follows the unforced coupled Liénard equations; a nonincreasing V is what the "
        "Lyapunov-LaSalle argument predicts when the stability hypotheses hold."
    )
    _emit(out, "simulate", report, text)
    return EXIT_OK if ok else EXIT_SIMULATE


def cmd_roa(cfg: RunConfig) -> int:
    sys = cfg.build_system()
    ld = lyapunov.LyapunovData.for_system(sys)
    rep = lyapunov.estimate_roa_level(ld, cfg.roa.box or None, cfg.roa.points_per_axis or None)
    report = _envelope(cfg, sys, "roa") | {"report": rep.to_dict()}
    text = (
        f"{sys.name}: the component of {{V < {rep.level:.6g}}} around O stays inside the box and has "
        f"Vdot <= 0 at all {rep.component_size} grid points (resolution {max(rep.resolution):.3g}). "
        "By the LaSalle invariance principle this sublevel set estimates the region of attraction, "
        "certified at the stated grid resolution only."
    )
    _emit(Path(cfg.output_dir), "roa", report, text)
    return EXIT_OK


def cmd_eigen(cfg: RunConfig) -> int:
    sys = cfg.build_system()
    lin = linearization_eigenvalues(sys)
    report = _envelope(cfg, sys, "eigen") | {
        "eigenvalues": [[float(e.real), float(e.imag)] for e in lin.eigenvalues],
        "flag": lin.flag,
        "reasons": list(lin.reasons),
        "f_origin": lin.f_origin.tolist(),
        "g_prime": lin.g_prime.tolist(),
    }
    eig = ", ".join(f"{e.real:+.4g}{e.imag:+.4g}i" for e in lin.eigenvalues)
    if lin.flag == "clear":
        verdict = "the linearization decides stability from the signs of the real parts."
    else:
        verdict = f"linearization {lin.flag}; use check, since the Lyapunov route covers this case."
    text = f"{sys.name}: eigenvalues at O are {eig}; {verdict}"
    _emit(Path(cfg.output_dir), "eigen", report, text)
    return EXIT_OK


def cmd_probe(cfg: RunConfig) -> int:
    sys = cfg.build_system()
    p = cfg.probe
    seeded = analysis.seed_WO_points(sys, p.count, p.stratum, subset=p.subset or None, seed=cfg.seed)
    results = analysis.probe_many(sys, seeded.points, p.horizon, p.threshold)
    left = [r.left for r in results]
    times = [r.leave_time for r in results if r.left]
    report = _envelope(cfg, sys, "probe") | {
        "stratum": p.stratum,
        "requested": p.count,
        "horizon": p.horizon,
        "threshold": p.threshold,
        "note": seeded.note,
        "empty_subsets": seeded.empty_subsets,
        "probes": [r.to_dict() for r in results],
        "all_left": bool(all(left)),
    }
    if not results:
        text = f"{sys.name}: stratum {p.stratum} is empty inside the search box ({seeded.note})."
    else:
        text = (
            f"{sys.name}: {sum(left)} of {len(results)} points seeded on stratum {p.stratum} of "
            f"{{Vdot = 0}} reached Vdot < -{p.threshold:g} within t = {p.horizon:g}"
            + (f" (latest at t = {max(times):.3e})" if times else "")
            + ". Orbits leaving the vanishing set of Vdot is the step of the LaSalle argument that "
            "makes the origin the largest invariant subset there."
        )
    _emit(Path(cfg.output_dir), "probe", report, text)
    return EXIT_OK if all(left) else EXIT_FAIL


def cmd_periodic(cfg: RunConfig) -> int:
    sys = cfg.build_system()
    p = cfg.periodic
    pert = p.perturbation(sys.n)
    guess = np.array(p.guess, dtype=float) if p.guess else None
    try:
        res = periodic.continuation(sys, pert, p.eps_list, guess)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k, orb in enumerate(res.orbits):
        name = f"orbit_{k}.csv"
        orb.to_csv(out / name)
        files.append(name)
    report = _envelope(cfg, sys, "periodic") | {
        "perturbation": pert.to_dict(),
        "eps_scaled": pert.eps_scaled,
        "result": res.to_dict(),
        "files": files,
    }
    amps = ", ".join(f"{o.eps:g}: {o.amplitude:.4g}" for o in res.orbits)
    text = (
        f"{sys.name}: periodic orbits of the forced system (period {pert.period:.6g}) found for eps -> amplitude "
        f"{{{amps}}}; trend {res.trend} ({res.note})"
        + (f"; stopped at {res.failure}" if res.failure else "")
        + ". Small periodic forcing of an asymptotically stable equilibrium is expected to produce a "
        "periodic solution that shrinks to the null solution as eps -> 0."
    )
    _emit(out, "periodic", report, text)
    if res.failure:
        return EXIT_MODULE["periodic"]
    return EXIT_OK if res.trend == "PASS" else EXIT_FAIL


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "roa": cmd_roa,
    "eigen": cmd_eigen,
    "probe": cmd_probe,
    "periodic": cmd_periodic,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        cfg.build_system()
    except (ConfigError, ModelError, ExpressionError) as err:
        print(f"lienard: configuration error: {err}", file=_sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except ConfigError as err:
        print(f"lienard: configuration error: {err}", file=_sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as err:
        print(f"lienard: {err}", file=_sys.stderr)
        return EXIT_SIMULATE if args.command == "simulate" else EXIT_MODULE.get(args.command, EXIT_INCONCLUSIVE)
    except (ModelError, ExpressionError, ValueError, RuntimeError) as err:
        print(f"lienard: {args.command} failed: {err}", file=_sys.stderr)
        if args.command == "check":
            return EXIT_INCONCLUSIVE
        if args.command == "simulate":
            return EXIT_SIMULATE
        return EXIT_MODULE[args.command]


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
