"""Command-line entry point: ``oncowave <command> [--config FILE] [--out DIR] [--seed N]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure or a
violated check.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import shutil
import sys
from pathlib import Path

import numpy as np

from . import dispersion, model, pde, wave
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .errors import (
    ConstructionError,
    InvalidParameterError,
    NoAdmissibleRhoError,
    OncowaveError,
    TruncatedDomainError,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("equilibria", "bifurcation", "dispersion", "envelope", "verify", "fixedpoint", "simulate", "speed", "table1")

# (label, a, theta) with gamma = 40/3 and D = 0.025
TABLE1_ROWS = (
    ("a<1", 0.96, 25.0),
    ("a<1", 0.96, 150.0),
    ("a<1", 0.96, 250.0),
    ("a>1", 10.0 / 3.0, 150.0),
    ("a>1", 10.0 / 3.0, 350.0),
    ("a>1", 10.0 / 3.0, 500.0),
)


class NumericFailure(Exception):
    """A command ran but its check failed; outputs are kept."""


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _print_summary(title: str, data: dict) -> None:
    print(title)
    for k, v in data.items():
        print(f"  {k} = {fmt(v)}")


# --------------------------------------------------------------------------
# commands


def cmd_equilibria(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params()
    eqs = model.equilibria(p)
    write_csv(
        out / "equilibria.csv",
        ["label", "C", "I", "V", "max_re_eig", "stability", "relevant"],
        [(e.label, e.C, e.I, e.V, e.max_real, e.stability, e.relevant) for e in eqs],
    )
    return {e.label: f"({e.C:.6g}, {e.I:.6g}, {e.V:.6g}) {e.stability}{'' if e.relevant else ' (not relevant)'}" for e in eqs}


def cmd_bifurcation(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params()
    b = cfg.bifurcation
    br = model.bifurcation_scan(p, (b.theta_min, b.theta_max), b.n_samples)
    write_csv(
        out / "bifurcation.csv",
        ["theta", "C2", "I2", "V2", "max_re_eig", "stability"],
        [(t, *v, m, s) for t, v, m, s in zip(br.theta_grid, br.branch_values, br.max_real, br.stability)],
    )
    summary = {"theta_t": br.theta_t, "theta_H": br.theta_H if br.theta_H is not None else "none"}
    if br.hopf_frequency is not None:
        summary["hopf_frequency"] = br.hopf_frequency
    if not br.relevant.any():
        summary["note"] = "no relevant E2 in the scanned theta range (theta <= a*gamma)"
    return summary


def cmd_dispersion(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.params()
    if not p.coexistence():
        raise ConfigError(f"dispersion analysis needs theta > a*gamma (theta={p.theta}, a*gamma={p.a * p.gamma})")
    d = cfg.dispersion
    rho = np.logspace(math.log10(d.rho_min), math.log10(d.rho_max), d.n)
    S = dispersion.speed_curve_S(rho, p)
    H = dispersion.H_curves(rho, p)
    lam = dispersion.lambda2(rho, p)
    write_csv(out / "dispersion.csv", ["rho", "S", "H1", "H2", "H3", "H4", "lambda2"], zip(rho, S, *H, lam))
    crit = dispersion.find_critical_rhos(p)
    summary = {k: ("none" if v is None else v) for k, v in crit.as_dict().items()}
    if crit.foggy_interval is not None:
        summary["foggy_interval"] = f"({crit.rho_star:.10g}, {crit.rho_m:.10g})"
    write_json(out / "critical.json", summary)
    return summary


def _envelope(cfg: ExperimentConfig):
    p = cfg.params()
    e = cfg.envelope
    crit = dispersion.find_critical_rhos(p)
    c = e.c
    if c is None and e.rho is None:
        c = e.c_factor * crit.c_bar
    return wave.build_envelope(c, p, eps=e.eps, kappa_frac=e.kappa_frac, crit=crit, rho=e.rho)


def cmd_envelope(cfg: ExperimentConfig, out: Path) -> dict:
    env = _envelope(cfg)
    write_json(out / "envelope.json", env.as_dict())
    return {k: env.as_dict()[k] for k in ("c", "rho", "eps", "kappa", "alpha", "xi_bar1", "xi_bar2", "xi_bar3", "xi_lo2", "xi_lo3", "mu")}


def cmd_verify(cfg: ExperimentConfig, out: Path) -> dict:
    env = _envelope(cfg)
    grid = wave.residual_grid(env, cfg.envelope.residual_points)
    up, lo = wave.check_residuals(env, grid, tol=cfg.envelope.tol)
    g = wave.default_grid(env, cfg.fixedpoint.n)
    _, tu = wave.in_sandwich(wave.operator_T(wave.upper_profile(env, g), env), env)
    _, tl = wave.in_sandwich(wave.operator_T(wave.lower_profile(env, g), env), env)
    report = {
        "envelope": env.as_dict(),
        "upper": vars(up),
        "lower": vars(lo),
        "T_upper_excess": tu,
        "T_lower_deficit": tl,
    }
    write_json(out / "verify.json", report)
    summary = {
        "upper_passed": up.passed,
        "upper_min_residual": min(up.min_residual),
        "lower_passed": lo.passed,
        "lower_max_residual": max(lo.max_residual),
        "T_upper_excess": tu,
        "T_lower_deficit": tl,
    }
    if not (up.passed and lo.passed and tu <= wave.SANDWICH_TOL and tl <= wave.SANDWICH_TOL):
        _print_summary("verify", summary)
        raise NumericFailure("residual or sandwich check failed; see verify.json")
    return summary


def cmd_fixedpoint(cfg: ExperimentConfig, out: Path) -> dict:
    env = _envelope(cfg)
    f = cfg.fixedpoint
    grid = wave.default_grid(env, f.n)
    prof, rep = wave.picard_iterate(env, grid=grid, max_iter=f.max_iter, tol=f.tol, left_tail=f.left_tail)
    write_csv(out / "profile.csv", ["xi", "B", "I", "V"], zip(prof.grid, prof.B, prof.I, prof.V))
    write_json(out / "report.json", {**rep.as_dict(), "envelope": env.as_dict()})
    summary = rep.as_dict()
    if not rep.converged:
        _print_summary("fixedpoint", summary)
        raise NumericFailure(rep.failure or f"no convergence after {rep.iterations} iterations")
    return summary


def _sim_config(cfg: ExperimentConfig, p=None) -> pde.SimConfig:
    s = cfg.simulate
    ic = pde.InitialCondition(
        V_amplitude=s.V_amplitude, V_width=s.V_width, V_center=s.V_center, C0=s.C0, I0=s.I0,
        seed=s.seed_component, shape=s.seed_shape,
    )
    try:
        return pde.SimConfig(
            p or cfg.params(), domain_length=s.domain_length, nx=s.nx, t_end=s.t_end, dt=s.dt,
            ic=ic, kinetics=s.kinetics, n_snapshots=s.n_snapshots, probes=tuple(s.probes),
        )
    except InvalidParameterError as exc:
        raise ConfigError(f"[simulate] {exc}") from exc


def _speed(cfg: ExperimentConfig, sim: pde.SimRun) -> pde.FrontTrace:
    s = cfg.simulate
    return pde.measure_front_speed(sim.states, level=s.level, component=s.component, params=sim.config.params)


def cmd_simulate(cfg: ExperimentConfig, out: Path, snapshots: bool = True) -> dict:
    sim = pde.run(_sim_config(cfg))
    if snapshots:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        every = max(1, cfg.simulate.export_every)
        for k, st in enumerate(sim.states):
            if k % every == 0 or k == len(sim.states) - 1:
                pde.write_snapshot_csv(st, snap_dir / f"snapshot_{k:04d}.csv")
    summary = {"dt": sim.dt, "t_end": sim.states[-1].t, "snapshots": len(sim.states)}
    try:
        tr = _speed(cfg, sim)
    except TruncatedDomainError as exc:
        _print_summary("simulate", summary)
        raise NumericFailure(str(exc)) from exc
    pde.write_front_csv(tr, out / "front.csv")
    summary.update({"c_N": tr.fitted_speed, "fit_r2": tr.fit_r2, "trusted": tr.trusted, "level": tr.level,
                    "fit_window": f"{tr.fit_window[0]:.6g}..{tr.fit_window[1]:.6g}"})
    if sim.probe_x.size:
        with (out / "probes.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "C", "I", "V"])
            for k, t in enumerate(sim.probe_t):
                for q, x in enumerate(sim.probe_x):
                    w.writerow([fmt(t), fmt(x), *(fmt(v) for v in sim.probe_values[k, q])])
        if sim.config.kinetics == "full" and sim.config.params.coexistence():
            for q, x in enumerate(sim.probe_x):
                summary[f"wake_at_{x:g}"] = pde.wake_diagnostics(sim, q).verdict
    return summary


def cmd_speed(cfg: ExperimentConfig, out: Path) -> dict:
    return cmd_simulate(cfg, out, snapshots=False)


def cmd_table1(cfg: ExperimentConfig, out: Path) -> dict:
    t = cfg.table1
    rows = []
    for label, a, theta in TABLE1_ROWS:
        p = model.ModelParams(a, theta, 40.0 / 3.0, 0.025)
        crit = dispersion.find_critical_rhos(p)
        c_N = math.nan
        if t.simulate:
            sc = pde.SimConfig(p, domain_length=t.domain_length, nx=t.nx)
            c_N = pde.measure_front_speed(pde.simulate(sc), params=p).fitted_speed
        rows.append((label, theta, c_N, crit.c_m, crit.c_bar))
        print(f"  {label} theta={theta:g}: c_N={c_N:.4f} c_m={crit.c_m:.4f} c_bar={crit.c_bar:.4f}", flush=True)
    write_csv(out / "table1.csv", ["case", "theta", "c_N", "c_m", "c_bar"], rows)
    return {"rows": len(rows)}


HANDLERS = {
    "equilibria": cmd_equilibria,
    "bifurcation": cmd_bifurcation,
    "dispersion": cmd_dispersion,
    "envelope": cmd_envelope,
    "verify": cmd_verify,
    "fixedpoint": cmd_fixedpoint,
    "simulate": cmd_simulate,
    "speed": cmd_speed,
    "table1": cmd_table1,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oncowave", description="Travelling invasion waves of the oncolytic virus model.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="INI file; missing sections use defaults")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    ap.add_argument("--seed", type=int, default=None, help="seed recorded with the run (u64)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.run.seed = args.seed
        out = args.out / args.command
        out.mkdir(parents=True, exist_ok=True)
        if args.config:
            shutil.copyfile(args.config, out / "config.ini")
        (out / "resolved_config.ini").write_text(dump_config(cfg))
        summary = HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConstructionError, NoAdmissibleRhoError) as exc:
        print(f"construction refused: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OncowaveError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    _print_summary(args.command, summary)
    write_json(out / "summary.json", summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
