"""Direct 1-D simulation of the (C, I, V) system with zero-flux boundaries.

Semi-implicit Euler: diffusion is backward Euler (one tridiagonal solve per
component and step), kinetics are explicit. The discrete Laplacian uses a
ghost-point Neumann closure, so the trapezoid-weighted integral of each
component changes only through the kinetics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from .dispersion import minimize_S
from .errors import InvalidParameterError, SimulationError, TruncatedDomainError
from .model import ModelParams, coexistence_state

BLOWUP = 1e6
KINETICS = {"full": 0, "none": 1, "fisher": 2}


@dataclass
class InitialCondition:
    """Uniform background (C0, I0, V=0) plus a seed at the left boundary.

    ``seed`` names the seeded component; the Fisher check seeds C on a zero
    background instead of V. ``shape`` is "gaussian" (half-Gaussian) or
    "step" (compact support, no tail ahead of the front).
    """

    V_amplitude: float = 1.0
    V_width: float | None = None  # default 2% of the domain
    V_center: float = 0.0
    C0: float = 1.0
    I0: float = 0.0
    seed: str = "V"
    shape: str = "gaussian"

    def sample(self, x: np.ndarray, domain_length: float):
        width = self.V_width if self.V_width is not None else 0.02 * domain_length
        if not width > 0:
            raise InvalidParameterError("seed width must be positive")
        if self.shape == "gaussian":
            bump = self.V_amplitude * np.exp(-(((x - self.V_center) / width) ** 2))
        elif self.shape == "step":
            bump = np.where(np.abs(x - self.V_center) <= width, self.V_amplitude, 0.0)
        else:
            raise InvalidParameterError("shape must be 'gaussian' or 'step'")
        C = np.full_like(x, self.C0)
        I = np.full_like(x, self.I0)
        V = np.zeros_like(x)
        if self.seed == "V":
            V += bump
        elif self.seed == "C":
            C += bump
        else:
            raise InvalidParameterError("seed must be 'V' or 'C'")
        return C, I, V


@dataclass
class SimConfig:
    params: ModelParams
    domain_length: float = 400.0
    nx: int = 4000
    t_end: float | None = None
    dt: float | None = None
    snapshot_times: list | None = None
    ic: InitialCondition = field(default_factory=InitialCondition)
    kinetics: str = "full"
    n_snapshots: int = 81
    probes: tuple = ()
    probe_dt: float = 0.05

    def __post_init__(self):
        if self.nx < 64:
            raise InvalidParameterError("nx must be at least 64")
        if not self.domain_length > 0:
            raise InvalidParameterError("domain_length must be positive")
        if self.kinetics not in KINETICS:
            raise InvalidParameterError(f"kinetics must be one of {sorted(KINETICS)}")
        if self.dt is not None and not 0 < self.dt <= self.dt_max:
            raise InvalidParameterError(f"dt must lie in (0, {self.dt_max:.4g}] for explicit kinetics")

    @property
    def dx(self) -> float:
        return self.domain_length / (self.nx - 1)

    @property
    def dt_max(self) -> float:
        """Explicit-kinetics limit 0.1 / (largest rate); only the logistic rate matters without the virus."""
        p = self.params
        if self.kinetics != "full":
            return 0.1
        return 0.1 / max(p.gamma, p.theta, p.a, 1.0)

    def resolved_t_end(self) -> float:
        if self.t_end is not None:
            return float(self.t_end)
        p = self.params
        if self.kinetics == "fisher":
            speed = 2.0 * math.sqrt(p.D)
        elif self.kinetics == "none":
            return 10.0
        else:
            speed = minimize_S(p)[1]
        return 0.7 * self.domain_length / speed

    def resolved_snapshots(self) -> np.ndarray:
        if self.snapshot_times is not None:
            ts = np.asarray(sorted(self.snapshot_times), dtype=float)
            if ts[0] < 0:
                raise InvalidParameterError("snapshot times must be nonnegative")
            return ts
        return np.linspace(0.0, self.resolved_t_end(), self.n_snapshots)


@dataclass
class SimState:
    t: float
    x: np.ndarray
    C: np.ndarray
    I: np.ndarray
    V: np.ndarray

    def component(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass
class SimRun:
    config: SimConfig
    states: list
    probe_x: np.ndarray
    probe_t: np.ndarray
    probe_values: np.ndarray  # (n_times, n_probes, 3)
    dt: float


# --------------------------------------------------------------------------
# kernel


def _thomas_factor(n: int, r: float):
    """Forward-elimination coefficients of I - r * Lap (Neumann rows -2, 2)."""
    sub = np.full(n, -r)
    sup = np.full(n, -r)
    sup[0] = -2.0 * r
    sub[-1] = -2.0 * r
    diag = 1.0 + 2.0 * r
    cp = np.empty(n)
    den = np.empty(n)
    den[0] = diag
    cp[0] = sup[0] / diag
    for i in range(1, n):
        den[i] = diag - sub[i] * cp[i - 1]
        cp[i] = sup[i] / den[i] if i < n - 1 else 0.0
    return sub, cp, den


@numba.njit(cache=True)
def _solve(rhs, sub, cp, den, out):
    n = rhs.size
    out[0] = rhs[0] / den[0]
    for i in range(1, n):
        out[i] = (rhs[i] - sub[i] * out[i - 1]) / den[i]
    for i in range(n - 2, -1, -1):
        out[i] -= cp[i] * out[i + 1]


@numba.njit(cache=True)
def _advance(C, I, V, nsteps, dt, a, theta, gamma, mode, fc, fv, probe_idx, probe_every, step0, probes, k0):
    """Advance nsteps; returns (failed_step or -1, probe count)."""
    n = C.size
    rc = np.empty(n)
    ri = np.empty(n)
    rv = np.empty(n)
    k = k0
    for s in range(nsteps):
        for j in range(n):
            c, i_, v = C[j], I[j], V[j]
            if mode == 0:
                rc[j] = c + dt * (c * (1.0 - c - i_) - c * v)
                ri[j] = i_ + dt * (c * v - a * i_)
                rv[j] = v + dt * (theta * i_ - gamma * v)
            elif mode == 2:
                rc[j] = c + dt * c * (1.0 - c)
                ri[j] = i_
                rv[j] = v
            else:
                rc[j] = c
                ri[j] = i_
                rv[j] = v
        _solve(rc, fc[0], fc[1], fc[2], C)
        _solve(ri, fc[0], fc[1], fc[2], I)
        _solve(rv, fv[0], fv[1], fv[2], V)
        bad = False
        for j in range(n):
            m = max(abs(C[j]), abs(I[j]), abs(V[j]))
            if not m <= 1e6:
                bad = True
        if bad:
            return s, k
        if probe_every > 0 and (step0 + s + 1) % probe_every == 0 and k < probes.shape[0]:
            for q in range(probe_idx.size):
                probes[k, q, 0] = C[probe_idx[q]]
                probes[k, q, 1] = I[probe_idx[q]]
                probes[k, q, 2] = V[probe_idx[q]]
            k += 1
    return -1, k


def run(cfg: SimConfig) -> SimRun:
    """Run a simulation and return snapshots plus station time series."""
    p = cfg.params
    x = np.linspace(0.0, cfg.domain_length, cfg.nx)
    C, I, V = (np.ascontiguousarray(u, dtype=float) for u in cfg.ic.sample(x, cfg.domain_length))
    if cfg.kinetics == "fisher":
        I[:] = 0.0
        V[:] = 0.0
    snaps = cfg.resolved_snapshots()
    dt_cap = cfg.dt if cfg.dt is not None else cfg.dt_max

    # one step size for the whole run keeps a single factorisation
    span = snaps[-1]
    nsteps_total = max(1, int(math.ceil(span / dt_cap - 1e-9)))
    dt = span / nsteps_total if span > 0 else dt_cap
    step_at = np.rint(snaps / dt).astype(np.int64)

    r_cell = p.D * dt / cfg.dx**2
    r_virus = dt / cfg.dx**2
    fc = _thomas_factor(cfg.nx, r_cell)
    fv = _thomas_factor(cfg.nx, r_virus)

    probe_x = np.asarray(cfg.probes, dtype=float)
    probe_idx = np.rint(probe_x / cfg.dx).astype(np.int64).clip(0, cfg.nx - 1)
    probe_every = max(1, int(round(cfg.probe_dt / dt))) if probe_x.size else 0
    n_probe = nsteps_total // probe_every + 1 if probe_every else 0
    probes = np.zeros((n_probe, probe_x.size, 3))
    mode = KINETICS[cfg.kinetics]

    states = []
    step = 0
    k = 0
    for ts, target in zip(snaps, step_at):
        if target > step:
            failed, k = _advance(C, I, V, int(target - step), dt, p.a, p.theta, p.gamma, mode, fc, fv,
                                 probe_idx, probe_every, step, probes, k)
            if failed >= 0:
                t_fail = (step + failed + 1) * dt
                raise SimulationError(f"solution exceeded {BLOWUP:g} or became non-finite at t={t_fail:.6g}", t=t_fail)
            step = int(target)
        states.append(SimState(float(ts), x, C.copy(), I.copy(), V.copy()))
    probe_t = (np.arange(1, k + 1) * probe_every * dt) if probe_every else np.zeros(0)
    return SimRun(cfg, states, probe_x, probe_t, probes[:k], dt)


def simulate(cfg: SimConfig) -> list:
    return run(cfg).states


def fisher_config(p: ModelParams, **kw) -> SimConfig:
    """I = V = 0 with a compact C seed on an empty background; the C front moves at 2 sqrt(D)."""
    kw.setdefault("ic", InitialCondition(C0=0.0, seed="C", shape="step"))
    return SimConfig(p, kinetics="fisher", **kw)


def total_mass(state: SimState) -> np.ndarray:
    """Trapezoid integrals of (C, I, V); exactly conserved by the diffusion step."""
    return np.array([np.trapezoid(u, state.x) for u in (state.C, state.I, state.V)])


# --------------------------------------------------------------------------
# front tracking


@dataclass
class FrontTrace:
    times: np.ndarray
    front_positions: np.ndarray
    fitted_speed: float
    fit_window: tuple
    fit_r2: float
    level: float
    component: str

    @property
    def trusted(self) -> bool:
        return self.fit_r2 >= 0.99


def default_level(p: ModelParams, states=None, component: str = "V") -> float:
    if component == "V" and p.coexistence():
        return 0.5 * coexistence_state(p)[2]
    if states is None:
        raise InvalidParameterError("need states to pick a level without a coexistence state")
    return 0.1 * max(float(np.max(s.component(component))) for s in states)


def front_position(x: np.ndarray, u: np.ndarray, level: float) -> float:
    """Largest x at which u crosses ``level``, linearly interpolated; NaN if none."""
    above = u >= level
    idx = np.flatnonzero(above[:-1] & ~above[1:])
    if idx.size == 0:
        return float(x[-1]) if above[-1] else math.nan
    j = idx[-1]
    u0, u1 = u[j], u[j + 1]
    return float(x[j] + (level - u0) / (u1 - u0) * (x[j + 1] - x[j]))


def measure_front_speed(states, level: float | None = None, component: str = "V", params: ModelParams | None = None,
                        margin: float = 0.05) -> FrontTrace:
    """Least-squares front speed over the last half of the time window."""
    if level is None:
        if params is None:
            raise InvalidParameterError("pass either level or params")
        level = default_level(params, states, component)
    times = np.array([s.t for s in states])
    pos = np.array([front_position(s.x, s.component(component), level) for s in states])
    t_a = times[0] + 0.5 * (times[-1] - times[0])
    sel = (times >= t_a) & np.isfinite(pos)
    if sel.sum() < 10:
        raise InvalidParameterError("need at least 10 snapshots with a detectable front in the fit window")
    x_end = states[0].x[-1]
    if np.nanmax(pos[sel]) > (1.0 - margin) * x_end:
        raise TruncatedDomainError(f"front reached {np.nanmax(pos[sel]):.4g}, within {margin:.0%} of the boundary")
    t, xf = times[sel], pos[sel]
    slope, icpt = np.polyfit(t, xf, 1)
    fit = slope * t + icpt
    ss_res = float(np.sum((xf - fit) ** 2))
    ss_tot = float(np.sum((xf - xf.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return FrontTrace(times, pos, float(slope), (float(t[0]), float(t[-1])), r2, level, component)


# --------------------------------------------------------------------------
# wake behaviour at a fixed station


@dataclass
class WakeReport:
    station: float
    arrival: float
    sign_changes: int
    extrema_times: np.ndarray
    extrema_amplitudes: np.ndarray  # |V - V*| at significant extrema
    peak_deviation: np.ndarray
    trough_deviation: np.ndarray
    final_distance: float  # sup-norm distance to E2 at the end of the record
    verdict: str


def wake_diagnostics(sim: SimRun, station_index: int = 0, rel_tol: float = 1e-3, decay_ratio: float = 0.75) -> WakeReport:
    """Classify the V time series at a probe station after the front passes.

    Extrema of V whose deviation from V* is below ``rel_tol * V*`` are
    ignored as noise. With fewer than 3 remaining sign changes of dV/dt
    the verdict is "monotone". Otherwise the deviations of the maxima
    (above V*) and of the minima (below V*) are followed separately; if
    both shrink to at most ``decay_ratio`` of their first value the wake
    is "decaying", else "sustained".
    """
    p = sim.config.params
    e2 = np.array(coexistence_state(p))
    t = sim.probe_t
    vals = sim.probe_values[:, station_index, :]
    V = vals[:, 2]
    hit = np.flatnonzero(V >= 0.5 * e2[2])
    empty = np.zeros(0)
    if hit.size == 0:
        return WakeReport(float(sim.probe_x[station_index]), math.nan, 0, empty, empty, empty, empty, math.nan, "no-arrival")
    start = hit[0]
    tt, VV = t[start:], V[start:]
    dV = np.diff(VV)
    ext = np.flatnonzero(dV[:-1] * dV[1:] < 0) + 1
    ext = ext[np.abs(VV[ext] - e2[2]) > rel_tol * e2[2]]
    dev = VV[ext] - e2[2]
    peaks, troughs = dev[dev > 0], -dev[dev < 0]
    n = int(ext.size)
    if n < 3:
        verdict = "monotone"
    elif peaks.size >= 2 and troughs.size >= 2 and peaks[-1] <= decay_ratio * peaks[0] and troughs[-1] <= decay_ratio * troughs[0]:
        verdict = "decaying"
    else:
        verdict = "sustained"
    final = float(np.max(np.abs(vals[-1] - e2)))
    return WakeReport(float(sim.probe_x[station_index]), float(tt[0]), n, tt[ext], np.abs(dev), peaks, troughs, final, verdict)


# --------------------------------------------------------------------------
# export


def write_snapshot_csv(state: SimState, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["xi", "C", "I", "V"])
        for row in zip(state.x, state.C, state.I, state.V):
            w.writerow([f"{v:.17g}" for v in row])


def write_front_csv(trace: FrontTrace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "front"])
        for t, xf in zip(trace.times, trace.front_positions):
            w.writerow([f"{t:.17g}", f"{xf:.17g}"])
