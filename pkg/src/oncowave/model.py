"""Oncolytic-virus reaction kinetics, equilibria and the theta bifurcation scan.

The non-dimensional system is

    C_t = D C_xx + C (1 - C - I) - C V
    I_t = D I_xx + C V - a I
    V_t =   V_xx + theta I - gamma V
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

NONHYPERBOLIC_TOL = 1e-8
HOPF_RTOL = 1e-6


@dataclass(frozen=True)
class DimensionalParams:
    """Model parameters in physical units."""

    D_cells: float
    D_virus: float
    r: float
    L: float
    beta: float
    eta: float
    b: float
    omega: float

    def __post_init__(self):
        for name, value in vars(self).items():
            if not (value > 0 and math.isfinite(value)):
                raise InvalidParameterError(f"{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True)
class ModelParams:
    """Non-dimensional parameters (a, theta, gamma, D)."""

    a: float
    theta: float
    gamma: float
    D: float

    def __post_init__(self):
        for name in ("a", "theta", "gamma", "D"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InvalidParameterError(f"{name} must be strictly positive, got {value!r}")

    def coexistence(self) -> bool:
        """True when the coexistence state E2 is biologically relevant (theta > a*gamma)."""
        return self.theta > self.a * self.gamma

    def with_theta(self, theta: float) -> "ModelParams":
        return ModelParams(self.a, theta, self.gamma, self.D)

    def as_dict(self) -> dict:
        return {"a": self.a, "theta": self.theta, "gamma": self.gamma, "D": self.D}


@dataclass
class Equilibrium:
    C: float
    I: float
    V: float
    label: str
    eigenvalues: np.ndarray
    stability: str
    relevant: bool = True

    @property
    def state(self) -> np.ndarray:
        return np.array([self.C, self.I, self.V])

    @property
    def max_real(self) -> float:
        return float(np.max(self.eigenvalues.real))


@dataclass
class BifurcationBranch:
    theta_grid: np.ndarray
    branch_values: np.ndarray  # shape (n, 3): C*, I*, V* of E2
    max_real: np.ndarray
    stability: list
    relevant: np.ndarray
    theta_t: float
    theta_H: float | None = None
    hopf_frequency: float | None = None
    notes: list = field(default_factory=list)


def nondimensionalize(p: DimensionalParams) -> ModelParams:
    """Map physical parameters onto (a, theta, gamma, D) with time scaled by r."""
    return ModelParams(
        a=p.eta / p.r,
        theta=p.eta * p.b * p.beta * p.L / p.r**2,
        gamma=p.omega / p.r,
        D=p.D_cells / p.D_virus,
    )


def reaction(state, p: ModelParams):
    """Reaction terms of the (C, I, V) system.

    Works elementwise on scalars or arrays; negative states are allowed.
    """
    C, I, V = state
    dC = C * (1.0 - C - I) - C * V
    dI = C * V - p.a * I
    dV = p.theta * I - p.gamma * V
    return dC, dI, dV


def jacobian(state, p: ModelParams) -> np.ndarray:
    C, I, V = (float(s) for s in state)
    return np.array(
        [
            [1.0 - 2.0 * C - I - V, -C, -C],
            [V, -p.a, C],
            [0.0, p.theta, -p.gamma],
        ]
    )


def classify(eigenvalues, tol: float = NONHYPERBOLIC_TOL) -> str:
    m = float(np.max(np.real(eigenvalues)))
    if abs(m) < tol:
        return "nonhyperbolic"
    return "stable" if m < 0 else "unstable"


def coexistence_state(p: ModelParams) -> tuple[float, float, float]:
    """Closed-form E2 = (C*, I*, V*); components may be negative below theta = a*gamma."""
    a, th, g = p.a, p.theta, p.gamma
    return a * g / th, g * (th - a * g) / (th * (g + th)), (th - a * g) / (g + th)


def _equilibrium(state, label, p, relevant=True) -> Equilibrium:
    eig = np.linalg.eigvals(jacobian(state, p))
    return Equilibrium(*state, label=label, eigenvalues=eig, stability=classify(eig), relevant=relevant)


def equilibria(p: ModelParams) -> list[Equilibrium]:
    """Return E0, E1 and E2 with eigenvalues and stability.

    E2 is always returned; ``relevant`` is False when any component is negative.
    """
    e2 = coexistence_state(p)
    return [
        _equilibrium((0.0, 0.0, 0.0), "E0", p),
        _equilibrium((1.0, 0.0, 0.0), "E1", p),
        _equilibrium(e2, "E2", p, relevant=min(e2) >= 0.0),
    ]


def _complex_pair_real(p: ModelParams) -> float:
    """Real part of the complex-conjugate eigenvalue pair of E2, NaN if all are real."""
    eig = np.linalg.eigvals(jacobian(coexistence_state(p), p))
    cplx = eig[np.abs(eig.imag) > 1e-12]
    if cplx.size == 0:
        return math.nan
    return float(np.max(cplx.real))


def bifurcation_scan(p: ModelParams, theta_range=(1.0, 300.0), n_samples: int = 256) -> BifurcationBranch:
    """Scan E2 over theta, locate the transcritical point and a Hopf point.

    ``theta_t`` is the closed form a*gamma. The Hopf point is bracketed on the
    coarse grid by a sign change in the real part of the complex pair of E2
    (among biologically relevant samples) and refined by bisection to a
    relative tolerance of 1e-6.
    """
    lo, hi = theta_range
    if not (0 < lo < hi):
        raise InvalidParameterError("theta_range must be positive and increasing")
    if n_samples < 16:
        raise InvalidParameterError("n_samples must be at least 16")

    thetas = np.linspace(lo, hi, n_samples)
    values = np.empty((n_samples, 3))
    max_real = np.empty(n_samples)
    pair_real = np.empty(n_samples)
    stability = []
    relevant = np.empty(n_samples, dtype=bool)
    for k, th in enumerate(thetas):
        q = p.with_theta(float(th))
        e2 = coexistence_state(q)
        eig = np.linalg.eigvals(jacobian(e2, q))
        values[k] = e2
        max_real[k] = np.max(eig.real)
        pair_real[k] = _complex_pair_real(q)
        stability.append(classify(eig))
        relevant[k] = th > p.a * p.gamma

    branch = BifurcationBranch(
        theta_grid=thetas,
        branch_values=values,
        max_real=max_real,
        stability=stability,
        relevant=relevant,
        theta_t=p.a * p.gamma,
    )
    if not relevant.any():
        branch.notes.append("no relevant E2 in range")
        return branch

    def g(th):
        return _complex_pair_real(p.with_theta(th))

    for k in range(n_samples - 1):
        if not (relevant[k] and relevant[k + 1]):
            continue
        g0, g1 = pair_real[k], pair_real[k + 1]
        if math.isnan(g0) or math.isnan(g1):
            continue
        if g0 == 0.0:
            branch.theta_H = float(thetas[k])
            break
        if g0 * g1 < 0:
            a_, b_ = float(thetas[k]), float(thetas[k + 1])
            while b_ - a_ > HOPF_RTOL * a_ * 1e-2:
                mid = 0.5 * (a_ + b_)
                gm = g(mid)
                if math.isnan(gm) or gm * g0 > 0:
                    a_ = mid
                else:
                    b_ = mid
            branch.theta_H = 0.5 * (a_ + b_)
            break
    if branch.theta_H is not None:
        eig = np.linalg.eigvals(jacobian(coexistence_state(p.with_theta(branch.theta_H)), p.with_theta(branch.theta_H)))
        branch.hopf_frequency = float(np.max(np.abs(eig.imag)))
    return branch
