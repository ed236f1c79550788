"""Upper/lower solutions, the integral operator T and its Picard iteration.

Everything here works in travelling-wave coordinates xi = x + c t with
B = 1 - C, so the invaded tumour state is (B, I, V) = (0, 0, 0) at
xi -> -infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .dispersion import CriticalPoints, find_critical_rhos, speed_curve_S
from .errors import (
    ConstructionError,
    FoggyRegimeError,
    NoAdmissibleRhoError,
    ResidualViolation,
    SandwichError,
)
from .model import ModelParams
from .roots import sign_change_roots

RESIDUAL_TOL = 1e-10
SANDWICH_TOL = 1e-8


# --------------------------------------------------------------------------
# travelling-wave kinetics in (B, I, V)


def kinetics_B(B, I, V, p: ModelParams):
    """Right-hand side f(U) of D U'' - c U' = -f(U)."""
    f1 = -B + B * B - B * I - B * V + I + V
    f2 = -p.a * I + (1.0 - B) * V
    f3 = p.theta * I - p.gamma * V
    return f1, f2, f3


def shift_alpha(p: ModelParams) -> float:
    """Shift making each F_i = alpha*U_i + f_i nondecreasing in its own variable on the sandwich."""
    return max(p.gamma, p.a, 2.0 + p.theta / p.gamma)


# --------------------------------------------------------------------------
# envelope construction


def select_rho_for_speed(c: float, p: ModelParams, crit: CriticalPoints, xtol: float = 1e-12) -> float:
    """Smallest rho in (0, rho_bar) with S(rho) = c."""
    if not c > crit.c_bar:
        raise NoAdmissibleRhoError(f"c={c} must exceed c_bar={crit.c_bar}")
    grid = np.logspace(-4, math.log10(crit.rho_bar), 4000)

    def g(r):
        return speed_curve_S(r, p) - c

    roots = [r for r, kind in sign_change_roots(g, grid, xtol=xtol) if kind == "crossing"]
    if not roots:
        raise NoAdmissibleRhoError(f"S(rho) = {c} has no root on (0, rho_bar)")
    return float(roots[0])


@dataclass
class WaveEnvelope:
    """Closed-form upper/lower solution pair for one speed ``c``."""

    params: ModelParams
    c: float
    rho: float
    eps: float
    c_eps: float
    kappa: float
    kappa_max: float
    alpha: float
    A1: float
    A2: float
    A2_eps: float
    xi_bar1: float
    xi_bar2: float
    xi_bar3: float
    xi_lo2: float
    xi_lo3: float
    mu: float
    mu_max: float
    c_requested: float
    crit: CriticalPoints | None = None
    notes: list = field(default_factory=list)

    @property
    def rho_eps(self) -> float:
        return self.rho + self.eps

    @property
    def transition_points(self) -> tuple:
        return (self.xi_bar1, self.xi_bar2, self.xi_bar3, self.xi_lo2, self.xi_lo3)

    @property
    def kernel_rates(self) -> dict:
        """Exponents of the Green's kernels for the B/I (D) and V (unit) equations."""
        p, c, al = self.params, self.c, self.alpha
        wd = math.sqrt(c * c + 4.0 * al * p.D)
        w1 = math.sqrt(c * c + 4.0 * al)
        return {
            "delta1": (c - wd) / (2.0 * p.D),
            "delta2": (c + wd) / (2.0 * p.D),
            "sigma1": (c - wd) / (2.0 * p.D),
            "sigma2": (c + wd) / (2.0 * p.D),
            "zeta1": (c - w1) / 2.0,
            "zeta2": (c + w1) / 2.0,
        }

    def as_dict(self) -> dict:
        out = {
            k: getattr(self, k)
            for k in (
                "c", "c_requested", "rho", "eps", "c_eps", "kappa", "kappa_max", "alpha",
                "A1", "A2", "A2_eps", "xi_bar1", "xi_bar2", "xi_bar3", "xi_lo2", "xi_lo3", "mu", "mu_max",
            )
        }
        out.update(self.params.as_dict())
        out["notes"] = list(self.notes)
        return out


def build_envelope(
    c: float | None,
    p: ModelParams,
    eps: float | None = None,
    kappa_frac: float = 0.5,
    crit: CriticalPoints | None = None,
    rho: float | None = None,
) -> WaveEnvelope:
    """Build upper and lower solutions for speed ``c``.

    With ``c=None`` the decay rate defaults to 0.9*rho_bar. ``eps`` defaults
    to min(0.05*rho, (rho_bar - rho)/2). The returned ``c`` is S(rho)
    evaluated at the resolved rho, so the characteristic relation holds to
    rounding error; the requested value is kept in ``c_requested``.
    """
    if not 0.0 < kappa_frac < 1.0:
        raise ConstructionError("kappa_frac must lie in (0, 1)")
    crit = crit or find_critical_rhos(p)
    notes = []
    if rho is None:
        if c is None:
            rho = 0.9 * crit.rho_bar
            notes.append("rho defaulted to 0.9*rho_bar")
        else:
            rho = select_rho_for_speed(c, p, crit)
    if crit.case == 4 and crit.rho_star < rho < crit.rho_m:
        raise FoggyRegimeError(f"rho={rho} lies in the undecided interval ({crit.rho_star}, {crit.rho_m})")
    if not 0.0 < rho < crit.rho_bar:
        raise NoAdmissibleRhoError(f"rho={rho} must lie in (0, rho_bar={crit.rho_bar})")
    c_req = c if c is not None else float(speed_curve_S(rho, p))
    c = float(speed_curve_S(rho, p))

    if eps is None:
        eps = min(0.05 * rho, 0.5 * (crit.rho_bar - rho))
        notes.append(f"eps defaulted to {eps:.6g} (heuristic; only 'sufficiently small' is required)")
    if not eps > 0:
        raise ConstructionError("eps must be positive")
    rho_eps = rho + eps
    if rho_eps > crit.rho_bar:
        raise ConstructionError(f"rho+eps={rho_eps} exceeds rho_bar={crit.rho_bar}")
    c_eps = float(speed_curve_S(rho_eps, p))
    if not crit.c_bar < c_eps < c:
        raise ConstructionError(f"need c_bar < c_eps < c, got c_bar={crit.c_bar}, c_eps={c_eps}, c={c}")

    D, a = p.D, p.a
    q_a = c * rho + a - D * rho**2
    q_1 = c * rho + 1.0 - D * rho**2
    if not q_a > 0:
        raise ConstructionError("c*rho + a - D*rho^2 > 0 violated (lambda2 > D rho^2 - a)")
    if not q_1 > 0:
        raise ConstructionError("c*rho + 1 - D*rho^2 > 0 violated (H1 condition: nu2 positivity)")
    if c < D * rho:
        raise ConstructionError("c >= D*rho violated (H3 condition)")
    if q_a > p.theta / p.gamma:
        raise ConstructionError("c*rho + a - D*rho^2 <= theta/gamma violated (H4 condition)")
    q_eps = c_eps * rho_eps + a - D * rho_eps**2
    if not q_eps > 0:
        raise ConstructionError("c_eps*(rho+eps) + a - D*(rho+eps)^2 > 0 violated")

    A1 = (c * rho + a + 1.0 - D * rho**2) / (q_a * q_1)
    A2 = 1.0 / q_a
    A2_eps = 1.0 / q_eps
    kappa_max = min(1.0, q_a / q_eps)
    kappa = kappa_frac * kappa_max

    xi_bar1 = -math.log(A1) / rho
    xi_bar2 = math.log(q_a) / rho
    xi_bar3 = math.log(p.theta / p.gamma) / rho
    xi_lo2 = math.log(kappa * q_eps / q_a) / eps
    xi_lo3 = math.log(kappa) / eps
    if not xi_bar1 <= xi_bar2 + 1e-12:
        raise ConstructionError("xi_bar1 <= xi_bar2 violated (A1 >= A2)")
    if not xi_bar2 <= xi_bar3 + 1e-12:
        raise ConstructionError("xi_bar2 <= xi_bar3 violated (H4 condition)")
    if not (xi_lo2 < 0 and xi_lo3 < 0):
        raise ConstructionError("lower transition points must be negative (kappa bound)")

    alpha = shift_alpha(p)
    env = WaveEnvelope(
        params=p, c=c, rho=rho, eps=eps, c_eps=c_eps, kappa=kappa, kappa_max=kappa_max, alpha=alpha,
        A1=A1, A2=A2, A2_eps=A2_eps, xi_bar1=xi_bar1, xi_bar2=xi_bar2, xi_bar3=xi_bar3,
        xi_lo2=xi_lo2, xi_lo3=xi_lo3, mu=0.0, mu_max=0.0, c_requested=c_req, crit=crit, notes=notes,
    )
    k = env.kernel_rates
    env.mu_max = min(-k["delta1"], k["delta2"], -k["zeta1"], k["zeta2"])
    env.mu = 0.5 * env.mu_max
    assert 0.0 < env.mu < env.mu_max
    return env


# --------------------------------------------------------------------------
# evaluation and exact derivatives


def _upper_parts(xi, env: WaveEnvelope):
    """Values and first/second derivatives of the upper solution."""
    xi = np.asarray(xi, dtype=float)
    r = env.rho
    e = np.exp(r * np.minimum(xi, env.xi_bar3 + 1.0))
    out = []
    for amp, xt, top in ((env.A1, env.xi_bar1, 1.0), (env.A2, env.xi_bar2, 1.0), (1.0, env.xi_bar3, env.params.theta / env.params.gamma)):
        low = xi <= xt
        val = np.where(low, amp * e, top)
        d1 = np.where(low, r * amp * e, 0.0)
        d2 = np.where(low, r * r * amp * e, 0.0)
        out.append((val, d1, d2))
    return out


def _lower_parts(xi, env: WaveEnvelope):
    xi = np.asarray(xi, dtype=float)
    r, re = env.rho, env.rho_eps
    # exponentials are capped past the transition points, where the branch is zero anyway
    e1 = np.exp(r * np.minimum(xi, 0.0))
    e2 = np.exp(re * np.minimum(xi, 0.0))
    zero = np.zeros_like(xi)
    low_i = xi < env.xi_lo2
    k, A2, A2e = env.kappa, env.A2, env.A2_eps
    I = np.where(low_i, k * A2 * e1 - A2e * e2, 0.0)
    dI = np.where(low_i, r * k * A2 * e1 - re * A2e * e2, 0.0)
    ddI = np.where(low_i, r * r * k * A2 * e1 - re * re * A2e * e2, 0.0)
    low_v = xi < env.xi_lo3
    V = np.where(low_v, k * e1 - e2, 0.0)
    dV = np.where(low_v, r * k * e1 - re * e2, 0.0)
    ddV = np.where(low_v, r * r * k * e1 - re * re * e2, 0.0)
    return [(zero, zero, zero), (I, dI, ddI), (V, dV, ddV)]


def eval_upper(xi, env: WaveEnvelope):
    return tuple(part[0] for part in _upper_parts(xi, env))


def eval_lower(xi, env: WaveEnvelope):
    return tuple(np.maximum(part[0], 0.0) for part in _lower_parts(xi, env))


def _residuals(parts, env, linear):
    p, c = env.params, env.c
    (B, dB, ddB), (I, dI, ddI), (V, dV, ddV) = parts
    if linear:
        f1 = -B + I + V
        f2 = -p.a * I + V
    else:
        f1, f2, _ = kinetics_B(B, I, V, p)
    f3 = p.theta * I - p.gamma * V
    return (c * dB - p.D * ddB - f1, c * dI - p.D * ddI - f2, c * dV - ddV - f3)


def residuals_upper(env: WaveEnvelope, grid, linear: bool = False):
    """Residuals c U' - diag(D, D, 1) U'' - f(U) of the upper solution (should be >= 0).

    With ``linear=True`` f is replaced by its linearisation at the origin.
    """
    return _residuals(_upper_parts(grid, env), env, linear)


def residuals_lower(env: WaveEnvelope, grid, linear: bool = False):
    """Residuals of the lower solution (should be <= 0)."""
    return _residuals(_lower_parts(grid, env), env, linear)


def residual_grid(env: WaveEnvelope, n: int = 20001, span: float | None = None) -> np.ndarray:
    """Uniform grid around the transition points with a half-spacing gap at each kink."""
    pts = env.transition_points
    if span is None:
        span = 30.0 / env.rho
    lo, hi = min(pts) - span, max(pts) + span
    xi = np.linspace(lo, hi, n)
    h = xi[1] - xi[0]
    keep = np.ones(n, dtype=bool)
    for x0 in pts:
        keep &= np.abs(xi - x0) >= 0.5 * h
    return xi[keep]


@dataclass
class ResidualReport:
    kind: str
    min_residual: tuple
    max_residual: tuple
    passed: bool
    worst_xi: float
    worst_component: int
    worst_value: float

    def raise_if_failed(self):
        if not self.passed:
            raise ResidualViolation(
                f"{self.kind} residual {self.worst_value:.3e} in component {self.worst_component} at xi={self.worst_xi:.6g}",
                xi=self.worst_xi, component=self.worst_component, value=self.worst_value,
            )


def check_residuals(env: WaveEnvelope, grid=None, tol: float = RESIDUAL_TOL) -> tuple:
    """Run the sign suites for both solutions; returns (upper_report, lower_report)."""
    if grid is None:
        grid = residual_grid(env)
    reports = []
    for kind, res, sign in (("upper", residuals_upper(env, grid), 1.0), ("lower", residuals_lower(env, grid), -1.0)):
        # sign-normalise so that a valid residual is >= 0
        scaled = [sign * r for r in res]
        worst = [float(np.min(s)) for s in scaled]
        comp = int(np.argmin(worst))
        idx = int(np.argmin(scaled[comp]))
        reports.append(
            ResidualReport(
                kind=kind,
                min_residual=tuple(float(np.min(r)) for r in res),
                max_residual=tuple(float(np.max(r)) for r in res),
                passed=min(worst) >= -tol,
                worst_xi=float(grid[idx]),
                worst_component=comp,
                worst_value=sign * worst[comp],
            )
        )
    return tuple(reports)


# --------------------------------------------------------------------------
# sampled profiles and the operator T


@dataclass
class Profile:
    grid: np.ndarray
    B: np.ndarray
    I: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        n = self.grid.size
        for name in ("B", "I", "V"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have the grid's length {n}")
            setattr(self, name, arr)
        d = np.diff(self.grid)
        if n < 3 or np.any(d <= 0) or np.ptp(d) > 1e-9 * abs(d[0]):
            raise ValueError("profile grid must be uniform and strictly increasing")

    @property
    def h(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def stack(self) -> np.ndarray:
        return np.vstack([self.B, self.I, self.V])

    def copy(self) -> "Profile":
        return Profile(self.grid.copy(), self.B.copy(), self.I.copy(), self.V.copy())


def default_grid(env: WaveEnvelope, n: int = 4096, resolve_kernels: bool = True) -> np.ndarray:
    """Symmetric grid [-L, L] with exp(-rho L) < 1e-12 and xi_bar3 < L/2.

    With ``resolve_kernels`` the point count is raised above ``n`` when
    needed so that every kernel rate times the spacing is at most 1.
    """
    L = max(math.log(1e12) / env.rho, 2.0 * env.xi_bar3, 2.0 * abs(min(env.transition_points))) * 1.05
    if resolve_kernels:
        fastest = max(abs(v) for v in env.kernel_rates.values())
        n = max(n, int(math.ceil(2.0 * L * fastest)) + 1)
    return np.linspace(-L, L, n)


def upper_profile(env: WaveEnvelope, grid) -> Profile:
    return Profile(grid, *eval_upper(grid, env))


def lower_profile(env: WaveEnvelope, grid) -> Profile:
    return Profile(grid, *eval_lower(grid, env))


def in_sandwich(profile: Profile, env: WaveEnvelope, tol: float = SANDWICH_TOL):
    """Largest violation of lower <= profile <= upper (<= tol means inside)."""
    up = eval_upper(profile.grid, env)
    lo = eval_lower(profile.grid, env)
    worst = 0.0
    for u, l, x in zip(up, lo, (profile.B, profile.I, profile.V)):
        worst = max(worst, float(np.max(x - u)), float(np.max(l - x)))
    return worst <= tol, worst


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _product_weights(lam: float, h: float):
    """Weights (w0, w1, w2) for int_0^h exp(lam*s) g(s) ds.

    g is the linear interpolant between g(0) (w0) and g(h) (w1) plus the
    curvature term -s(h-s)/2 * g'' (w2). Gauss-Legendre makes the weights
    accurate for any lam*h without cancellation.
    """
    s = 0.5 * h * (_GL_NODES + 1.0)
    k = 0.5 * h * _GL_WEIGHTS * np.exp(lam * s)
    w0 = float(np.sum(k * (1.0 - s / h)))
    w1 = float(np.sum(k * s / h))
    w2 = float(np.sum(k * (-0.5 * s * (h - s))))
    return w0, w1, w2


def _second_diff(F: np.ndarray, h: float, left_rate=None) -> np.ndarray:
    d2 = np.zeros_like(F)
    d2[1:-1] = (F[2:] - 2.0 * F[1:-1] + F[:-2]) / (h * h)
    if left_rate is not None:
        d2[0] = (F[1] - 2.0 * F[0] + F[0] * math.exp(-left_rate * h)) / (h * h)
    return d2


def _green_apply(F, h, lam_left, lam_right, prefactor, left_rate=None) -> np.ndarray:
    """prefactor * (int_{-inf}^xi e^{lam_left (xi-eta)} F + int_xi^inf e^{lam_right (xi-eta)} F).

    Product integration of a curvature-corrected piecewise-linear F against
    the exact kernels. Right of the grid F equals its last sample. Left of
    the grid F is zero, or F[0] * exp(left_rate * (eta - xi_0)) when
    ``left_rate`` is given. Both tails are integrated in closed form.
    """
    d2 = _second_diff(F, h, left_rate)
    d2m = 0.5 * (d2[1:] + d2[:-1])

    qL = math.exp(lam_left * h)
    w0, w1, w2 = _product_weights(lam_left, h)
    g = np.empty_like(F)
    g[0] = 0.0 if left_rate is None else F[0] / (left_rate - lam_left)
    g[1:] = w0 * F[1:] + w1 * F[:-1] + w2 * d2m
    left = lfilter([1.0], [1.0, -qL], g)

    qR = math.exp(-lam_right * h)
    w0, w1, w2 = _product_weights(-lam_right, h)
    Fr = F[::-1]
    g = np.empty_like(F)
    g[0] = Fr[0] / lam_right
    g[1:] = w0 * Fr[1:] + w1 * Fr[:-1] + w2 * d2m[::-1]
    right = lfilter([1.0], [1.0, -qR], g)[::-1]
    return prefactor * (left + right)


def operator_T(
    profile: Profile, env: WaveEnvelope, check: bool = True, tol: float = SANDWICH_TOL, left_tail: str = "exponential"
) -> Profile:
    """Apply the variation-of-parameters operator T to a sampled profile.

    Parameters
    ----------
    profile : Profile
        Sampled (B, I, V) on a uniform grid.
    env : WaveEnvelope
        Supplies c, alpha and the sandwich.
    check : bool
        Raise SandwichError if ``profile`` is not between the lower and
        upper solutions (within ``tol``).
    left_tail : {"exponential", "zero"}
        Extension of the integrand left of the grid. "exponential" continues
        it as exp(rho * xi), the decay of the wave, so that truncation does
        not erode the leading edge; "zero" uses the far-field value.
    """
    if left_tail not in ("exponential", "zero"):
        raise ValueError("left_tail must be 'exponential' or 'zero'")
    rate = env.rho if left_tail == "exponential" else None
    if check:
        ok, worst = in_sandwich(profile, env, tol)
        if not ok:
            raise SandwichError(f"profile leaves the sandwich by {worst:.3e}")
    p, al = env.params, env.alpha
    f1, f2, f3 = kinetics_B(profile.B, profile.I, profile.V, p)
    k = env.kernel_rates
    c = env.c
    h = profile.h
    wd = math.sqrt(c * c + 4.0 * al * p.D)
    w1 = math.sqrt(c * c + 4.0 * al)
    B = _green_apply(al * profile.B + f1, h, k["delta1"], k["delta2"], 1.0 / wd, rate)
    I = _green_apply(al * profile.I + f2, h, k["sigma1"], k["sigma2"], 1.0 / wd, rate)
    V = _green_apply(al * profile.V + f3, h, k["zeta1"], k["zeta2"], 1.0 / w1, rate)
    return Profile(profile.grid, B, I, V)


def ode_residual(profile: Profile, env: WaveEnvelope, trim: int = 2):
    """Central-difference residual of c U' - diag(D, D, 1) U'' - f(U) on interior nodes."""
    h = profile.h
    p, c = env.params, env.c
    U = profile.stack()
    d1 = (U[:, 2:] - U[:, :-2]) / (2 * h)
    d2 = (U[:, 2:] - 2 * U[:, 1:-1] + U[:, :-2]) / (h * h)
    f = np.vstack(kinetics_B(*U[:, 1:-1], p))
    diff = np.array([p.D, p.D, 1.0])[:, None]
    r = c * d1 - diff * d2 - f
    if trim > 1:
        r = r[:, trim - 1 : -(trim - 1)]
    return r


def _left_tail_rate(profile: Profile, lo: float = 1e-9, hi: float = 1e-5) -> float:
    """Log-slope of V over its left tail (between ``lo`` and ``hi``)."""
    V = profile.V
    xi = profile.grid
    # stay clear of the truncated left edge
    cut = xi > xi[0] + 0.1 * (xi[-1] - xi[0])
    sel = cut & (V > lo) & (V < hi)
    if sel.sum() < 5:
        return math.nan
    slope, _ = np.polyfit(xi[sel], np.log(V[sel]), 1)
    return float(slope)


@dataclass
class PicardReport:
    iterations: int
    converged: bool
    final_change: float
    ode_residual: float
    left_tail: tuple
    decay_rate: float
    expected_rate: float
    max_V: float
    failure: str | None = None
    history: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "final_change": self.final_change,
            "ode_residual": self.ode_residual,
            "left_tail_B": self.left_tail[0],
            "left_tail_I": self.left_tail[1],
            "left_tail_V": self.left_tail[2],
            "decay_rate": self.decay_rate,
            "expected_rate": self.expected_rate,
            "max_V": self.max_V,
            "failure": self.failure,
        }


def picard_iterate(env: WaveEnvelope, grid=None, max_iter: int = 20000, tol: float = 1e-8, n: int = 4096,
                   left_tail: str = "exponential"):
    """Iterate T from the upper solution until the sup-norm change drops below ``tol``.

    An iterate that leaves the sandwich stops the iteration with a failure
    report; nothing is clipped. Returns ``(profile, PicardReport)``.
    """
    if grid is None:
        grid = default_grid(env, n)
    U = upper_profile(env, grid)
    change = math.inf
    failure = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        new = operator_T(U, env, check=False, left_tail=left_tail)
        ok, worst = in_sandwich(new, env)
        if not ok:
            failure = f"iterate {it} left the sandwich by {worst:.3e}"
            U = new
            break
        change = float(np.max(np.abs(new.stack() - U.stack())))
        U = new
        if it % 50 == 0 or it == 1:
            history.append((it, change))
        if change < tol:
            break
    res = ode_residual(U, env)
    report = PicardReport(
        iterations=it,
        converged=failure is None and change < tol,
        final_change=change,
        ode_residual=float(np.max(np.abs(res))),
        left_tail=(float(U.B[0]), float(U.I[0]), float(U.V[0])),
        decay_rate=_left_tail_rate(U),
        expected_rate=env.rho,
        max_V=float(np.max(U.V)),
        failure=failure,
        history=history,
    )
    return U, report
