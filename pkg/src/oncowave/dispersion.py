"""Leading-edge linearisation about the tumour-only state.

At the front, (B, I, V) ~ nu * exp(rho * xi) with B = 1 - C. The decay
rate rho and the speed c are tied by c * rho being an eigenvalue of

    A(rho) = diag(D, D, 1) rho^2 + [[-1, 1, 1], [0, -a, 1], [0, theta, -gamma]].

The speed curve S(rho) = lambda2(rho) / rho follows the dominant branch. All
curve evaluations use the closed form of lambda2; nothing here calls a
numerical eigensolver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidParameterError, SingularDirectionError
from .model import ModelParams
from .roots import golden_section, sign_change_roots

RHO_WINDOW = (1e-4, 1e3)
PLATEAU_TOL = 1e-9
RHO_XTOL = 1e-10


def _check_rho(rho):
    r = np.asarray(rho, dtype=float)
    if np.any(~(r > 0)):
        raise DomainError("rho must be strictly positive")
    return r


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


def edge_matrix(rho: float, p: ModelParams) -> np.ndarray:
    r2 = float(rho) ** 2
    return np.array(
        [
            [p.D * r2 - 1.0, 1.0, 1.0],
            [0.0, p.D * r2 - p.a, 1.0],
            [0.0, p.theta, r2 - p.gamma],
        ]
    )


def lambda1(rho, p: ModelParams):
    r = _check_rho(rho)
    return _out(p.D * r * r - 1.0, rho)


def _lambda23(r, p: ModelParams, sign: float):
    r2 = r * r
    tr = r2 + p.D * r2 - p.a - p.gamma
    root = np.sqrt((r2 - p.D * r2 + p.a - p.gamma) ** 2 + 4.0 * p.theta)
    # the root that would cancel is taken from the product of the pair
    det = p.D * r2 * r2 - (p.D * p.gamma + p.a) * r2 + (p.a * p.gamma - p.theta)
    big = 0.5 * (tr + np.where(tr > 0, 1.0, -1.0) * root)
    small = det / big
    use_big = (sign < 0) == (tr <= 0)
    return np.where(use_big, big, small)


def lambda2(rho, p: ModelParams):
    """Dominant eigenvalue of the (I, V) block of A(rho)."""
    r = _check_rho(rho)
    return _out(_lambda23(r, p, 1.0), rho)


def lambda3(rho, p: ModelParams):
    r = _check_rho(rho)
    return _out(_lambda23(r, p, -1.0), rho)


def nu2(rho: float, p: ModelParams):
    """Eigenvector of A(rho) for lambda2, normalised so the V component is 1.

    Returns ``(nu, residual)`` with residual = ||(A - lambda2 I) nu||_inf.
    """
    lam = lambda2(rho, p)
    dr2 = p.D * float(rho) ** 2
    den_a = lam + p.a - dr2
    den_1 = lam + 1.0 - dr2
    scale = max(1.0, abs(lam))
    if abs(den_a) < 1e-14 * scale:
        raise SingularDirectionError(f"lambda2 + a - D rho^2 vanishes at rho={rho}")
    if abs(den_1) < 1e-14 * scale:
        raise SingularDirectionError(f"lambda2 + 1 - D rho^2 vanishes at rho={rho}")
    v = np.array([(lam + 1.0 + p.a - dr2) / (den_a * den_1), 1.0 / den_a, 1.0])
    res = (edge_matrix(rho, p) - lam * np.eye(3)) @ v
    return v, float(np.max(np.abs(res)))


@dataclass
class EdgeEigen:
    rho: float
    lambda1: float
    lambda2: float
    lambda3: float
    nu2: np.ndarray
    residual: float


def edge_eigen(rho: float, p: ModelParams) -> EdgeEigen:
    v, res = nu2(rho, p)
    return EdgeEigen(rho, lambda1(rho, p), lambda2(rho, p), lambda3(rho, p), v, res)


def speed_curve_S(rho, p: ModelParams):
    r = _check_rho(rho)
    return _out(_lambda23(r, p, 1.0) / r, rho)


def H_curves(rho, p: ModelParams):
    """Constraint curves (H1, H2, H3, H4) at ``rho``.

    S > H1 keeps the first component of nu2 positive, S >= H3 is the
    condition c >= D rho and S <= H4 keeps the upper transition points ordered.
    """
    r = _check_rho(rho)
    h3 = p.D * r
    h1 = h3 - 1.0 / r
    h2 = h3 - p.a / r
    h4 = (p.theta / p.gamma - p.a) / r + h3
    return tuple(_out(h, rho) for h in (h1, h2, h3, h4))


def scan_window(p: ModelParams, window=RHO_WINDOW, n_scan: int = 4096, max_decades: int = 10):
    """Log grid containing the global minimum of S in its interior.

    The window grows by two decades at the offending edge while the discrete
    minimum sits on it (close to theta = a*gamma the minimiser tends to 0).
    """
    lo, hi = window
    for _ in range(max_decades // 2 + 1):
        grid = np.logspace(math.log10(lo), math.log10(hi), n_scan)
        s = speed_curve_S(grid, p)
        k = int(np.argmin(s))
        if 0 < k < n_scan - 1:
            return grid, s
        if k == 0:
            lo /= 100.0
        else:
            hi *= 100.0
    raise InvalidParameterError(f"speed curve minimum stays on the scan window edge ({lo:g}, {hi:g})")


def minimize_S(p: ModelParams, window=RHO_WINDOW, n_scan: int = 4096, xtol: float = RHO_XTOL):
    """Global minimum (rho_m, c_m) of the speed curve.

    A logarithmic scan over ``window`` (extended if the minimum sits on an
    edge) brackets every discrete local minimum; each is refined by
    golden-section. Ties within 1e-9 in S resolve to the smallest rho.
    """
    if not p.coexistence():
        raise InvalidParameterError("minimum speed requires theta > a*gamma")
    if n_scan < 512:
        raise InvalidParameterError("n_scan must be at least 512")
    grid, s = scan_window(p, window, n_scan)
    xtol = min(xtol, 1e-6 * grid[0])

    interior = np.flatnonzero((s[1:-1] <= s[:-2]) & (s[1:-1] <= s[2:])) + 1
    cands = []
    for k in interior:
        x, fx = golden_section(lambda r: speed_curve_S(r, p), grid[k - 1], grid[k + 1], tol=xtol)
        cands.append((x, fx))
    c_m = min(fx for _, fx in cands)
    rho_m = min(x for x, fx in cands if fx <= c_m + PLATEAU_TOL)
    return float(rho_m), float(speed_curve_S(rho_m, p))


@dataclass
class CriticalPoints:
    rho_m: float
    c_m: float
    rho_star: float | None
    rho_check: float | None
    rho_tilde: float | None
    rho_bar: float
    c_bar: float
    case: int
    binding: str
    tangencies: dict = field(default_factory=dict)

    @property
    def foggy_interval(self):
        """Undecided interval (rho_*, rho_m) in case 4, else None."""
        if self.case == 4:
            return (self.rho_star, self.rho_m)
        return None

    def as_dict(self) -> dict:
        return {
            "rho_m": self.rho_m,
            "c_m": self.c_m,
            "rho_star": self.rho_star,
            "rho_check": self.rho_check,
            "rho_tilde": self.rho_tilde,
            "rho_bar": self.rho_bar,
            "c_bar": self.c_bar,
            "case": self.case,
            "binding": self.binding,
        }


def _first_root(g, grid, xtol):
    roots = sign_change_roots(g, grid, xtol=xtol)
    if not roots:
        return None, None
    return roots[0]


def find_critical_rhos(p: ModelParams, window=RHO_WINDOW, n_grid: int = 20000, xtol: float = RHO_XTOL) -> CriticalPoints:
    """Critical decay rates and the minimal constructible speed c_bar.

    H3 and H4 intersections are searched on (0, rho_m]; the H1 intersection
    (only meaningful for a > 1) is searched over the whole window so that
    case 3 can be recognised.
    """
    rho_m, c_m = minimize_S(p, window=window)
    lo, hi = window
    below = np.logspace(math.log10(lo), math.log10(rho_m), n_grid)
    full = np.logspace(math.log10(lo), math.log10(hi), n_grid)

    def gap(k):
        def g(r):
            return speed_curve_S(r, p) - H_curves(r, p)[k]

        return g

    tangencies = {}
    rho_star = None
    if p.a > 1.0:
        rho_star, kind = _first_root(gap(0), full, xtol)
        if kind == "tangency":
            tangencies["rho_star"] = rho_star
    rho_check, kind = _first_root(gap(2), below, xtol)
    if kind == "tangency":
        tangencies["rho_check"] = rho_check
    rho_tilde, kind = _first_root(gap(3), below, xtol)
    if kind == "tangency":
        tangencies["rho_tilde"] = rho_tilde

    named = {"rho_m": rho_m, "rho_star": rho_star, "rho_check": rho_check, "rho_tilde": rho_tilde}
    binding = min((v, k) for k, v in named.items() if v is not None)[1]
    rho_bar = named[binding]

    if p.a <= 1.0:
        case = 1
    elif rho_star is None:
        case = 2
    elif rho_star > rho_m:
        case = 3
    else:
        case = 4

    return CriticalPoints(
        rho_m=rho_m,
        c_m=c_m,
        rho_star=rho_star,
        rho_check=rho_check,
        rho_tilde=rho_tilde,
        rho_bar=rho_bar,
        c_bar=float(speed_curve_S(rho_bar, p)),
        case=case,
        binding=binding,
        tangencies=tangencies,
    )


def classify_case(p: ModelParams) -> int:
    """Case label 1-4 for positivity of nu2; case 4 marks the undecided regime."""
    return find_critical_rhos(p).case
