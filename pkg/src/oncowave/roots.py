"""Small scalar solvers: golden-section minimisation and sign-change scanning."""

import math

import numpy as np
from scipy.optimize import bisect

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI2 = (3.0 - math.sqrt(5.0)) / 2.0


def golden_section(f, a, b, tol=1e-10, max_iter=500):
    """Minimise a unimodal ``f`` on [a, b]; returns (x_min, f(x_min)).

    Iterates until the bracket is narrower than ``tol``.
    """
    a, b = min(a, b), max(a, b)
    h = b - a
    c = a + INV_PHI2 * h
    d = a + INV_PHI * h
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if h <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            h = INV_PHI * h
            c = a + INV_PHI2 * h
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            h = INV_PHI * h
            d = a + INV_PHI * h
            fd = f(d)
    x = c if fc <= fd else d
    return x, f(x)


def sign_change_roots(g, grid, xtol=1e-10, tangency_tol=1e-9, first_only=False):
    """Find roots of a vectorised ``g`` on a sorted grid.

    Sign changes between neighbouring samples are refined by bisection.
    Interior local minima of |g| without a sign change are refined by
    golden-section and reported as tangencies when |g| < ``tangency_tol``.

    Returns a sorted list of (root, kind) with kind in {"crossing", "tangency"}.
    """
    grid = np.asarray(grid, dtype=float)
    vals = np.asarray(g(grid), dtype=float)
    roots = [(float(grid[k]), "crossing") for k in np.flatnonzero(vals == 0.0)]
    for k in np.flatnonzero(vals[:-1] * vals[1:] < 0):
        roots.append((bisect(g, grid[k], grid[k + 1], xtol=xtol, maxiter=500), "crossing"))

    absv = np.abs(vals)
    local_min = (absv[1:-1] <= absv[:-2]) & (absv[1:-1] <= absv[2:])
    same_sign = (vals[:-2] * vals[2:] > 0) & (vals[1:-1] != 0)
    for k in np.flatnonzero(local_min & same_sign) + 1:
        sgn = math.copysign(1.0, vals[k])
        x, gx = golden_section(lambda x: sgn * g(x), grid[k - 1], grid[k + 1], tol=xtol)
        if abs(gx) < tangency_tol:
            roots.append((float(x), "tangency"))
    roots.sort()
    if first_only:
        return roots[:1]
    return roots
