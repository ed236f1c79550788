import math

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import random_envelopes
from oncowave import wave
from oncowave.dispersion import find_critical_rhos, speed_curve_S
from oncowave.errors import (
    ConstructionError,
    FoggyRegimeError,
    NoAdmissibleRhoError,
    ResidualViolation,
    SandwichError,
)
from oncowave.model import ModelParams, coexistence_state
from oncowave.wave import (
    Profile,
    build_envelope,
    check_residuals,
    default_grid,
    eval_lower,
    eval_upper,
    in_sandwich,
    lower_profile,
    operator_T,
    picard_iterate,
    residual_grid,
    residuals_lower,
    residuals_upper,
    select_rho_for_speed,
    upper_profile,
)

G = 40.0 / 3.0


@pytest.fixture(scope="module")
def envs():
    return random_envelopes(20, seed=11)


# ---------------------------------------------------------------- rho selection


def test_select_rho_round_trip(base_params):
    crit = find_critical_rhos(base_params)
    target = 0.5 * crit.rho_bar
    assert select_rho_for_speed(speed_curve_S(target, base_params), base_params, crit) == pytest.approx(target, rel=1e-10)


def test_select_rho_plug_back():
    p = ModelParams(0.96, 150.0, G, 0.025)
    rho = select_rho_for_speed(4.0, p, find_critical_rhos(p))
    assert abs(speed_curve_S(rho, p) - 4.0) < 1e-10


def test_select_rho_near_c_bar(base_params):
    crit = find_critical_rhos(base_params)
    rho = select_rho_for_speed(crit.c_bar * (1 + 1e-6), base_params, crit)
    assert rho < crit.rho_bar
    assert rho == pytest.approx(crit.rho_bar, rel=1e-3)


def test_select_rho_rejects_slow_speeds(base_params):
    crit = find_critical_rhos(base_params)
    with pytest.raises(NoAdmissibleRhoError):
        select_rho_for_speed(crit.c_bar, base_params, crit)
    with pytest.raises(NoAdmissibleRhoError):
        build_envelope(0.9 * crit.c_bar, base_params, crit=crit)


# ---------------------------------------------------------------- envelope


def test_envelope_invariants(envs):
    for env in envs:
        crit = env.crit
        assert env.rho < env.rho_eps <= crit.rho_bar
        assert crit.c_bar < env.c_eps < env.c
        assert env.xi_bar1 <= env.xi_bar2 <= env.xi_bar3
        assert env.xi_lo2 < 0 and env.xi_lo3 < 0
        assert 0 < env.kappa < env.kappa_max <= 1
        assert env.A1 >= env.A2
        assert 0 < env.mu < env.mu_max
        assert env.alpha == max(env.params.gamma, env.params.a, 2 + env.params.theta / env.params.gamma)
        assert abs(speed_curve_S(env.rho, env.params) - env.c) < 1e-12 * max(1, env.c)
        assert env.c == pytest.approx(env.c_requested, rel=1e-9)


def test_envelope_defaults(base_params):
    crit = find_critical_rhos(base_params)
    env = build_envelope(None, base_params, crit=crit)
    assert env.rho == pytest.approx(0.9 * crit.rho_bar)
    assert env.kappa == pytest.approx(0.5 * env.kappa_max)
    assert any("eps" in n for n in env.notes)


def test_envelope_rejects_bad_options(base_params, base_envelope):
    with pytest.raises(ConstructionError):
        build_envelope(base_envelope.c, base_params, kappa_frac=1.0)
    with pytest.raises(ConstructionError, match="rho_bar"):
        build_envelope(base_envelope.c, base_params, eps=1.0)


def test_foggy_regime_refused():
    p = ModelParams(22.0, 60.0, 1.1, 9.0)
    crit = find_critical_rhos(p)
    lo, hi = crit.foggy_interval
    with pytest.raises(FoggyRegimeError):
        build_envelope(None, p, crit=crit, rho=0.5 * (lo + hi))


def test_upper_limits(base_envelope):
    env = base_envelope
    B, I, V = eval_upper(np.array([-200.0]), env)
    assert max(B[0], I[0], V[0]) < 1e-60
    xi = np.linspace(env.xi_bar3, env.xi_bar3 + 10, 50)
    B, I, V = eval_upper(xi, env)
    assert np.all(B == 1) and np.all(I == 1)
    np.testing.assert_allclose(V, env.params.theta / env.params.gamma)


def test_lower_supports(base_envelope):
    env = base_envelope
    xi = np.linspace(-80, 5, 4001)
    B, I, V = eval_lower(xi, env)
    assert np.all(B == 0)
    assert np.all(V[xi >= env.xi_lo3] == 0)
    # I vanishes to the right of its transition point
    assert np.all(I[xi > env.xi_lo2] == 0)
    assert np.all(I[xi < env.xi_lo2] > 0)
    assert np.all(V[xi < env.xi_lo3] > 0)


def test_continuity_at_transitions(envs):
    for env in envs:
        for x0 in env.transition_points:
            left = np.vstack(eval_upper(np.array([x0 - 1e-13]), env))
            right = np.vstack(eval_upper(np.array([x0 + 1e-13]), env))
            np.testing.assert_allclose(left, right, atol=1e-12)
            left = np.vstack(eval_lower(np.array([x0 - 1e-13]), env))
            right = np.vstack(eval_lower(np.array([x0 + 1e-13]), env))
            np.testing.assert_allclose(left, right, atol=1e-12)


def test_lower_below_upper(envs):
    for env in envs:
        xi = default_grid(env)
        lo = np.vstack(eval_lower(xi, env))
        up = np.vstack(eval_upper(xi, env))
        assert np.all(lo <= up)


# ---------------------------------------------------------------- residuals


def test_upper_residual_branches(base_envelope):
    env, p = base_envelope, base_envelope.params
    xi = np.linspace(env.xi_bar1 - 20, env.xi_bar1 - 0.01, 500)
    r1, r2, r3 = residuals_upper(env, xi, linear=True)
    np.testing.assert_allclose(r2, 0, atol=1e-12)
    np.testing.assert_allclose(r3, 0, atol=1e-12)
    B, I, V = eval_upper(xi, env)
    # the nonlinear I-residual exceeds the linear one by the mass-action term B*V
    np.testing.assert_allclose(residuals_upper(env, xi)[1], B * V, atol=1e-14)
    xi = np.linspace(env.xi_bar3 + 0.01, env.xi_bar3 + 5, 50)
    r1, r2, r3 = residuals_upper(env, xi)
    np.testing.assert_allclose(r3, 0, atol=1e-12)
    np.testing.assert_allclose(r2, p.a)


def test_upper_residuals_ignore_kappa_and_eps(base_params, base_envelope):
    other = build_envelope(base_envelope.c, base_params, eps=0.5 * base_envelope.eps, kappa_frac=0.2)
    xi = residual_grid(base_envelope, 2001)
    for a, b in zip(residuals_upper(base_envelope, xi), residuals_upper(other, xi)):
        np.testing.assert_array_equal(a, b)


def test_lower_residual_branches(base_envelope):
    env = base_envelope
    xi = residual_grid(env, 5001)
    r1, _, _ = residuals_lower(env, xi)
    _, I, V = eval_lower(xi, env)
    np.testing.assert_allclose(r1, -(I + V), atol=1e-15)
    right = np.linspace(max(env.xi_lo2, env.xi_lo3) + 0.01, 10, 100)
    for r in residuals_lower(env, right):
        assert np.all(r == 0)


def test_lower_v_residual_near_kappa_max(base_params, base_envelope):
    env = build_envelope(base_envelope.c, base_params, kappa_frac=0.99)
    xi = residual_grid(env)
    _, _, r3 = residuals_lower(env, xi)
    assert np.all(r3[xi <= env.xi_lo3] <= 1e-10)


def test_residual_suites_random(envs):
    for env in envs:
        up, lo = check_residuals(env, residual_grid(env, 40001))
        assert up.passed, up
        assert lo.passed, lo


def test_residual_grid_skips_kinks(base_envelope):
    xi = residual_grid(base_envelope, 1001)
    h = np.min(np.diff(xi))
    for x0 in base_envelope.transition_points:
        assert np.min(np.abs(xi - x0)) >= 0.5 * h - 1e-12


def test_violation_is_reported(base_params, base_envelope):
    # a steeper V-branch breaks the upper V-inequality somewhere
    import dataclasses

    broken = dataclasses.replace(base_envelope, A2=0.2 * base_envelope.A2)
    up, _ = check_residuals(broken)
    assert not up.passed
    with pytest.raises(ResidualViolation) as exc:
        up.raise_if_failed()
    assert exc.value.component in (0, 1, 2) and math.isfinite(exc.value.xi)


# ---------------------------------------------------------------- operator T


def _quadrature_error(h):
    lamL, lamR = -3.0, 7.0
    xi = np.arange(-10, 10 + h / 2, h)

    def f(e):
        return np.exp(-e**2) * (1 + 0.3 * np.sin(3 * e))

    mine = wave._green_apply(f(xi), h, lamL, lamR, 1.0)
    err = 0.0
    for x in (-2.0, 0.0, 0.4, 1.5):
        k = int(round((x + 10) / h))
        ref = quad(lambda e: math.exp(lamL * (xi[k] - e)) * f(e), -10, xi[k], epsabs=1e-14)[0]
        ref += quad(lambda e: math.exp(lamR * (xi[k] - e)) * f(e), xi[k], 10, epsabs=1e-14)[0]
        err = max(err, abs(mine[k] - ref))
    return err


def test_product_quadrature_against_quad():
    e1, e2 = _quadrature_error(0.02), _quadrature_error(0.01)
    assert e2 < 1e-8
    # curvature-corrected product rule: at least third order
    assert e1 / e2 > 7.0


def test_T_of_constant_state(base_envelope):
    env, p = base_envelope, base_envelope.params
    C, I, V = coexistence_state(p)
    xi = default_grid(env)
    const = Profile(xi, np.full_like(xi, 1 - C), np.full_like(xi, I), np.full_like(xi, V))
    T = operator_T(const, env, check=False, left_tail="zero")
    inner = xi > xi[0] + 0.5 * (xi[-1] - xi[0])
    for got, want in zip((T.B, T.I, T.V), (1 - C, I, V)):
        assert np.max(np.abs(got[inner] - want)) < 1e-6


def test_T_keeps_upper_and_lower(envs):
    for env in envs:
        xi = default_grid(env)
        up, lo = upper_profile(env, xi), lower_profile(env, xi)
        Tu, Tl = operator_T(up, env), operator_T(lo, env)
        for t, u in zip((Tu.B, Tu.I, Tu.V), (up.B, up.I, up.V)):
            assert np.max(t - u) <= 1e-8
        for t, l in zip((Tl.B, Tl.I, Tl.V), (lo.B, lo.I, lo.V)):
            assert np.max(l - t) <= 1e-8


def _between(env, xi, rng, below=None):
    up = np.vstack(eval_upper(xi, env))
    lo = np.vstack(eval_lower(xi, env)) if below is None else below
    s = rng.uniform(0, 1, size=up.shape)
    return lo + s * (up - lo)


def test_T_monotone_on_ordered_pairs(envs):
    # full componentwise order on (B, I, V); T2 is known to break it
    rng = np.random.default_rng(3)
    worst = 0.0
    for env in envs[:8]:
        xi = default_grid(env)
        P = _between(env, xi, rng)
        Q = _between(env, xi, rng, below=P)
        TP, TQ = operator_T(Profile(xi, *P), env), operator_T(Profile(xi, *Q), env)
        for a, b in zip((TP.B, TP.I, TP.V), (TQ.B, TQ.I, TQ.V)):
            worst = max(worst, float(np.max(a - b)))
    assert worst <= 1e-12, f"T[P] exceeds T[Q] by {worst:.3g}"


def test_T1_T3_monotone_and_T2_at_equal_B(envs):
    rng = np.random.default_rng(3)
    for env in envs[:8]:
        xi = default_grid(env)
        P = _between(env, xi, rng)
        Q = _between(env, xi, rng, below=P)
        TP, TQ = operator_T(Profile(xi, *P), env), operator_T(Profile(xi, *Q), env)
        assert np.all(TP.B <= TQ.B + 1e-12)
        assert np.all(TP.V <= TQ.V + 1e-12)
        Q[0] = P[0]
        TQ = operator_T(Profile(xi, *Q), env)
        assert np.all(TP.I <= TQ.I + 1e-12)


def test_T2_decreases_in_B(base_envelope):
    env = base_envelope
    xi = default_grid(env)
    up = np.vstack(eval_upper(xi, env))
    lo = lower_profile(env, xi)
    P = Profile(xi, lo.B, up[1], up[2])
    Q = Profile(xi, up[0], up[1], up[2])
    assert np.max(operator_T(P, env).I - operator_T(Q, env).I) > 0


def test_T_preserves_sandwich_on_random_profiles(envs):
    rng = np.random.default_rng(8)
    for env in envs[:8]:
        xi = default_grid(env)
        TP = operator_T(Profile(xi, *_between(env, xi, rng)), env)
        ok, worst = in_sandwich(TP, env)
        assert ok, worst


def test_T2_overshoot_on_saturated_tail(base_envelope):
    # profile (0, 1, theta/gamma) far right: F2 is constant so T2 -> F2/alpha
    env, p = base_envelope, base_envelope.params
    xi = default_grid(env)
    up, lo = upper_profile(env, xi), lower_profile(env, xi)
    T = operator_T(Profile(xi, lo.B, up.I, up.V), env)
    far = xi > env.xi_bar3 + 0.25 * (xi[-1] - env.xi_bar3)
    want = 1 + (p.theta / p.gamma - p.a) / env.alpha
    assert np.allclose(T.I[far], want, rtol=1e-6)
    assert want > 1


def test_T_refuses_profiles_outside(base_envelope):
    xi = default_grid(base_envelope)
    up = upper_profile(base_envelope, xi)
    with pytest.raises(SandwichError):
        operator_T(Profile(xi, up.B * 1.01 + 1e-3, up.I, up.V), base_envelope)


def test_profile_validation():
    with pytest.raises(ValueError):
        Profile(np.array([0.0, 1.0, 3.0]), np.zeros(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        Profile(np.linspace(0, 1, 5), np.zeros(4), np.zeros(5), np.zeros(5))


def test_default_grid(envs):
    for env in envs:
        xi = default_grid(env)
        L = xi[-1]
        assert xi[0] == -L and math.exp(-env.rho * L) < 1e-12 and env.xi_bar3 < L / 2
        assert xi.size >= 4096


# ---------------------------------------------------------------- Picard


@pytest.fixture(scope="module")
def picard(base_envelope):
    return picard_iterate(base_envelope, max_iter=5000, tol=1e-8)


def test_picard_converges(picard, base_envelope):
    prof, rep = picard
    assert rep.converged and rep.failure is None
    assert rep.final_change < 1e-8
    assert rep.ode_residual < 1e-4
    assert max(rep.left_tail) < 1e-6
    assert rep.decay_rate == pytest.approx(base_envelope.rho, rel=0.05)
    assert rep.max_V > 0
    ok, _ = in_sandwich(prof, base_envelope)
    assert ok


def test_picard_reaches_coexistence(picard, base_envelope):
    prof, _ = picard
    C, I, V = coexistence_state(base_envelope.params)
    assert prof.B[-1] == pytest.approx(1 - C, abs=1e-4)
    assert prof.V[-1] == pytest.approx(V, abs=1e-4)


def test_picard_reports_escape(base_envelope, monkeypatch):
    real = wave.operator_T

    def pushy(profile, env, **kw):
        out = real(profile, env, **kw)
        return Profile(out.grid, out.B + 1.0, out.I, out.V)

    monkeypatch.setattr(wave, "operator_T", pushy)
    _, rep = picard_iterate(base_envelope, max_iter=10)
    assert not rep.converged
    assert "left the sandwich" in rep.failure
