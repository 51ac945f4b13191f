import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import cumulative_trapezoid

from impact_hedge.model import (
    Coefficient,
    GammaCap,
    ImpactMarket,
    Payoff,
    closed_form_face_lift,
    concave_envelope,
    constant,
    face_lift,
    gamma_antiderivative,
    growth_bounds,
    saturated_affine,
)


def brute_force_majorant(x, y):
    """Max over all chords spanning each node (the discrete concave envelope)."""
    n = x.size
    env = y.copy()
    for i in range(n):
        a = np.arange(0, i + 1)[:, None]
        b = np.arange(i, n)[None, :]
        xa, xb, ya, yb = x[a], x[b], y[a], y[b]
        with np.errstate(invalid="ignore", divide="ignore"):
            w = np.where(xb > xa, (x[i] - xa) / (xb - xa), 0.0)
        env[i] = np.max((1 - w) * ya + w * yb)
    return env


# coefficients ------------------------------------------------------------

def test_saturated_affine_derivative_matches_finite_difference():
    c = saturated_affine(0.5, 0.3, 0.2)
    x = np.linspace(-3, 3, 41)
    fd = (c(x + 1e-6) - c(x - 1e-6)) / 2e-6
    assert np.allclose(c.derivative(x), fd, atol=1e-8)


def test_callable_coefficient_uses_central_difference():
    c = Coefficient("callable", (), np.sin)
    x = np.linspace(-2, 2, 9)
    assert np.allclose(c.derivative(x), np.cos(x), atol=1e-8)


def test_coefficient_text_roundtrip():
    for c in (constant(0.2), saturated_affine(0.5, 0.1, 0.25)):
        assert Coefficient.parse(c.to_text()) == c


# market and cap ----------------------------------------------------------

def test_market_rejects_nonpositive_impact():
    with pytest.raises(ValueError):
        ImpactMarket.constant(impact=0.0)
    with pytest.raises(ValueError):
        ImpactMarket(constant(0), constant(0.2), saturated_affine(0.1, 1.0, 0.2))


def test_market_bounds_measured(market):
    assert market.f_min == market.f_max == 0.5
    assert market.sigma_min == 0.2
    assert market.lipschitz_bound == 0.0


def test_cap_paired_validation(market):
    cap = GammaCap.paired(market, 1.75)
    assert cap.iota == pytest.approx(0.25)
    with pytest.raises(ValueError, match="exceeds"):
        GammaCap.paired(market, 1.75, iota=0.5)
    with pytest.raises(ValueError):
        GammaCap.paired(market, 2.0)


def test_cap_default_k_lower(cap):
    assert cap.k_or_default(np.linspace(-1, 1, 5)) == pytest.approx(17.5)


# payoffs -----------------------------------------------------------------

def test_payoff_values_and_growth_constants():
    cs = Payoff.call_spread(-1, 1)
    assert cs(np.array([-2.0, 0.0, 3.0])).tolist() == [0.0, 1.0, 2.0]
    assert cs.c1 == 0 and cs.c0 == 2.0
    aff = Payoff.affine(2.0, 1.0)
    assert aff.c1 == 2.0 and aff.c0 == 1.0
    assert aff.infimum() == -math.inf
    assert Payoff.call_spread(0, 1).c0 == 1.0


def test_digital_is_upper_semicontinuous_at_strike():
    d = Payoff.digital(0.0)
    assert d(0.0) == 1.0 and d.upper(0.0) == 1.0
    assert d(-1e-12) == 0.0


def test_zero_payoff_gets_floor_constant():
    z = Payoff.piecewise_linear([0.0], [0.0])
    assert z.c0 == 1e-12


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=8, unique=True),
       st.floats(-2, 2), st.floats(-2, 2))
def test_growth_constants_bound_payoff(knots, sl, sr):
    knots = sorted(knots)
    vals = [math.sin(3 * k) for k in knots]
    p = Payoff.piecewise_linear(knots, vals, sl, sr)
    x = np.linspace(-20, 20, 2001)
    g = p(x)
    assert (np.abs(g) <= p.c0 + p.c1 * np.abs(x) + 1e-12).all()
    if p.infimum() > -math.inf:
        assert (g >= -p.c0 - 1e-12).all()


# antiderivative ----------------------------------------------------------

def test_antiderivative_constant_cap_is_parabola():
    cap = GammaCap(constant(1.75), 0.25)
    x = np.linspace(-3, 3, 61)
    G = gamma_antiderivative(cap, x)
    assert np.allclose(G(x), 0.875 * x ** 2, atol=1e-13)


def test_antiderivative_iota_cap_normalised_at_centre():
    cap = GammaCap(constant(0.3), 0.3)
    x = np.linspace(-2, 2, 41)
    G = gamma_antiderivative(cap, x)
    assert abs(G(0.0)) < 1e-15 and abs(G.derivative(0.0)) < 1e-15
    assert np.allclose(G(x), 0.15 * x ** 2, atol=1e-14)


def test_antiderivative_matches_double_trapezoid():
    cap = GammaCap(saturated_affine(1.0, 0.5, 0.5), 0.5)
    x = np.linspace(-3, 5, 801)
    G = gamma_antiderivative(cap, x)
    gb = cap.gamma_bar(x)
    x0 = 1.0
    d1 = cumulative_trapezoid(gb, x, initial=0.0)
    d2 = cumulative_trapezoid(d1, x, initial=0.0)
    j = np.searchsorted(x, x0)
    oracle = d2 - d2[j] - d1[j] * (x - x0)
    assert np.max(np.abs(G(x) - oracle)) < 1e-4
    h = x[1] - x[0]
    sd = (G(x[2:]) + G(x[:-2]) - 2 * G(x[1:-1])) / h ** 2
    assert np.max(np.abs(sd - gb[1:-1])) < 1e-4


def test_antiderivative_rejects_bad_grid():
    cap = GammaCap(constant(1.0), 0.5)
    with pytest.raises(ValueError):
        gamma_antiderivative(cap, [0.0, 1.0, 0.5])


# concave envelope --------------------------------------------------------

def test_envelope_of_concave_input_is_identity():
    x = np.linspace(-1, 1, 51)
    assert np.array_equal(concave_envelope(x, -x ** 2), -x ** 2)


def test_envelope_of_abs_is_constant_one():
    x = np.linspace(-1, 1, 41)
    assert np.allclose(concave_envelope(x, np.abs(x)), 1.0, atol=1e-15)


def test_envelope_rejects_short_input():
    with pytest.raises(ValueError):
        concave_envelope([0.0], [1.0])


@pytest.mark.parametrize("backend", ["numba", "numpy"])
def test_envelope_matches_brute_force(rng, backend):
    for _ in range(20):
        n = int(rng.integers(2, 201))
        x = np.sort(rng.uniform(-5, 5, n))
        x = np.unique(x)
        y = rng.normal(size=x.size)
        assert np.max(np.abs(concave_envelope(x, y, backend) - brute_force_majorant(x, y))) <= 1e-12


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=60))
def test_envelope_is_concave_majorant(ys):
    y = np.array(ys)
    x = np.linspace(0, 1, y.size)
    env = concave_envelope(x, y)
    assert (env >= y - 1e-12).all()
    assert (np.diff(env, 2) <= 1e-9).all()


# face-lift ---------------------------------------------------------------

GRID = np.linspace(-4, 4, 2001)


def test_digital_face_lift_spot_values():
    m = ImpactMarket.constant(0.2, 0.25)
    fl = face_lift(Payoff.digital(0.0), GammaCap.paired(m, 2.0), GRID)
    assert fl(np.array([-1.0, -0.5, 0.0])) == pytest.approx([0.0, 0.25, 1.0], abs=1e-12)
    assert fl.closed_form == "digital"


def test_butterfly_face_lift_value_at_lower_strike(cap):
    fl = face_lift(Payoff.butterfly(-1, 0, 1), cap, GRID)
    assert fl(-1.0) == pytest.approx(0.875 / 3.5 ** 2, abs=1e-12)


@pytest.mark.parametrize("payoff", [Payoff.butterfly(-1, 0, 1), Payoff.call_spread(-1, 1),
                                    Payoff.butterfly(-2, 0.5, 1.5)])
def test_face_lift_matches_closed_form(cap, payoff):
    fl = face_lift(payoff, cap, GRID)
    cf = closed_form_face_lift(payoff, 1.75)
    assert np.max(np.abs(fl(GRID) - cf(GRID))) <= 1e-12


def test_affine_payoff_is_fixed(cap):
    p = Payoff.affine(2.0, 1.0)
    fl = face_lift(p, cap, GRID)
    assert fl.bridges == ()
    assert np.array_equal(fl(GRID), p(GRID))


def test_face_lift_invariants_sampled_payoff(cap, rng):
    xs = np.linspace(-2, 2, 25)
    p = Payoff.sampled(xs, rng.uniform(0, 1, xs.size))
    fl = face_lift(p, cap, np.linspace(-3, 3, 301))
    x = fl.x
    assert (fl.g_hat >= fl.g - 1e-12).all()
    phi = fl.g_hat - fl.antiderivative(x)
    assert (np.diff(phi, 2) <= 1e-10).all()
    # idempotence through exact evaluation
    again = face_lift(fl, cap, np.linspace(-3, 3, 301))
    assert np.max(np.abs(again(x) - fl(x))) <= 1e-12


@pytest.mark.parametrize("payoff", [Payoff.digital(0.0), Payoff.butterfly(-1, 0, 1), Payoff.call_spread(-1, 1)])
def test_face_lift_idempotent(payoff):
    m = ImpactMarket.constant(0.2, 0.25)
    cap = GammaCap.paired(m, 2.0)
    fl = face_lift(payoff, cap, GRID)
    assert np.max(np.abs(face_lift(fl, cap, GRID)(GRID) - fl(GRID))) <= 1e-12


def test_face_lift_monotone_in_cap():
    m = ImpactMarket.constant(0.2, 0.1)
    lifts = [face_lift(Payoff.digital(0.0), GammaCap.paired(m, g), GRID)(GRID) for g in (1.0, 2.0, 4.0)]
    assert (lifts[1] <= lifts[0] + 1e-12).all() and (lifts[2] <= lifts[1] + 1e-12).all()


def test_face_lift_small_margin_reported():
    # the digital's lifted region starts near -14 for this cap, far outside the extension
    with pytest.raises(ValueError, match="margin"):
        face_lift(Payoff.digital(0.0), GammaCap(constant(0.01), 0.01), np.linspace(-1, 1, 21), margin=0.1)


def test_face_lift_csv(tmp_path, cap):
    fl = face_lift(Payoff.call_spread(-1, 1), cap, np.linspace(-2, 2, 11))
    path = tmp_path / "fl.csv"
    fl.to_csv(path, np.linspace(-2, 2, 11))
    lines = path.read_text().splitlines()
    assert lines[0] == "x,g,g_hat,gamma_bar" and len(lines) == 12


# growth bounds -----------------------------------------------------------

def test_growth_bound_constant_A(market, cap):
    b = growth_bounds(Payoff.call_spread(-1, 1), cap, market, T=2.0)
    assert b.A == pytest.approx(0.56, rel=1e-12)
    assert b.w_low == 0.0
    assert growth_bounds(Payoff.butterfly(-1, 0, 1), cap, market, 2.0).w_low == 0.0


def test_growth_bound_matches_envelope_oracle(market, cap):
    p = Payoff.affine(1.5, 0.5)
    b = growth_bounds(p, cap, market, 2.0)
    x = np.linspace(-40, 40, 8001)
    base = 1 + 2 * b.c0 + b.c1 * np.abs(x) - 0.5 * b.eta * x ** 2
    oracle = concave_envelope(x, base) + 0.5 * b.eta * x ** 2 + 1 + b.A
    inner = np.abs(x) < 30
    assert np.max(np.abs(b.w_high(0.0, x) - oracle)[inner]) < 1e-3


@pytest.mark.parametrize("payoff", [Payoff.call_spread(-1, 1), Payoff.butterfly(-1, 0, 1), Payoff.affine(2, 1),
                                    Payoff.digital(0.5)])
def test_growth_bounds_bracket_face_lift(market, cap, payoff):
    b = growth_bounds(payoff, cap, market, 2.0)
    fl = face_lift(payoff, cap, GRID)
    gh = fl(GRID)
    assert (gh >= b.w_low).all() and (gh <= b.w_high(2.0, GRID)).all()
