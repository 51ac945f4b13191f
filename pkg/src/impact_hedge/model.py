"""Market primitives, payoffs, the gamma face-lift and the analytic clamp bounds."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .kernels import upper_hull

# --------------------------------------------------------------------------
# coefficient functions
# --------------------------------------------------------------------------

_FD_STEP = 1e-6


@dataclass(frozen=True)
class Coefficient:
    """A scalar function of the price, vectorised over numpy arrays.

    Built-in kinds carry analytic derivatives: ``constant(c)`` and
    ``saturated_affine(base, slope, cap)`` which is
    ``base + cap * tanh(slope * x / cap)`` (affine near 0, saturating at
    ``base +/- cap``). ``callable`` wraps an arbitrary function and
    differentiates it by central differences.
    """

    kind: str
    params: tuple = ()
    fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind == "constant" and len(self.params) != 1:
            raise ValueError("constant takes one parameter")
        if self.kind == "saturated_affine":
            if len(self.params) != 3 or self.params[2] <= 0:
                raise ValueError("saturated_affine takes (base, slope, cap>0)")
        if self.kind == "callable" and self.fn is None:
            raise ValueError("callable coefficient needs fn")
        if self.kind not in ("constant", "saturated_affine", "callable"):
            raise ValueError(f"unknown coefficient kind {self.kind!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape, float(self.params[0]))[()]
        if self.kind == "saturated_affine":
            base, slope, cap = self.params
            return base + cap * np.tanh(slope * x / cap)
        return np.asarray(self.fn(x), dtype=float)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.zeros(x.shape)[()]
        if self.kind == "saturated_affine":
            _, slope, cap = self.params
            return slope / np.cosh(slope * x / cap) ** 2
        step = _FD_STEP * np.maximum(1.0, np.abs(x))
        return (self(x + step) - self(x - step)) / (2.0 * step)

    @property
    def is_constant(self):
        return self.kind == "constant"

    def to_text(self):
        if self.kind == "callable":
            raise ValueError("callable coefficients cannot be serialised")
        return self.kind + ":" + ",".join(repr(float(p)) for p in self.params)

    @classmethod
    def parse(cls, text):
        kind, _, rest = text.strip().partition(":")
        params = tuple(float(p) for p in rest.split(",") if p.strip())
        return cls(kind.strip(), params)


def constant(c):
    return Coefficient("constant", (float(c),))


def saturated_affine(base, slope, cap):
    return Coefficient("saturated_affine", (float(base), float(slope), float(cap)))


def as_coefficient(v):
    if isinstance(v, Coefficient):
        return v
    if isinstance(v, str):
        return Coefficient.parse(v)
    if callable(v):
        return Coefficient("callable", (), v)
    return constant(v)


# --------------------------------------------------------------------------
# market and gamma cap
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ImpactMarket:
    """Drift ``mu``, volatility ``sigma`` and impact ``f`` of the traded asset.

    Bounds are measured on ``domain`` when not given explicitly.
    """

    mu: Coefficient
    sigma: Coefficient
    f: Coefficient
    domain: tuple = (-10.0, 10.0)
    f_min: Optional[float] = None
    f_max: Optional[float] = None
    sigma_min: Optional[float] = None
    sigma_max: Optional[float] = None
    lipschitz_bound: Optional[float] = None

    def __post_init__(self):
        for name in ("mu", "sigma", "f"):
            object.__setattr__(self, name, as_coefficient(getattr(self, name)))
        xs = np.linspace(self.domain[0], self.domain[1], 2001)
        fx, sx, mx = self.f(xs) * np.ones_like(xs), self.sigma(xs) * np.ones_like(xs), self.mu(xs) * np.ones_like(xs)
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(sx)) and np.all(np.isfinite(mx))):
            raise ValueError("market coefficients must be finite on the domain")
        measured = {
            "f_min": float(fx.min()),
            "f_max": float(fx.max()),
            "sigma_min": float(sx.min()),
            "sigma_max": float(sx.max()),
            "lipschitz_bound": float(max(np.abs(np.asarray(c.derivative(xs))).max() for c in (self.mu, self.sigma, self.f))),
        }
        for name, val in measured.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, val)
        if not self.f_min > 0:
            raise ValueError(f"impact must be bounded away from zero, got inf f = {self.f_min}")
        if not self.sigma_min > 0:
            raise ValueError(f"volatility must be bounded away from zero, got inf sigma = {self.sigma_min}")

    @classmethod
    def constant(cls, sigma=0.2, impact=0.5, mu=0.0, domain=(-10.0, 10.0)):
        return cls(constant(mu), constant(sigma), constant(impact), domain)

    def validate(self, x):
        """Raise ``ValueError`` unless the invariants hold on the nodes ``x``."""
        x = np.asarray(x, dtype=float)
        fx = self.f(x) * np.ones_like(x)
        sx = self.sigma(x) * np.ones_like(x)
        mx = self.mu(x) * np.ones_like(x)
        if not (np.isfinite(fx).all() and np.isfinite(sx).all() and np.isfinite(mx).all()):
            raise ValueError("market coefficients are not finite on the grid")
        if fx.min() < self.f_min * (1 - 1e-12) or fx.min() <= 0:
            raise ValueError(f"f drops to {fx.min()} below f_min={self.f_min} on the grid")
        if sx.min() < self.sigma_min * (1 - 1e-12) or sx.max() > self.sigma_max * (1 + 1e-12):
            raise ValueError("sigma leaves [sigma_min, sigma_max] on the grid")
        return self

    def sample(self, x):
        """``(mu, sigma, f, f')`` as arrays shaped like ``x``."""
        x = np.asarray(x, dtype=float)
        one = np.ones_like(x)
        return (self.mu(x) * one, self.sigma(x) * one, self.f(x) * one, self.f.derivative(x) * one)


@dataclass(frozen=True)
class GammaCap:
    """Upper gamma bound ``gamma_bar`` with margin ``iota`` and lower bound ``k_lower``."""

    gamma_bar: Coefficient
    iota: float
    k_lower: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "gamma_bar", as_coefficient(self.gamma_bar))
        if not (self.iota > 0 and math.isfinite(self.iota)):
            raise ValueError("iota must be positive")
        if self.k_lower is not None and self.k_lower < 0:
            raise ValueError("k_lower must be nonnegative")
        if self.gamma_bar.is_constant and self.gamma_bar.params[0] < self.iota * (1 - 1e-12):
            raise ValueError("gamma_bar must be at least iota")

    @classmethod
    def paired(cls, market, gamma_bar, iota=None, x=None, k_lower=None):
        """Build a cap and check ``iota <= gamma_bar <= 1/f - iota`` against ``market``.

        With ``iota=None`` the largest admissible margin on ``x`` is used.
        """
        gb = as_coefficient(gamma_bar)
        xs = np.linspace(*market.domain, 2001) if x is None else np.asarray(x, dtype=float)
        g = gb(xs) * np.ones_like(xs)
        room = np.minimum(g, 1.0 / (market.f(xs) * np.ones_like(xs)) - g)
        if iota is None:
            iota = float(room.min())
            if not iota > 0:
                raise ValueError("gamma_bar leaves no margin below 1/f")
        cap = cls(gb, float(iota), k_lower)
        cap.validate(market, xs)
        return cap

    def validate(self, market, x):
        x = np.asarray(x, dtype=float)
        g = self.gamma_bar(x) * np.ones_like(x)
        if not np.isfinite(g).all():
            raise ValueError("gamma_bar is not finite on the grid")
        tol = 1e-12 * max(1.0, float(np.abs(g).max()))
        if (g < self.iota - tol).any():
            j = int(np.argmin(g))
            raise ValueError(f"gamma_bar({x[j]:g}) = {g[j]:g} is below iota = {self.iota:g}")
        upper = 1.0 / (market.f(x) * np.ones_like(x)) - self.iota
        if (g > upper + tol).any():
            j = int(np.argmax(g - upper))
            raise ValueError(
                f"gamma_bar({x[j]:g}) = {g[j]:g} exceeds 1/f - iota = {upper[j]:g}")
        return self

    def k_or_default(self, x):
        if self.k_lower is not None:
            return float(self.k_lower)
        return 10.0 * float(np.max(self.gamma_bar(x) * np.ones_like(x)))


# --------------------------------------------------------------------------
# payoffs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Payoff:
    """Piecewise-linear terminal claim, possibly with jumps at knots.

    ``left``/``right`` are one-sided limits at the knots, ``at`` the value at
    the knot itself; outside the knots the payoff continues with the tail
    slopes. Use the constructors rather than building one by hand.
    """

    kind: str
    params: tuple
    knots: tuple
    left: tuple
    right: tuple
    at: tuple
    slope_left: float = 0.0
    slope_right: float = 0.0
    c0: float = field(default=0.0, compare=False)
    c1: float = field(default=0.0, compare=False)

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        if k.size == 0:
            raise ValueError("payoff needs at least one knot")
        if k.size > 1 and not np.all(np.diff(k) > 0):
            raise ValueError("payoff knots must be strictly increasing")
        vals = np.r_[self.left, self.right, self.at, self.slope_left, self.slope_right]
        if not np.isfinite(vals).all():
            raise ValueError("payoff values must be finite")
        c1 = max(abs(self.slope_left), abs(self.slope_right))
        cand = [abs(v) - c1 * abs(x) for x, l, r, a in zip(self.knots, self.left, self.right, self.at)
                for v in (l, r, a)]
        cand.append(abs(float(self(0.0))))
        low = self.infimum()
        if math.isfinite(low):
            cand.append(-low)
        object.__setattr__(self, "c1", float(c1))
        object.__setattr__(self, "c0", float(max(max(cand), 1e-12)))

    # constructors ---------------------------------------------------------
    @classmethod
    def call_spread(cls, k1, k2):
        if not k1 < k2:
            raise ValueError("call spread needs K1 < K2")
        v = (0.0, float(k2 - k1))
        return cls("call_spread", (float(k1), float(k2)), (float(k1), float(k2)), v, v, v)

    @classmethod
    def butterfly(cls, k1, k2, k3):
        if not k1 < k2 < k3:
            raise ValueError("butterfly needs K1 < K2 < K3")
        v = (0.0, float(k2 - k1), float(2 * k2 - k1 - k3))
        return cls("butterfly", (float(k1), float(k2), float(k3)), (float(k1), float(k2), float(k3)), v, v, v)

    @classmethod
    def digital(cls, k):
        return cls("digital", (float(k),), (float(k),), (0.0,), (1.0,), (1.0,))

    @classmethod
    def piecewise_linear(cls, xs, ys, slope_left=0.0, slope_right=0.0):
        xs = tuple(float(v) for v in xs)
        ys = tuple(float(v) for v in ys)
        if len(xs) != len(ys):
            raise ValueError("knots and values differ in length")
        params = (xs, ys, float(slope_left), float(slope_right))
        return cls("custom_piecewise_linear", params, xs, ys, ys, ys, float(slope_left), float(slope_right))

    @classmethod
    def sampled(cls, xs, ys):
        """Grid values joined linearly, held flat beyond the sampled range."""
        p = cls.piecewise_linear(xs, ys)
        return cls("custom_sampled", (p.knots, p.at), p.knots, p.left, p.right, p.at)

    @classmethod
    def affine(cls, slope, intercept):
        return cls.piecewise_linear([0.0], [intercept], slope, slope)

    # evaluation -----------------------------------------------------------
    def _eval(self, x, mode):
        k = np.asarray(self.knots)
        x = np.asarray(x, dtype=float)
        left, right, at = np.asarray(self.left), np.asarray(self.right), np.asarray(self.at)
        i = np.searchsorted(k, x, side="right") - 1
        out = np.empty(x.shape)
        lo = i < 0
        hi = i >= k.size - 1
        mid = ~lo & ~hi
        out[lo] = left[0] + self.slope_left * (x[lo] - k[0])
        out[hi] = right[-1] + self.slope_right * (x[hi] - k[-1])
        if mid.any():
            im = i[mid]
            w = (x[mid] - k[im]) / (k[im + 1] - k[im])
            out[mid] = (1 - w) * right[im] + w * left[im + 1]
        on = (i >= 0) & (x == k[np.clip(i, 0, k.size - 1)])
        if on.any():
            ion = i[on]
            if mode == "upper":
                out[on] = np.maximum(np.maximum(left[ion], right[ion]), at[ion])
            elif mode == "left":
                out[on] = left[ion]
            elif mode == "right":
                out[on] = right[ion]
            else:
                out[on] = at[ion]
        return out[()]

    def __call__(self, x):
        return self._eval(x, "at")

    def upper(self, x):
        """Upper semicontinuous envelope (differs from ``g`` only at jumps)."""
        return self._eval(x, "upper")

    def breakpoints(self):
        return np.asarray(self.knots, dtype=float)

    def local_quadratic(self, l, r):
        """Value and slope just right of ``l`` and the curvature on ``(l, r)``.

        ``l``/``r`` are consecutive breakpoints of a partition refining the
        knots, so the payoff is linear on each open piece.
        """
        l = np.asarray(l, dtype=float)
        r = np.asarray(r, dtype=float)
        vl = self._eval(l, "right")
        vr = self._eval(r, "left")
        return vl, (vr - vl) / (r - l), np.zeros(l.shape)

    def infimum(self):
        if self.slope_left > 0 or self.slope_right < 0:
            return -math.inf
        return float(min(min(self.left), min(self.right), min(self.at)))

    @property
    def is_nonnegative(self):
        return self.infimum() >= 0


# --------------------------------------------------------------------------
# antiderivative of the gamma cap
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GammaAntiderivative:
    """C1 piecewise quadratic with curvature ``gamma_bar(midpoint)`` on each cell.

    Normalised so that value and slope vanish at ``center``; continued
    quadratically past the end cells.
    """

    nodes: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    curvature: np.ndarray
    center: float

    def _cell(self, x):
        return np.clip(np.searchsorted(self.nodes, x, side="right") - 1, 0, self.nodes.size - 2)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k = self._cell(x)
        d = x - self.nodes[k]
        return (self.values[k] + self.slopes[k] * d + 0.5 * self.curvature[k] * d * d)[()]

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        k = self._cell(x)
        return (self.slopes[k] + self.curvature[k] * (x - self.nodes[k]))[()]

    def curvature_at(self, x):
        return self.curvature[self._cell(np.asarray(x, dtype=float))]


def _check_grid(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("grid needs at least two nodes")
    if not np.isfinite(x).all():
        raise ValueError("grid must be finite")
    if not np.all(np.diff(x) > 0):
        raise ValueError("grid must be strictly increasing")
    return x


def gamma_antiderivative(cap, grid):
    """Twice-integrated gamma cap sampled on ``grid`` (see :class:`GammaAntiderivative`)."""
    x = _check_grid(grid)
    h = np.diff(x)
    c = np.asarray(cap.gamma_bar(0.5 * (x[1:] + x[:-1])) * np.ones_like(h), dtype=float)
    slopes = np.r_[0.0, np.cumsum(c * h)]
    values = np.r_[0.0, np.cumsum(slopes[:-1] * h + 0.5 * c * h * h)]
    raw = GammaAntiderivative(x, values, slopes, c, 0.0)
    x0 = 0.5 * (x[0] + x[-1])
    v0, p0 = float(raw(x0)), float(raw.derivative(x0))
    return GammaAntiderivative(x, values - v0 - p0 * (x - x0), slopes - p0, c, x0)


# --------------------------------------------------------------------------
# concave envelope
# --------------------------------------------------------------------------

def concave_envelope(x, y, backend=None):
    """Smallest concave function above the points ``(x, y)``, sampled at ``x``.

    The envelope is piecewise linear between upper-hull vertices.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or y.shape != x.shape:
        raise ValueError("need at least two samples with matching shapes")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("samples must be finite")
    if not np.all(np.diff(x) > 0):
        raise ValueError("x must be strictly increasing")
    v = upper_hull(x, y, backend=backend)
    return np.interp(x, x[v], y[v])


class _Arc:
    """phi(x) = a0 + a1 (x - l) + a2 (x - l)^2 / 2 on [l, r]."""

    __slots__ = ("l", "r", "a0", "a1", "a2")

    def __init__(self, l, r, a0, a1, a2):
        self.l, self.r, self.a0, self.a1, self.a2 = l, r, a0, a1, a2

    def value(self, x):
        d = x - self.l
        return self.a0 + self.a1 * d + 0.5 * self.a2 * d * d

    def candidates(self, qx, qy, side):
        """Points of the arc where a line through ``(qx, qy)`` may touch it."""
        xs = [self.l, self.r]
        c = -self.a2
        if c > 0:
            q = qx - self.l
            disc = q * q - 2.0 * (self.a0 + self.a1 * q - qy) / c
            if disc >= 0:
                u = q - math.sqrt(disc) if side == "left" else q + math.sqrt(disc)
                xs.append(min(max(self.l + u, self.l), self.r))
        return [(x, self.value(x)) for x in xs]


def _best(objects, q, side):
    qx, qy = q
    best = None
    best_slope = None
    for obj in objects:
        cands = obj.candidates(qx, qy, side) if isinstance(obj, _Arc) else [obj]
        for px, py in cands:
            if side == "left" and not px < qx:
                continue
            if side == "right" and not px > qx:
                continue
            slope = (qy - py) / (qx - px)
            if best is None or (side == "left" and slope < best_slope) or (side == "right" and slope > best_slope):
                best, best_slope = (px, py), slope
    return best


def _bridge(left_objs, right_objs, s, u):
    """Upper common tangent between two local object sets by alternation."""
    for _ in range(200):
        s_new = _best(left_objs, u, "left") or s
        u_new = _best(right_objs, s_new, "right") or u
        if s_new == s and u_new == u:
            break
        s, u = s_new, u_new
    return s, u


def _exact_envelope(P, pt, a0, a1, a2, tol):
    """Bridges of the concave envelope of a piecewise-quadratic function.

    ``P`` are breakpoints, ``pt`` the usc values there and ``a*`` the local
    quadratic of each piece ``[P[m], P[m+1]]``. Returns a list of
    ``(sx, sy, ux, uy)`` segments where the envelope is a chord; elsewhere
    it coincides with the function.
    """
    n = P.size
    V = upper_hull(P, pt)
    arcs = [_Arc(P[m], P[m + 1], a0[m], a1[m], a2[m]) for m in range(n - 1)]

    def end_val(m):
        return arcs[m].value(P[m + 1])

    def is_arc_edge(a, b):
        return (b == a + 1 and a2[a] <= tol and abs(a0[a] - pt[a]) <= tol
                and abs(end_val(a) - pt[b]) <= tol)

    spans = []
    for a, b in zip(V[:-1], V[1:]):
        if not is_arc_edge(a, b):
            spans.append((a, b))
    # convex kink between two arc edges that the discrete hull kept
    for k in range(1, V.size - 1):
        v = V[k]
        if is_arc_edge(V[k - 1], v) and is_arc_edge(v, V[k + 1]):
            slope_in = a1[v - 1] + a2[v - 1] * (P[v] - P[v - 1])
            if a1[v] > slope_in + tol:
                spans.append((v, v))
    spans.sort()
    if spans and (spans[0][0] == V[0] or spans[-1][1] == V[-1]):
        raise ValueError("envelope chord reaches the end of the extended grid; increase the margin")

    bridges = []
    for a, b in spans:
        left = [(P[a], pt[a])] + [arcs[m] for m in (a - 1, a) if 0 <= m < n - 1 and a2[m] < 0]
        right = [(P[b], pt[b])] + [arcs[m] for m in (b - 1, b) if 0 <= m < n - 1 and a2[m] < 0]
        if a == b:
            left = [arcs[a - 1]] + left
            right = right + [arcs[b]]
            s0 = (0.5 * (P[a - 1] + P[a]), arcs[a - 1].value(0.5 * (P[a - 1] + P[a])))
            u0 = (0.5 * (P[b] + P[b + 1]), arcs[b].value(0.5 * (P[b] + P[b + 1])))
        else:
            s0, u0 = (P[a], pt[a]), (P[b], pt[b])
        s, u = _bridge(left, right, s0, u0)
        bridges.append((s[0], s[1], u[0], u[1]))
    for (_, _, ux, _), (sx, _, _, _) in zip(bridges[:-1], bridges[1:]):
        if ux > sx + tol:
            raise RuntimeError("overlapping envelope chords; grid too coarse to resolve the payoff")
    return bridges


# --------------------------------------------------------------------------
# face-lift
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FaceLiftedPayoff:
    """``g_hat = (g - Gamma)^conc + Gamma``, exactly evaluable on the extended grid."""

    x: np.ndarray
    g: np.ndarray
    g_hat: np.ndarray
    gamma_bar: np.ndarray
    cap: GammaCap
    payoff: object
    antiderivative: GammaAntiderivative
    bridges: tuple
    closed_form: Optional[str] = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.payoff.upper(x), dtype=float).copy()
        for sx, sy, ux, uy in self.bridges:
            m = (x > sx) & (x < ux)
            if m.any():
                xm = x[m]
                out[m] = sy + (uy - sy) / (ux - sx) * (xm - sx) + self.antiderivative(xm)
        return out[()]

    def upper(self, x):
        return self(x)

    def active(self, x, tol=1e-12):
        """True where the lift is strictly above the payoff."""
        x = np.asarray(x, dtype=float)
        return np.asarray(self(x)) > np.asarray(self.payoff.upper(x)) + tol

    # lets a face-lifted payoff be face-lifted again
    def breakpoints(self):
        ends = [v for b in self.bridges for v in (b[0], b[2])]
        return np.unique(np.r_[self.payoff.breakpoints(), ends])

    def local_quadratic(self, l, r):
        l = np.asarray(l, dtype=float)
        r = np.asarray(r, dtype=float)
        v, s, c = (np.array(a, dtype=float) for a in self.payoff.local_quadratic(l, r))
        mid = 0.5 * (l + r)
        G = self.antiderivative
        for sx, sy, ux, uy in self.bridges:
            m = (mid > sx) & (mid < ux)
            if m.any():
                slope = (uy - sy) / (ux - sx)
                v[m] = sy + slope * (l[m] - sx) + G(l[m])
                s[m] = slope + G.derivative(l[m])
                c[m] = G.curvature_at(mid[m])
        return v, s, c

    def infimum(self):
        return self.payoff.infimum()

    @property
    def c0(self):
        return self.payoff.c0

    @property
    def c1(self):
        return self.payoff.c1

    def to_csv(self, path, x=None):
        xs = self.x if x is None else np.asarray(x, dtype=float)
        g = np.asarray(self.payoff(xs)) * np.ones_like(xs)
        gh = np.asarray(self(xs)) * np.ones_like(xs)
        gb = np.asarray(self.cap.gamma_bar(xs)) * np.ones_like(xs)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "g", "g_hat", "gamma_bar"])
            for row in zip(xs, g, gh, gb):
                w.writerow([repr(float(v)) for v in row])


def default_margin(payoff, cap, grid):
    x = np.asarray(grid, dtype=float)
    return 2.0 * (payoff.c1 / cap.iota + max(abs(x[0]), abs(x[-1])))


def _extend(x, margin):
    h_l, h_r = x[1] - x[0], x[-1] - x[-2]
    n_l = int(math.ceil(margin / h_l - 1e-9)) if margin > 0 else 0
    n_r = int(math.ceil(margin / h_r - 1e-9)) if margin > 0 else 0
    return np.r_[x[0] - h_l * np.arange(n_l, 0, -1), x, x[-1] + h_r * np.arange(1, n_r + 1)]


def face_lift(payoff, cap, grid, margin=None):
    """Face-lift ``payoff`` under ``cap`` on ``grid`` extended by ``margin`` each side.

    The envelope is resolved exactly for piecewise-linear payoffs: chords are
    tangent-polished against the local quadratic pieces of ``g - Gamma``, so
    node values carry rounding error only.
    """
    x = _check_grid(grid)
    if margin is None:
        margin = default_margin(payoff, cap, x)
    ext = _extend(x, float(margin))
    G = gamma_antiderivative(cap, ext)
    kn = np.asarray(payoff.breakpoints(), dtype=float)
    kn = kn[(kn > ext[0]) & (kn < ext[-1])]
    P = np.union1d(ext, kn)
    l, r = P[:-1], P[1:]
    v, s, c = payoff.local_quadratic(l, r)
    a0 = v - G(l)
    a1 = s - G.derivative(l)
    a2 = c - G.curvature_at(0.5 * (l + r))
    pt = np.asarray(payoff.upper(P), dtype=float) - G(P)
    tol = 1e-11 * max(1.0, float(np.abs(pt).max()))
    bridges = tuple(_exact_envelope(P, pt, a0, a1, a2, tol))
    tag = None
    gb = cap.gamma_bar
    if isinstance(payoff, Payoff) and gb.is_constant and closed_form_face_lift(payoff, gb.params[0]) is not None:
        tag = payoff.kind
    fl = FaceLiftedPayoff(
        x=ext,
        g=np.asarray(payoff.upper(ext), dtype=float) * np.ones_like(ext),
        g_hat=np.zeros_like(ext),
        gamma_bar=np.asarray(gb(ext), dtype=float) * np.ones_like(ext),
        cap=cap,
        payoff=payoff,
        antiderivative=G,
        bridges=bridges,
        closed_form=tag,
    )
    object.__setattr__(fl, "g_hat", np.asarray(fl(ext), dtype=float) * np.ones_like(ext))
    _check_lift(fl, P, pt, G, tol)
    return fl


def _check_lift(fl, P, pt, G, tol):
    lifted = np.asarray(fl(P)) - G(P)
    if (lifted < pt - 10 * tol).any():
        raise RuntimeError("face-lift fell below the payoff")
    mids = 0.5 * (P[1:] + P[:-1])
    xs = np.sort(np.r_[P, mids])
    phi = np.asarray(fl(xs)) - G(xs)
    d1 = np.diff(phi) / np.diff(xs)
    if (np.diff(d1) > 1e-7 * max(1.0, float(np.abs(d1).max()))).any():
        raise RuntimeError("face-lift minus Gamma is not concave")


def closed_form_face_lift(payoff, gamma_bar):
    """Analytic face-lift for a constant cap, or ``None`` when none is known.

    Covers the digital ``1{x >= K}`` and the call spread and butterfly under
    the strike-spacing conditions that keep the lifted regions separate.
    """
    gb = float(gamma_bar)
    if payoff.kind == "digital":
        (K,) = payoff.params
        xo = K - math.sqrt(2.0 / gb)

        def fn(x):
            x = np.asarray(x, dtype=float)
            return np.minimum(1.0, np.where(x >= xo, 0.5 * gb * (x - xo) ** 2, 0.0))
        return fn
    if payoff.kind == "call_spread":
        K1, K2 = payoff.params
        if K1 + 1.0 / (2 * gb) > K2:
            return None
        xm, xp = K1 - 1.0 / (2 * gb), K1 + 1.0 / (2 * gb)

        def fn(x):
            x = np.asarray(x, dtype=float)
            return (0.5 * gb * (x - xm) ** 2 * ((x >= xm) & (x < xp))
                    + (x - K1) * ((x >= xp) & (x < K2))
                    + (K2 - K1) * (x >= K2))
        return fn
    if payoff.kind == "butterfly":
        K1, K2, K3 = payoff.params
        if not (K1 + 1.0 / (2 * gb) <= K2 <= K3 - 1.0 / (2 * gb)):
            return None
        x1m, x1p = K1 - 1.0 / (2 * gb), K1 + 1.0 / (2 * gb)
        x2m, x2p = K3 - 1.0 / (2 * gb), K3 + 1.0 / (2 * gb)
        top = 2 * K2 - (K1 + K3)

        def fn(x):
            x = np.asarray(x, dtype=float)
            return (0.5 * gb * (x - x1m) ** 2 * ((x >= x1m) & (x < x1p))
                    + (x - K1) * ((x >= x1p) & (x < K2))
                    + (x - K1 - 2 * (x - K2)) * ((x >= K2) & (x < x2m))
                    + (0.5 * gb * (x - x2p) ** 2 + top) * ((x >= x2m) & (x < x2p))
                    + top * (x >= x2p))
        return fn
    return None


# --------------------------------------------------------------------------
# clamp bounds
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthBounds:
    """Lower constant and upper quadratic-then-linear bound on the price."""

    w_low: float
    eta: float
    A: float
    c0: float
    c1: float

    @property
    def x_o(self):
        return self.c1 / self.eta

    def w_high(self, t, x):
        x = np.asarray(x, dtype=float)
        base = 1.0 + 2.0 * self.c0
        inner = base + self.c1 ** 2 / (2.0 * self.eta) + 0.5 * self.eta * x * x
        outer = base + self.c1 * np.abs(x)
        env = np.where(np.abs(x) <= self.x_o, inner, outer)
        return (env + 1.0 + self.A + 0.0 * np.asarray(t, dtype=float))[()]

    def __iter__(self):
        yield self.w_low
        yield self.w_high


def growth_bounds(payoff, cap, market, T, x=None):
    """Clamp bounds ``(w_low, w_high)`` for the scheme on ``[0, T]``.

    ``w_low`` is the infimum of the payoff; ``w_high`` the explicit envelope
    ``(1 + 2c0 + c1|x| - eta x^2/2)^conc + eta x^2/2 + 1 + A`` with
    ``eta = min(iota, 1/sup f) / 2`` and ``A = T sup sigma^2 gb / (2(1 - f gb))``.
    """
    xs = np.linspace(*market.domain, 2001) if x is None else np.asarray(x, dtype=float)
    one = np.ones_like(xs)
    s = market.sigma(xs) * one
    f = market.f(xs) * one
    gb = cap.gamma_bar(xs) * one
    A = float(T) * float(np.max(s * s * gb / (2.0 * (1.0 - f * gb))))
    eta = 0.5 * min(cap.iota, 1.0 / float(np.max(f)))
    return GrowthBounds(float(payoff.infimum()), eta, A, float(payoff.c0), float(payoff.c1))
