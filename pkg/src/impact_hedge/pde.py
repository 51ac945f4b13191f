"""Backward monotone finite-difference solver for the gamma-constrained price."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, special

from . import kernels
from .model import face_lift, growth_bounds


@dataclass(frozen=True)
class Grid:
    x_min: float
    x_max: float
    n_x: int
    n_t: int
    T: float

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be below x_max")
        if self.n_x < 4:
            raise ValueError("n_x must be at least 4")
        if self.n_t < 1:
            raise ValueError("n_t must be at least 1")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def h_x(self):
        return (self.x_max - self.x_min) / self.n_x

    @property
    def h_t(self):
        return self.T / self.n_t

    @property
    def ratio(self):
        """``h_t / h_x**2``; must shrink under refinement."""
        return self.h_t / self.h_x ** 2

    @property
    def x(self):
        return np.linspace(self.x_min, self.x_max, self.n_x + 1)

    @property
    def t(self):
        return np.linspace(0.0, self.T, self.n_t + 1)

    def refined(self, level, exponent=2.5):
        """Halve ``h_x`` ``level`` times keeping ``h_t / h_x**exponent`` fixed."""
        c = self.h_t / self.h_x ** exponent
        n_x = self.n_x * 2 ** level
        h_x = (self.x_max - self.x_min) / n_x
        n_t = max(1, int(math.ceil(self.T / (c * h_x ** exponent) - 1e-9)))
        return Grid(self.x_min, self.x_max, n_x, n_t, self.T)


@dataclass(frozen=True)
class PriceSurface:
    """Scheme solution on ``grid`` with per-node diagnostics.

    ``clamp`` is -1/0/+1 for lower/no/upper clamp, ``binding`` marks nodes
    where the gamma cap is the active branch (on the terminal row: where the
    face-lift lies strictly above the payoff), and ``res_L1``/``res_L2`` are
    the two scheme residuals at the stored value (NaN on boundary and
    terminal nodes).
    """

    grid: Grid
    values: np.ndarray
    w_low: float
    w_high: np.ndarray
    clamp: np.ndarray
    binding: np.ndarray
    res_L1: np.ndarray
    res_L2: np.ndarray
    market: object = None
    cap: object = None
    face_lifted: object = None

    @property
    def x(self):
        return self.grid.x

    @property
    def t(self):
        return self.grid.t

    def __call__(self, t, x):
        """Bilinear interpolation of the surface."""
        g = self.grid
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        st = np.clip(t / g.h_t, 0, g.n_t)
        i = np.minimum(np.floor(st).astype(int), g.n_t - 1)
        wt = st - i
        sx = np.clip((x - g.x_min) / g.h_x, 0, g.n_x)
        j = np.minimum(np.floor(sx).astype(int), g.n_x - 1)
        wx = sx - j
        v = self.values
        a = (1 - wx) * v[i, j] + wx * v[i, j + 1]
        b = (1 - wx) * v[i + 1, j] + wx * v[i + 1, j + 1]
        return ((1 - wt) * a + wt * b)[()]

    def row_gamma(self, i):
        """Second differences of row ``i`` at interior nodes."""
        r = self.values[i]
        return (r[2:] + r[:-2] - 2 * r[1:-1]) / self.grid.h_x ** 2

    def check(self, tol=1e-9):
        """Dictionary of invariant checks; every entry should be True."""
        v = self.values
        interior = np.zeros(v.shape, dtype=bool)
        interior[:-1, 1:-1] = True
        free = interior & (self.clamp == 0)
        r1, r2 = self.res_L1[free], self.res_L2[free]
        return {
            "clamp_bounds": bool((v >= self.w_low).all() and (v <= self.w_high[None, :]).all()),
            "residuals_nonnegative": bool((r1 >= -tol).all() and (r2 >= -tol).all()),
            "residual_min_zero": bool((np.minimum(r1, r2) <= tol).all()),
            "boundary_frozen": bool(np.all(v[:, 0] == v[-1, 0]) and np.all(v[:, -1] == v[-1, -1])),
        }

    def to_csv(self, path):
        g = self.grid
        t, x = g.t, g.x
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "v", "clamped", "res_L1", "res_L2"])
            for i in range(g.n_t + 1):
                for j in range(g.n_x + 1):
                    w.writerow([repr(float(t[i])), repr(float(x[j])), repr(float(self.values[i, j])),
                                int(self.clamp[i, j]), repr(float(self.res_L1[i, j])),
                                repr(float(self.res_L2[i, j]))])


def discrete_gamma(next_row, j, y, h_x):
    """``(next[j+1] + next[j-1] - 2 y) / h_x**2``."""
    n = len(next_row)
    if not 1 <= j <= n - 2:
        raise IndexError(f"node {j} is not interior to a row of length {n}")
    return (next_row[j + 1] + next_row[j - 1] - 2.0 * y) / (h_x * h_x)


@dataclass(frozen=True)
class NodeResult:
    y: float
    clamp: int
    binding: bool
    res_L1: float
    res_L2: float


def scheme_residuals(next_row, j, y, h_t, h_x, sigma, f, gamma_bar):
    """``(L1, L2)`` of the scheme at value ``y`` of node ``j``."""
    g = discrete_gamma(next_row, j, y, h_x)
    l1 = -(next_row[j] - y) / h_t - sigma ** 2 * g / (2.0 * (1.0 - f * g))
    return l1, gamma_bar - g


def node_solve(next_row, j, h_t, h_x, sigma, f, gamma_bar, w_low=-math.inf, w_high=math.inf,
               tol=1e-12, where=None):
    """Solve one node: root of ``min(L1, L2)`` clamped to ``[w_low, w_high]``.

    ``sigma``, ``f`` and ``gamma_bar`` are the coefficient values at the node.
    """
    next_row = np.asarray(next_row, dtype=float)
    if not 1 <= j <= next_row.size - 2:
        raise IndexError(f"node {j} is not interior")
    nb = next_row[j - 1:j + 2]
    if not np.isfinite(nb).all():
        raise ValueError(f"non-finite neighbour values at node {where or j}")
    y0, bind = kernels.node_root(nb[1], nb[2], nb[0], h_t, h_x, sigma * sigma, f, gamma_bar, tol)
    if not math.isfinite(y0):
        raise ArithmeticError(f"root search failed at node {where or j}")
    y, c = y0, 0
    if y < w_low:
        y, c = w_low, -1
    elif y > w_high:
        y, c = w_high, 1
    l1, l2 = scheme_residuals(next_row, j, y, h_t, h_x, sigma, f, gamma_bar)
    return NodeResult(float(y), c, bind, float(l1), float(l2))


def solve_surface(market, cap, face_lifted, grid, tol=1e-12, backend=None, keep_every=1):
    """March the scheme from ``T`` back to 0 on ``grid``.

    The terminal row and both boundary columns are the face-lifted payoff.
    With ``keep_every > 1`` only every ``keep_every``-th time level is stored
    and the returned surface lives on the correspondingly coarser time grid;
    the scheme itself still steps with ``grid.h_t``.
    """
    keep = int(keep_every)
    if keep < 1 or grid.n_t % keep:
        raise ValueError("keep_every must divide n_t")
    x = grid.x
    market.validate(x)
    cap.validate(market, x)
    _, sig, fv, _ = market.sample(x)
    gb = np.asarray(cap.gamma_bar(x), dtype=float) * np.ones_like(x)
    s2 = sig * sig
    bounds = growth_bounds(face_lifted.payoff, cap, market, grid.T, x)
    w_low = bounds.w_low
    w_high = np.asarray(bounds.w_high(0.0, x), dtype=float)
    ghat = np.asarray(face_lifted(x), dtype=float) * np.ones_like(x)
    if (ghat < w_low).any() or (ghat > w_high).any():
        raise ValueError("face-lifted payoff violates the clamp bounds")

    n_keep = grid.n_t // keep
    shape = (n_keep + 1, grid.n_x + 1)
    v = np.empty(shape)
    clamp = np.zeros(shape, dtype=np.int8)
    binding = np.zeros(shape, dtype=bool)
    res1 = np.full(shape, np.nan)
    res2 = np.full(shape, np.nan)
    v[-1] = ghat
    binding[-1] = face_lifted.active(x)
    h_t, h_x = grid.h_t, grid.h_x
    nxt = ghat
    for i in range(grid.n_t - 1, -1, -1):
        row, c, b, r1, r2 = kernels.solve_row(nxt, h_t, h_x, s2, fv, gb, w_low, w_high,
                                              rtol=tol, backend=backend)
        if not np.isfinite(row).all():
            j = int(np.flatnonzero(~np.isfinite(row))[0])
            raise ArithmeticError(f"scheme produced a non-finite value at t={i * h_t:g}, x={x[j]:g}")
        row[0], row[-1] = ghat[0], ghat[-1]
        if i % keep == 0:
            k = i // keep
            v[k], clamp[k], binding[k], res1[k], res2[k] = row, c, b, r1, r2
        nxt = row
    stored = grid if keep == 1 else Grid(grid.x_min, grid.x_max, grid.n_x, n_keep, grid.T)
    return PriceSurface(stored, v, w_low, w_high, clamp, binding, res1, res2, market, cap, face_lifted)


def price(market, cap, payoff, grid, margin=None, tol=1e-12, backend=None, keep_every=1):
    """Face-lift ``payoff`` on ``grid`` and solve."""
    fl = face_lift(payoff, cap, grid.x, margin)
    return solve_surface(market, cap, fl, grid, tol, backend, keep_every)


# --------------------------------------------------------------------------
# heat-equation oracle
# --------------------------------------------------------------------------

_Z = 14.0


def _gauss_expect(g, x, s, knots):
    pts = [-_Z]
    if knots is not None:
        pts += sorted(float(z) for z in (np.asarray(knots) - x) / s if -_Z < z < _Z)
    pts.append(_Z)
    total = 0.0
    dens = lambda z: g(x + s * z) * math.exp(-0.5 * z * z)  # noqa: E731
    for a, b in zip(pts[:-1], pts[1:]):
        if b > a:
            val, _ = integrate.quad(dens, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)
            total += val
    return total / math.sqrt(2 * math.pi)


def heat_price_oracle(g, sigma0, t, x, T, knots=None):
    """``E[g(x + sigma0 sqrt(T - t) Z)]`` by adaptive quadrature.

    ``knots`` (kinks or jumps of ``g``) split the integration range; for a
    :class:`~impact_hedge.model.Payoff` they are taken from the payoff.
    """
    vals = np.asarray([sigma0, t, T], dtype=float)
    x = np.asarray(x, dtype=float)
    if not (np.isfinite(vals).all() and np.isfinite(x).all()):
        raise ValueError("heat oracle inputs must be finite")
    if knots is None and hasattr(g, "breakpoints"):
        knots = g.breakpoints()
    tau = T - t
    if tau < 0:
        raise ValueError("t must not exceed T")
    if tau == 0 or sigma0 == 0:
        return np.asarray(g(x), dtype=float)[()]
    s = sigma0 * math.sqrt(tau)
    gs = lambda z: float(g(z))  # noqa: E731
    out = np.array([_gauss_expect(gs, float(xi), s, knots) for xi in x.ravel()])
    return out.reshape(x.shape)[()]


def bachelier_call(x, K, s):
    """``E[(x + s Z - K)^+]``."""
    x = np.asarray(x, dtype=float)
    d = (x - K) / s
    return (x - K) * special.ndtr(d) + s * np.exp(-0.5 * d * d) / math.sqrt(2 * math.pi)


# --------------------------------------------------------------------------
# refinement
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceReport:
    rows: tuple  # (level, h_t, h_x, max_diff, ratio)
    surfaces: tuple

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "h_t", "h_x", "max_diff", "ratio"])
            for row in self.rows:
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    @property
    def max_diffs(self):
        return np.array([r[3] for r in self.rows])


def central_mask(x, x_min, x_max):
    c, half = 0.5 * (x_min + x_max), 0.25 * (x_max - x_min)
    return np.abs(np.asarray(x) - c) <= half + 1e-12


def refine_and_estimate(market, cap, payoff, base_grid, levels, margin=None, exponent=2.5,
                        keep_surfaces=False, backend=None):
    """Solve on ``levels`` successively halved grids and compare them.

    Level ``l`` has ``h_x`` halved ``l`` times and ``h_t / h_x**exponent``
    fixed. The difference between consecutive levels is measured on the
    coarser level's nodes in the central half of the domain, after
    interpolating the finer surface.
    """
    if levels < 2:
        raise ValueError("need at least two levels")
    rows, kept = [], []
    prev = None
    prev_diff = math.nan
    for lev in range(levels):
        g = base_grid.refined(lev, exponent)
        surf = price(market, cap, payoff, g, margin, backend=backend)
        if prev is None:
            diff = math.nan
        else:
            pg = prev.grid
            m = central_mask(pg.x, pg.x_min, pg.x_max)
            T, X = np.meshgrid(pg.t, pg.x[m], indexing="ij")
            diff = float(np.max(np.abs(surf(T, X) - prev.values[:, m])))
        ratio = diff / prev_diff if lev >= 2 else math.nan
        rows.append((lev, g.h_t, g.h_x, diff, ratio))
        prev_diff = diff
        prev = surf
        if keep_surfaces or lev == levels - 1:
            kept.append(surf)
    return ConvergenceReport(tuple(rows), tuple(kept))
