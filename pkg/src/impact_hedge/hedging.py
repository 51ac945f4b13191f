"""Verification controls read off a price surface, and their Monte Carlo check."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import kernels
from ._accel import backend_name
from .dynamics import brownian_increments


@dataclass(frozen=True)
class SurfaceDerivatives:
    grid: object
    v: np.ndarray
    v_x: np.ndarray
    v_xx: np.ndarray
    v_tx: np.ndarray
    v_xxx: np.ndarray
    smoothing_delta: float = 0.0

    def interpolate(self, name, t, x):
        g = self.grid
        arr = getattr(self, name)
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        st = np.clip(t / g.h_t, 0, g.n_t)
        i = np.minimum(np.floor(st).astype(int), g.n_t - 1)
        wt = st - i
        sx = np.clip((x - g.x_min) / g.h_x, 0, g.n_x)
        j = np.minimum(np.floor(sx).astype(int), g.n_x - 1)
        wx = sx - j
        a = (1 - wx) * arr[i, j] + wx * arr[i, j + 1]
        b = (1 - wx) * arr[i + 1, j] + wx * arr[i + 1, j + 1]
        return ((1 - wt) * a + wt * b)[()]


def _second_diff(v, h):
    out = np.empty_like(v)
    out[:, 1:-1] = (v[:, 2:] + v[:, :-2] - 2 * v[:, 1:-1]) / (h * h)
    out[:, 0] = out[:, 1]
    out[:, -1] = out[:, -2]
    return out


def surface_derivatives(surface, delta=0.0):
    """Finite-difference derivatives of ``surface``, mollified first if ``delta > 0``.

    Space derivatives are central; ``v_tx`` is a forward difference in time.
    """
    if delta > 0:
        surface = mollify_surface(surface, delta)
    g = surface.grid
    v = surface.values
    h = g.h_x
    v_x = np.gradient(v, h, axis=1, edge_order=2)
    v_xx = _second_diff(v, h)
    v_xxx = np.gradient(v_xx, h, axis=1, edge_order=1)
    v_tx = np.empty_like(v)
    v_tx[:-1] = (v_x[1:] - v_x[:-1]) / g.h_t
    v_tx[-1] = v_tx[-2]
    return SurfaceDerivatives(g, v, v_x, v_xx, v_tx, v_xxx, float(delta))


def _bump(u):
    out = np.zeros_like(u)
    m = np.abs(u) < 1
    out[m] = np.exp(-1.0 / (1.0 - u[m] ** 2))
    return out


def mollify_surface(surface, delta):
    """Smooth ``surface`` with a nonnegative bump kernel of half-width ``delta``.

    In space the kernel is symmetric with unit mass, and the grid is
    extended by odd reflection so affine rows are preserved. In time it
    averages the current and earlier levels over a window ``delta**2``
    (parabolic scaling). The result is clipped to the clamp bounds.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta == 0:
        return surface
    g = surface.grid
    if delta > 0.25 * (g.x_max - g.x_min):
        raise ValueError("delta exceeds a quarter of the domain")
    v = surface.values
    m = max(1, int(math.ceil(delta / g.h_x)))
    wx = _bump(np.arange(-m, m + 1) * g.h_x / delta)
    if wx.sum() == 0:
        return surface
    wx /= wx.sum()
    left = 2 * v[:, :1] - v[:, m:0:-1]
    right = 2 * v[:, -1:] - v[:, -2:-m - 2:-1]
    ext = np.concatenate([left, v, right], axis=1)
    sm = np.zeros_like(v)
    n = v.shape[1]
    for k, w in enumerate(wx):
        sm += w * ext[:, k:k + n]
    q = int(math.floor(delta * delta / g.h_t))
    if q >= 1:
        wt = _bump((np.arange(q + 1) + 0.5) / (q + 1))
        out = np.zeros_like(sm)
        mass = np.zeros((sm.shape[0], 1))
        for k, w in enumerate(wt):
            out[k:] += w * sm[: sm.shape[0] - k]
            mass[k:] += w
        sm = out / mass
    sm = np.clip(sm, surface.w_low, surface.w_high[None, :])
    return replace(surface, values=sm)


def gamma_of_a(a, x, market):
    """``a / (sigma(x) + f(x) a)``, the holdings' sensitivity to the price."""
    _, sig, f, _ = market.sample(x)
    den = sig + f * np.asarray(a, dtype=float)
    if np.any(np.abs(den) < 1e-14):
        raise ZeroDivisionError("sigma + f a vanishes")
    return (np.asarray(a, dtype=float) / den)[()]


class SingularControl(ArithmeticError):
    pass


def controls_from_surface(derivs, market, t, x, den_min=0.0, R=0.0, rho=0.0):
    """``(a_hat, b_hat)`` at ``(t, x)`` from interpolated derivatives.

    ``a_hat = sigma v_xx / (1 - f v_xx)`` and
    ``b_hat = (v_tx + v_xx (mu - rho R + a_hat sigma f') + v_xxx (sigma + a_hat f)^2 / 2) / (1 - f v_xx)``;
    ``rho R`` vanishes without resilience.
    """
    mu, sig, f, fp = market.sample(x)
    vxx = derivs.interpolate("v_xx", t, x)
    den = 1.0 - f * vxx
    if np.any(den < den_min):
        raise SingularControl(f"1 - f v_xx = {np.min(den):g} below {den_min:g} at t={t}, x={x}, v_xx={vxx}")
    a = sig * vxx / den
    vol = sig + a * f
    b = (derivs.interpolate("v_tx", t, x) + vxx * (mu - rho * R + a * sig * fp)
         + 0.5 * derivs.interpolate("v_xxx", t, x) * vol * vol) / den
    return a[()] if np.ndim(a) else float(a), b[()] if np.ndim(b) else float(b)


@dataclass(frozen=True)
class HedgeReport:
    n_paths: int
    n_exited: int
    success_rate: float
    success_stderr: float
    shortfall_q50: float
    shortfall_q95: float
    shortfall_q99: float
    mean_slack: float
    gamma_violation_rate: float
    lower_violation_rate: float
    max_delta_gap: float
    max_wealth_residual: float
    min_denominator: float
    price: float
    eps: float
    x0: float
    dt: float
    seed: int
    rho: float
    tol_pay: float
    delta: float
    backend: str
    terminal: dict = field(default=None, repr=False, compare=False)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "terminal"}

    def to_text(self):
        return "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n"
                       for k, v in self.as_dict().items())

    def write_csv_row(self, path, header=True):
        d = self.as_dict()
        with open(path, "a" if not header else "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if header:
                w.writerow(list(d))
            w.writerow([repr(v) if isinstance(v, float) else v for v in d.values()])

    def write_terminal(self, path):
        t = self.terminal
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_id", "X_T", "V_T", "slack", "exited"])
            for p in range(t["X_T"].size):
                w.writerow([p, repr(float(t["X_T"][p])), repr(float(t["V_T"][p])),
                            repr(float(t["slack"][p])), int(t["exited"][p])])


def verify_superhedge(surface, market, cap, payoff, x0, eps, n_paths, dt, seed, rho=0.0, delta=0.0,
                      max_exit_fraction=0.2, n_record=0, backend=None):
    """Run the verification hedge from wealth ``v(0, x0) + eps`` and score it.

    A path succeeds when ``V_T >= g(X_T) - tol_pay`` with
    ``tol_pay = 1e-4 (1 + |v(0, x0)|)``. Paths leaving the grid are frozen,
    counted and left out of the success statistics. With ``rho > 0`` the
    price carries a resilient impact state and ``b_hat`` compensates its
    drift so that the holdings keep tracking ``v_x``.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    g = surface.grid
    if not g.x_min < x0 < g.x_max:
        raise ValueError("x0 must lie inside the grid")
    n_steps = int(round(g.T / dt))
    if n_steps < 1 or abs(n_steps * dt - g.T) > 1e-9 * g.T:
        raise ValueError("dt must divide the horizon")
    d = surface_derivatives(surface, delta)
    x = g.x
    mu, sig, f, fp = market.sample(x)
    gb = np.asarray(cap.gamma_bar(x), dtype=float) * np.ones_like(x)
    den_min = 0.5 * market.f_min * cap.iota
    price = float(d.interpolate("v", 0.0, x0))
    y0 = float(d.interpolate("v_x", 0.0, x0))
    dw = brownian_increments(seed, n_paths, n_steps, dt)
    out_f, out_i, rec = kernels.hedge_paths(
        (d.v, d.v_x, d.v_xx, d.v_tx, d.v_xxx), g.x_min, g.h_x, g.h_t, 0.0, dt,
        (mu, sig, f, fp, gb), cap.k_or_default(x), rho, den_min, x0, y0, price + eps, dw,
        n_record=n_record, backend=backend)
    status = out_i[:, 3]
    if (status == kernels.HEDGE_SINGULAR).any():
        p = int(np.flatnonzero(status == kernels.HEDGE_SINGULAR)[0])
        raise SingularControl(f"path {p}: 1 - f v_xx fell to {out_f[p, 5]:g}")
    if (status == kernels.HEDGE_NAN).any():
        raise FloatingPointError("non-finite state in the hedge simulation")
    exited = out_i[:, 0] > 0
    if exited.mean() > max_exit_fraction:
        raise RuntimeError(f"{exited.mean():.1%} of paths left the grid; widen [x_min, x_max]")
    XT, VT = out_f[:, 0], out_f[:, 2]
    slack = VT - np.asarray(payoff(XT), dtype=float)
    tol_pay = 1e-4 * (1 + abs(price))
    keep = ~exited
    ok = slack[keep] >= -tol_pay
    n_ok = int(keep.sum())
    rate = float(ok.mean()) if n_ok else math.nan
    short = -slack[keep]
    q = np.quantile(short, [0.5, 0.95, 0.99]) if n_ok else [math.nan] * 3
    steps = max(1, n_steps * n_paths)
    return HedgeReport(
        n_paths=int(n_paths), n_exited=int(exited.sum()), success_rate=rate,
        success_stderr=float(math.sqrt(rate * (1 - rate) / n_ok)) if n_ok else math.nan,
        shortfall_q50=float(q[0]), shortfall_q95=float(q[1]), shortfall_q99=float(q[2]),
        mean_slack=float(slack[keep].mean()) if n_ok else math.nan,
        gamma_violation_rate=float(out_i[:, 1].sum() / steps),
        lower_violation_rate=float(out_i[:, 2].sum() / steps),
        max_delta_gap=float(out_f[:, 3].max()), max_wealth_residual=float(out_f[:, 4].max()),
        min_denominator=float(out_f[:, 5].min()), price=price, eps=float(eps), x0=float(x0),
        dt=float(dt), seed=int(seed), rho=float(rho), tol_pay=tol_pay, delta=float(delta),
        backend=backend or backend_name(),
        terminal={"X_T": XT, "V_T": VT, "slack": slack, "exited": exited, "ok": slack >= -tol_pay,
                  "record": rec},
    )
