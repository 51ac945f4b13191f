"""Simulators for the impacted price, holdings and wealth."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


def brownian_increments(seed, n_paths, n_steps, dt):
    """``(n_paths, n_steps)`` Gaussian increments of variance ``dt``.

    Path ``p`` draws from its own stream spawned from ``seed``, so any subset
    of paths is reproducible independently of how many are requested.
    """
    children = np.random.SeedSequence(seed).spawn(n_paths)
    out = np.empty((n_paths, n_steps))
    sd = math.sqrt(dt)
    for p, ss in enumerate(children):
        out[p] = np.random.default_rng(ss).standard_normal(n_steps) * sd
    return out


@dataclass
class SimPath:
    """Trajectories on ``times``; arrays are ``(n_paths, len(times))`` or 1-D for a single path.

    ``accrual`` holds, per step, the wealth gained beyond ``Y dX``: the
    liquidity term ``a^2 f dt / 2`` in continuous time or ``delta^2 f / 2`` at
    a discrete trade.
    """

    times: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    a: np.ndarray
    R: np.ndarray
    accrual: np.ndarray

    def wealth_residual(self):
        """Max over steps of ``|dV - Y dX - accrual|``."""
        X, Y, V = (np.atleast_2d(z) for z in (self.X, self.Y, self.V))
        acc = np.atleast_2d(self.accrual)
        r = np.diff(V, axis=1) - Y[:, :-1] * np.diff(X, axis=1) - acc
        return float(np.abs(r).max()) if r.size else 0.0

    def path(self, p):
        pick = lambda z: np.atleast_2d(z)[p]  # noqa: E731
        return SimPath(self.times, *(pick(z) for z in (self.X, self.Y, self.V, self.a, self.R, self.accrual)))

    def to_csv(self, path, p=0):
        one = self.path(p) if np.ndim(self.X) == 2 else self
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "X", "Y", "V", "a", "R"])
            for row in zip(one.times, one.X, one.Y, one.V, one.a, one.R):
                w.writerow([repr(float(v)) for v in row])


@dataclass(frozen=True)
class ControlProcess:
    """Feedback controls ``a(t, X, Y)`` and ``b(t, X, Y)`` with bound ``k``.

    ``dY = b dt + a dW``. ``alpha``/``beta`` drive ``a`` itself when ``a`` is
    a state rather than a feedback; they are kept for completeness and only
    bound-checked.
    """

    a: Callable
    b: Callable
    k: float = math.inf
    a0: float = 0.0
    alpha: Optional[Callable] = None
    beta: Optional[Callable] = None

    @classmethod
    def frozen(cls):
        zero = lambda t, x, y: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
        return cls(zero, zero, 0.0)

    @classmethod
    def constant(cls, a, b=0.0):
        return cls(lambda t, x, y: np.full(np.shape(x), float(a)),
                   lambda t, x, y: np.full(np.shape(x), float(b)),
                   max(abs(a), abs(b)))

    def evaluate(self, t, x, y):
        a = np.asarray(self.a(t, x, y), dtype=float) * np.ones_like(x)
        b = np.asarray(self.b(t, x, y), dtype=float) * np.ones_like(x)
        lim = self.k * (1 + 1e-12)
        if np.abs(a).max(initial=0) > lim or np.abs(b).max(initial=0) > lim:
            raise ValueError(f"controls exceed their bound k={self.k} at t={t:g}")
        return a, b


def _prep_noise(noise):
    noise = np.asarray(noise, dtype=float)
    single = noise.ndim == 1
    return np.atleast_2d(noise), single


def _finish(times, cols, single):
    if single:
        cols = [c[0] for c in cols]
    return SimPath(times, *cols)


def _simulate(market, controls, y0, x0, v0, noise, dt, rho, r0, t0, record_every, keep_r):
    dw, single = _prep_noise(noise)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    P, N = dw.shape
    stride = int(record_every)
    if stride < 1 or N % stride:
        raise ValueError("record_every must divide the number of steps")
    M = N // stride + 1
    out = [np.empty((P, M)) for _ in range(5)]
    acc_out = np.zeros((P, M - 1))
    X = np.full(P, float(x0))
    Y = np.full(P, float(y0))
    V = np.full(P, float(v0))
    R = np.full(P, float(r0))
    a = np.zeros(P)
    m = 0
    for k in range(N):
        t = t0 + k * dt
        a, b = controls.evaluate(t, X, Y)
        if k % stride == 0:
            for arr, val in zip(out, (X, Y, V, a, R)):
                arr[:, m] = val
        mu, sig, f, fp = market.sample(X)
        dW = dw[:, k]
        Xn = X + (mu + b * f + a * sig * fp - rho * R) * dt + (sig + a * f) * dW
        Yn = Y + b * dt + a * dW
        acc = 0.5 * a * a * f * dt
        Vn = V + Y * (Xn - X) + acc
        R = R + f * (Yn - Y) + (a * sig * fp - rho * R) * dt
        if not (np.isfinite(Xn).all() and np.isfinite(Vn).all() and np.isfinite(Yn).all()):
            raise FloatingPointError(f"non-finite state at step {k}")
        if stride == 1:
            acc_out[:, k] = acc
        X, Y, V = Xn, Yn, Vn
        if (k + 1) % stride == 0:
            m += 1
    a, _ = controls.evaluate(t0 + N * dt, X, Y)
    for arr, val in zip(out, (X, Y, V, a, R)):
        arr[:, M - 1] = val
    if not keep_r:
        out[4][:] = 0.0
    if stride > 1:
        acc_out[:] = np.nan
    times = t0 + dt * stride * np.arange(M)
    return _finish(times, out + [acc_out], single)


def simulate_continuous(market, controls, y0, x0, v0, noise, dt, t0=0.0, record_every=1):
    """Euler scheme for the continuous-limit impacted dynamics.

    ``dX = (mu + b f + a sigma f') dt + (sigma + a f) dW``,
    ``dY = b dt + a dW``, ``dV = Y dX + a^2 f dt / 2``. ``noise`` holds the
    Brownian increments, one row per path (or a single 1-D path).
    """
    return _simulate(market, controls, y0, x0, v0, noise, dt, 0.0, 0.0, t0, record_every, False)


def simulate_resilience(market, rho, r0, controls, y0, x0, v0, noise, dt, t0=0.0, record_every=1):
    """As :func:`simulate_continuous` with an impact state ``R`` decaying at rate ``rho``.

    ``dR = f dY + (a sigma f' - rho R) dt`` and the price drift loses
    ``rho R``.
    """
    return _simulate(market, controls, y0, x0, v0, noise, dt, float(rho), float(r0), t0, record_every, True)


def simulate_discrete(market, y_path, n, noise, substeps, x0, v0=0.0, T=1.0, y0=None, t0=0.0):
    """Rebalance to ``y_path[i]`` at ``t_i = t0 + i T / n`` with instantaneous impact.

    Between trades the price follows Euler steps of ``dX = mu dt + sigma dW``
    (``substeps`` per interval). A trade of ``delta`` shares moves the price
    by ``delta f(X-)`` and adds ``Y- delta f(X-) + delta^2 f(X-) / 2`` to the
    wealth. ``y0`` is the position held just before ``t0`` (defaults to
    ``y_path[0]``, i.e. no opening trade).
    """
    dw, single = _prep_noise(noise)
    y_path = np.asarray(y_path, dtype=float)
    if y_path.ndim == 1:
        y_path = np.broadcast_to(y_path, (dw.shape[0], y_path.size))
    P, N = dw.shape
    if y_path.shape[1] != n + 1:
        raise ValueError("y_path needs n + 1 entries")
    if N != n * substeps:
        raise ValueError(f"noise has {N} steps, expected n * substeps = {n * substeps}")
    dt = T / N
    X = np.full(P, float(x0))
    V = np.full(P, float(v0))
    Y = y_path[:, 0].copy() if y0 is None else np.full(P, float(y0))
    if y0 is not None:
        d = y_path[:, 0] - Y
        fx = market.sample(X)[2]
        V = V + Y * d * fx + 0.5 * d * d * fx
        X = X + d * fx
        Y = y_path[:, 0].copy()
    Xs, Ys, Vs = (np.empty((P, N + 1)) for _ in range(3))
    acc = np.zeros((P, N))
    Xs[:, 0], Ys[:, 0], Vs[:, 0] = X, Y, V
    for k in range(N):
        mu, sig, _, _ = market.sample(X)
        Xn = X + mu * dt + sig * dw[:, k]
        Vn = V + Y * (Xn - X)
        if (k + 1) % substeps == 0:
            d = y_path[:, (k + 1) // substeps] - Y
            fx = market.sample(Xn)[2]
            jump = d * fx
            Vn = Vn + Y * jump + 0.5 * d * jump
            acc[:, k] = 0.5 * d * jump
            Xn = Xn + jump
            Yn = Y + d
        else:
            Yn = Y
        X, Y, V = Xn, Yn, Vn
        Xs[:, k + 1], Ys[:, k + 1], Vs[:, k + 1] = X, Y, V
    times = t0 + dt * np.arange(N + 1)
    zeros = np.zeros_like(Xs)
    return _finish(times, [Xs, Ys, Vs, zeros, zeros.copy(), acc], single)


@dataclass(frozen=True)
class RateTable:
    n: np.ndarray
    sup_mse: np.ndarray
    stderr: np.ndarray
    slope: float

    def to_csv(self, path, with_slope=True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "sup_mse", "stderr"] + (["slope"] if with_slope else []))
            for n, m, s in zip(self.n, self.sup_mse, self.stderr):
                w.writerow([int(n), repr(float(m)), repr(float(s))] + ([repr(self.slope)] if with_slope else []))


def convergence_study(market, controls, n_values, n_paths, dt_fine=None, T=1.0, x0=0.0, y0=0.0,
                      v0=0.0, seed=0):
    """Strong error of discrete rebalancing against its continuous limit.

    Both systems consume the same Brownian increments on the fine mesh; the
    discrete strategy rebalances to the continuous holdings sampled at its
    trade dates. The error of ``n`` is the max over trade dates and
    midpoints of ``E|Z^n - Z|^2`` with ``Z = (X, Y, V)``. Returns a
    :class:`RateTable` whose ``slope`` is the least-squares log-log slope.
    """
    n_values = np.asarray(sorted(int(n) for n in n_values))
    if n_paths < 100:
        raise ValueError("convergence_study needs at least 100 paths")
    n_max = int(n_values[-1])
    if dt_fine is None:
        dt_fine = T / (16 * n_max)
    N = int(round(T / dt_fine))
    if abs(N * dt_fine - T) > 1e-9 * T:
        raise ValueError("dt_fine must divide T")
    if dt_fine > T / n_max / 16 * (1 + 1e-12):
        raise ValueError("dt_fine must be at most (T / n_max) / 16")
    for n in n_values:
        if N % (2 * n):
            raise ValueError(f"n={n} does not divide the fine mesh into whole half-intervals")
    dw = brownian_increments(seed, n_paths, N, dt_fine)
    cont = simulate_continuous(market, controls, y0, x0, v0, dw, dt_fine)
    mse, se = [], []
    for n in n_values:
        sub = N // n
        disc = simulate_discrete(market, cont.Y[:, ::sub], int(n), dw, sub, x0, v0, T)
        mesh = np.arange(0, N + 1, sub // 2)
        err = ((disc.X[:, mesh] - cont.X[:, mesh]) ** 2 + (disc.Y[:, mesh] - cont.Y[:, mesh]) ** 2
               + (disc.V[:, mesh] - cont.V[:, mesh]) ** 2)
        means = err.mean(axis=0)
        k = int(np.argmax(means))
        mse.append(means[k])
        se.append(err[:, k].std(ddof=1) / math.sqrt(n_paths))
    mse, se = np.array(mse), np.array(se)
    slope = float(np.polyfit(np.log(n_values), np.log(mse), 1)[0])
    return RateTable(n_values, mse, se, slope)


def rate_controls():
    """Smooth bounded feedback used by the rate experiment."""
    return ControlProcess(lambda t, x, y: 0.3 * np.cos(x + t),
                          lambda t, x, y: 0.2 * np.sin(x), k=0.3)
