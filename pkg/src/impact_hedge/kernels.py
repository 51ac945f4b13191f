"""Hot loops, each in two flavours.

Every kernel exists as a numba-compiled loop (``*_nb``) and as a pure-numpy
implementation (``*_np``). The public names dispatch on
:data:`impact_hedge._accel.USE_NUMBA` unless a ``backend`` is passed
explicitly. Both paths are covered by the same tests, and
``benchmarks/bench_kernels.py`` times them against each other.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit, prange

# status codes returned by the hedge kernel
HEDGE_OK = 0
HEDGE_SINGULAR = 1
HEDGE_NAN = 2


def _pick(backend):
    if backend is None:
        return "numba" if USE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


# --------------------------------------------------------------------------
# upper hull (concave envelope of a point set)
# --------------------------------------------------------------------------

@njit
def _upper_hull_nb(x, y):
    n = x.shape[0]
    stack = np.empty(n, dtype=np.int64)
    top = 0
    for k in range(n):
        while top >= 2:
            o = stack[top - 2]
            a = stack[top - 1]
            cross = (x[a] - x[o]) * (y[k] - y[o]) - (y[a] - y[o]) * (x[k] - x[o])
            if cross >= 0.0:
                top -= 1
            else:
                break
        stack[top] = k
        top += 1
    return stack[:top].copy()


def _upper_hull_np(x, y):
    # Repeatedly drop every point lying on or below the chord of its current
    # neighbours; such a point is not a vertex of the hull of the full set, so
    # dropping all of them at once is safe.
    idx = np.arange(x.shape[0])
    while idx.size > 2:
        xo, xa, xb = x[idx[:-2]], x[idx[1:-1]], x[idx[2:]]
        yo, ya, yb = y[idx[:-2]], y[idx[1:-1]], y[idx[2:]]
        cross = (xa - xo) * (yb - yo) - (ya - yo) * (xb - xo)
        drop = cross >= 0.0
        if not drop.any():
            break
        keep = np.ones(idx.size, dtype=bool)
        keep[1:-1] = ~drop
        idx = idx[keep]
    return idx


def upper_hull(x, y, backend=None):
    """Indices of the upper-hull vertices of points sorted by strictly increasing x."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if _pick(backend) == "numba":
        return _upper_hull_nb(x, y)
    return _upper_hull_np(x, y)


# --------------------------------------------------------------------------
# backward row of the monotone scheme
# --------------------------------------------------------------------------

@njit
def _node_root_nb(pc, pp, pm, h_t, h2, s2, f, gb, rtol):
    """Root of min(L1, L2) at one node; returns (y0, binding)."""
    y2 = 0.5 * (pp + pm - gb * h2)
    g2 = (pp + pm - 2.0 * y2) / h2
    l1 = (y2 - pc) / h_t - s2 * g2 / (2.0 * (1.0 - f * g2))
    if l1 >= 0.0:
        return y2, True
    lo = y2
    hi = pc + h_t * s2 * gb / (2.0 * (1.0 - f * gb))
    if hi < lo:
        hi = lo
    y = lo
    for _ in range(200):
        g = (pp + pm - 2.0 * y) / h2
        d = 1.0 - f * g
        val = (y - pc) / h_t - s2 * g / (2.0 * d)
        if val == 0.0:
            break
        if val < 0.0:
            lo = y
        else:
            hi = y
        dval = 1.0 / h_t + s2 / (h2 * d * d)
        step = val / dval
        if abs(step) <= rtol * max(1.0, abs(y)):
            y = y - step
            break
        ynew = y - step
        if not (ynew > lo and ynew < hi):
            ynew = 0.5 * (lo + hi)
        y = ynew
        if hi - lo <= rtol * max(1.0, abs(y)):
            break
    return y, False


@njit
def _solve_row_nb(phi, h_t, h_x, s2, fv, gb, w_lo, w_hi, rtol, out, clamp, binding, res1, res2):
    n = phi.shape[0]
    h2 = h_x * h_x
    for j in range(1, n - 1):
        y0, bind = _node_root_nb(phi[j], phi[j + 1], phi[j - 1], h_t, h2, s2[j], fv[j], gb[j], rtol)
        y = y0
        c = 0
        if y < w_lo:
            y = w_lo
            c = -1
        elif y > w_hi[j]:
            y = w_hi[j]
            c = 1
        g = (phi[j + 1] + phi[j - 1] - 2.0 * y) / h2
        out[j] = y
        clamp[j] = c
        binding[j] = bind
        res1[j] = -(phi[j] - y) / h_t - s2[j] * g / (2.0 * (1.0 - fv[j] * g))
        res2[j] = gb[j] - g


def _solve_row_np(phi, h_t, h_x, s2, fv, gb, w_lo, w_hi, rtol, out, clamp, binding, res1, res2):
    h2 = h_x * h_x
    pc, pp, pm = phi[1:-1], phi[2:], phi[:-2]
    s2, fv, gb, whi = s2[1:-1], fv[1:-1], gb[1:-1], w_hi[1:-1]
    y2 = 0.5 * (pp + pm - gb * h2)
    g2 = (pp + pm - 2.0 * y2) / h2
    l1 = (y2 - pc) / h_t - s2 * g2 / (2.0 * (1.0 - fv * g2))
    bind = l1 >= 0.0
    y = y2.copy()
    lo = y2.copy()
    hi = np.maximum(pc + h_t * s2 * gb / (2.0 * (1.0 - fv * gb)), lo)
    active = ~bind
    for _ in range(200):
        if not active.any():
            break
        ya = y[active]
        g = (pp[active] + pm[active] - 2.0 * ya) / h2
        d = 1.0 - fv[active] * g
        val = (ya - pc[active]) / h_t - s2[active] * g / (2.0 * d)
        neg = val < 0.0
        lo_a = np.where(neg, ya, lo[active])
        hi_a = np.where(neg, hi[active], ya)
        dval = 1.0 / h_t + s2[active] / (h2 * d * d)
        step = val / dval
        scale = rtol * np.maximum(1.0, np.abs(ya))
        small = np.abs(step) <= scale
        ynew = ya - step
        bad = ~small & ~((ynew > lo_a) & (ynew < hi_a))
        ynew = np.where(bad, 0.5 * (lo_a + hi_a), ynew)
        done = small | (hi_a - lo_a <= scale)
        y[active] = ynew
        lo[active] = lo_a
        hi[active] = hi_a
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    c = np.zeros(y.shape, dtype=np.int8)
    low = y < w_lo
    high = ~low & (y > whi)
    y = np.where(low, w_lo, np.where(high, whi, y))
    c[low] = -1
    c[high] = 1
    g = (pp + pm - 2.0 * y) / h2
    out[1:-1] = y
    clamp[1:-1] = c
    binding[1:-1] = bind
    res1[1:-1] = -(pc - y) / h_t - s2 * g / (2.0 * (1.0 - fv * g))
    res2[1:-1] = gb - g


def solve_row(phi, h_t, h_x, s2, fv, gb, w_lo, w_hi, rtol=1e-12, backend=None):
    """Solve every interior node of one time level given the next level ``phi``.

    ``s2``, ``fv``, ``gb`` and ``w_hi`` are per-node arrays (sigma squared,
    impact, gamma cap, upper clamp). Returns ``(row, clamp, binding, res_L1,
    res_L2)``; boundary entries of ``row`` are copied from ``phi`` and must be
    overwritten by the caller.
    """
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    n = phi.shape[0]
    out = phi.copy()
    clamp = np.zeros(n, dtype=np.int8)
    binding = np.zeros(n, dtype=np.bool_)
    res1 = np.full(n, np.nan)
    res2 = np.full(n, np.nan)
    args = (
        phi, float(h_t), float(h_x),
        np.ascontiguousarray(s2, dtype=np.float64),
        np.ascontiguousarray(fv, dtype=np.float64),
        np.ascontiguousarray(gb, dtype=np.float64),
        float(w_lo),
        np.ascontiguousarray(w_hi, dtype=np.float64),
        float(rtol), out, clamp, binding, res1, res2,
    )
    if _pick(backend) == "numba":
        _solve_row_nb(*args)
    else:
        _solve_row_np(*args)
    return out, clamp, binding, res1, res2


def node_root(pc, pp, pm, h_t, h_x, s2, f, gb, rtol=1e-12):
    """Scalar root of min(L1, L2); returns ``(y0, binding)``."""
    y, b = _node_root_nb(float(pc), float(pp), float(pm), float(h_t), float(h_x) ** 2,
                         float(s2), float(f), float(gb), float(rtol))
    return float(y), bool(b)


# --------------------------------------------------------------------------
# Monte Carlo hedge under the verification controls
# --------------------------------------------------------------------------

@njit
def _lerp_nb(tab, x_min, h_x, x):
    n = tab.shape[0] - 1
    s = (x - x_min) / h_x
    j = int(math.floor(s))
    if j < 0:
        return tab[0]
    if j >= n:
        return tab[n]
    w = s - j
    return (1.0 - w) * tab[j] + w * tab[j + 1]


@njit
def _bilerp_nb(field, i, wt, j, wx):
    a = (1.0 - wx) * field[i, j] + wx * field[i, j + 1]
    b = (1.0 - wx) * field[i + 1, j] + wx * field[i + 1, j + 1]
    return (1.0 - wt) * a + wt * b


@njit(parallel=True)
def _hedge_nb(v, vx, vxx, vtx, vxxx, x_min, h_x, h_t, t0, dt,
              mu_t, sig_t, f_t, fp_t, gb_t, k_lower, rho, den_min,
              x0, y0, v0, dw, rec, out_f, out_i):
    n_paths, n_steps = dw.shape
    n_t = v.shape[0] - 1
    n_x = v.shape[1] - 1
    x_max = x_min + n_x * h_x
    n_rec = rec.shape[0]
    for p in prange(n_paths):
        X = x0
        Y = y0
        V = v0
        R = 0.0
        exited = 0
        status = 0
        viol = 0
        low = 0
        gap = 0.0
        wres = 0.0
        min_den = 1e300
        for k in range(n_steps):
            t = t0 + k * dt
            st = t / h_t
            i = int(math.floor(st))
            if i > n_t - 1:
                i = n_t - 1
            if i < 0:
                i = 0
            wt = st - i
            if wt > 1.0:
                wt = 1.0
            sx = (X - x_min) / h_x
            j = int(math.floor(sx))
            if j > n_x - 1:
                j = n_x - 1
            if j < 0:
                j = 0
            wx = sx - j
            cvx = _bilerp_nb(vx, i, wt, j, wx)
            cvxx = _bilerp_nb(vxx, i, wt, j, wx)
            cvtx = _bilerp_nb(vtx, i, wt, j, wx)
            cvxxx = _bilerp_nb(vxxx, i, wt, j, wx)
            mu = _lerp_nb(mu_t, x_min, h_x, X)
            sig = _lerp_nb(sig_t, x_min, h_x, X)
            fx = _lerp_nb(f_t, x_min, h_x, X)
            fp = _lerp_nb(fp_t, x_min, h_x, X)
            gbar = _lerp_nb(gb_t, x_min, h_x, X)
            g_y = abs(Y - cvx)
            if g_y > gap:
                gap = g_y
            den = 1.0 - fx * cvxx
            if den < min_den:
                min_den = den
            if den < den_min:
                status = 1
                break
            a = sig * cvxx / den
            sx_vol = sig + a * fx
            b = (cvtx + cvxx * (mu - rho * R + a * sig * fp) + 0.5 * cvxxx * sx_vol * sx_vol) / den
            gam = a / (sig + fx * a)
            if gam > gbar * (1.0 + 1e-6):
                viol += 1
            if gam < -k_lower:
                low += 1
            dW = dw[p, k]
            Xn = X + (mu + b * fx + a * sig * fp - rho * R) * dt + sx_vol * dW
            Yn = Y + b * dt + a * dW
            acc = 0.5 * a * a * fx * dt
            Vn = V + Y * (Xn - X) + acc
            Rn = R + fx * (Yn - Y) + (a * sig * fp - rho * R) * dt
            r = abs((Vn - V) - Y * (Xn - X) - acc)
            if r > wres:
                wres = r
            if not (math.isfinite(Xn) and math.isfinite(Yn) and math.isfinite(Vn)):
                status = 2
                break
            if p < n_rec:
                rec[p, k, 0] = X
                rec[p, k, 1] = Y
                rec[p, k, 2] = V
                rec[p, k, 3] = a
                rec[p, k, 4] = R
            X = Xn
            Y = Yn
            V = Vn
            R = Rn
            if X < x_min or X > x_max:
                exited = k + 1
                break
        if p < n_rec:
            last = n_steps if exited == 0 else exited
            for kk in range(last, n_steps + 1):
                rec[p, kk, 0] = X
                rec[p, kk, 1] = Y
                rec[p, kk, 2] = V
                rec[p, kk, 3] = 0.0
                rec[p, kk, 4] = R
        out_f[p, 0] = X
        out_f[p, 1] = Y
        out_f[p, 2] = V
        out_f[p, 3] = gap
        out_f[p, 4] = wres
        out_f[p, 5] = min_den
        out_f[p, 6] = R
        out_i[p, 0] = exited
        out_i[p, 1] = viol
        out_i[p, 2] = low
        out_i[p, 3] = status


def _interp_rows(tab, x_min, h_x, X):
    n = tab.shape[0] - 1
    s = (X - x_min) / h_x
    j = np.clip(np.floor(s).astype(np.int64), 0, n - 1)
    w = np.clip(s - j, 0.0, 1.0)
    return (1.0 - w) * tab[j] + w * tab[j + 1]


def _hedge_np(v, vx, vxx, vtx, vxxx, x_min, h_x, h_t, t0, dt,
              mu_t, sig_t, f_t, fp_t, gb_t, k_lower, rho, den_min,
              x0, y0, v0, dw, rec, out_f, out_i):
    n_paths, n_steps = dw.shape
    n_t = v.shape[0] - 1
    n_x = v.shape[1] - 1
    x_max = x_min + n_x * h_x
    n_rec = rec.shape[0]
    X = np.full(n_paths, x0)
    Y = np.full(n_paths, y0)
    V = np.full(n_paths, v0)
    R = np.zeros(n_paths)
    exited = np.zeros(n_paths, dtype=np.int64)
    status = np.zeros(n_paths, dtype=np.int64)
    viol = np.zeros(n_paths, dtype=np.int64)
    low = np.zeros(n_paths, dtype=np.int64)
    gap = np.zeros(n_paths)
    wres = np.zeros(n_paths)
    min_den = np.full(n_paths, 1e300)
    alive = np.ones(n_paths, dtype=bool)
    for k in range(n_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x = X[idx]
        t = t0 + k * dt
        st = t / h_t
        i = min(max(int(math.floor(st)), 0), n_t - 1)
        wt = min(st - i, 1.0)
        sx = (x - x_min) / h_x
        j = np.clip(np.floor(sx).astype(np.int64), 0, n_x - 1)
        wx = sx - j

        def bl(field):
            a = (1.0 - wx) * field[i, j] + wx * field[i, j + 1]
            b = (1.0 - wx) * field[i + 1, j] + wx * field[i + 1, j + 1]
            return (1.0 - wt) * a + wt * b

        cvx, cvxx, cvtx, cvxxx = bl(vx), bl(vxx), bl(vtx), bl(vxxx)
        mu = _interp_rows(mu_t, x_min, h_x, x)
        sig = _interp_rows(sig_t, x_min, h_x, x)
        fx = _interp_rows(f_t, x_min, h_x, x)
        fp = _interp_rows(fp_t, x_min, h_x, x)
        gbar = _interp_rows(gb_t, x_min, h_x, x)
        y = Y[idx]
        gap[idx] = np.maximum(gap[idx], np.abs(y - cvx))
        den = 1.0 - fx * cvxx
        min_den[idx] = np.minimum(min_den[idx], den)
        sing = den < den_min
        if sing.any():
            status[idx[sing]] = HEDGE_SINGULAR
            alive[idx[sing]] = False
            keep = ~sing
            idx, x, y = idx[keep], x[keep], y[keep]
            cvx, cvxx, cvtx, cvxxx = cvx[keep], cvxx[keep], cvtx[keep], cvxxx[keep]
            mu, sig, fx, fp, gbar, den = mu[keep], sig[keep], fx[keep], fp[keep], gbar[keep], den[keep]
        r_ = R[idx]
        a = sig * cvxx / den
        sx_vol = sig + a * fx
        b = (cvtx + cvxx * (mu - rho * r_ + a * sig * fp) + 0.5 * cvxxx * sx_vol * sx_vol) / den
        gam = a / (sig + fx * a)
        viol[idx] += gam > gbar * (1.0 + 1e-6)
        low[idx] += gam < -k_lower
        dW = dw[idx, k]
        vv = V[idx]
        Xn = x + (mu + b * fx + a * sig * fp - rho * r_) * dt + sx_vol * dW
        Yn = y + b * dt + a * dW
        acc = 0.5 * a * a * fx * dt
        Vn = vv + y * (Xn - x) + acc
        Rn = r_ + fx * (Yn - y) + (a * sig * fp - rho * r_) * dt
        wres[idx] = np.maximum(wres[idx], np.abs((Vn - vv) - y * (Xn - x) - acc))
        bad = ~(np.isfinite(Xn) & np.isfinite(Yn) & np.isfinite(Vn))
        if bad.any():
            status[idx[bad]] = HEDGE_NAN
            alive[idx[bad]] = False
            good = ~bad
            idx, x, y, vv, r_, a = idx[good], x[good], y[good], vv[good], r_[good], a[good]
            Xn, Yn, Vn, Rn = Xn[good], Yn[good], Vn[good], Rn[good]
        rsel = idx < n_rec
        if rsel.any():
            pr = idx[rsel]
            rec[pr, k, 0] = x[rsel]
            rec[pr, k, 1] = y[rsel]
            rec[pr, k, 2] = vv[rsel]
            rec[pr, k, 3] = a[rsel]
            rec[pr, k, 4] = r_[rsel]
        X[idx], Y[idx], V[idx], R[idx] = Xn, Yn, Vn, Rn
        out = (Xn < x_min) | (Xn > x_max)
        if out.any():
            exited[idx[out]] = k + 1
            alive[idx[out]] = False
    for p in range(min(n_rec, n_paths)):
        last = n_steps if exited[p] == 0 else exited[p]
        rec[p, last:, 0] = X[p]
        rec[p, last:, 1] = Y[p]
        rec[p, last:, 2] = V[p]
        rec[p, last:, 3] = 0.0
        rec[p, last:, 4] = R[p]
    out_f[:, 0], out_f[:, 1], out_f[:, 2] = X, Y, V
    out_f[:, 3], out_f[:, 4], out_f[:, 5], out_f[:, 6] = gap, wres, min_den, R
    out_i[:, 0], out_i[:, 1], out_i[:, 2], out_i[:, 3] = exited, viol, low, status


def hedge_paths(fields, x_min, h_x, h_t, t0, dt, coef, k_lower, rho, den_min,
                x0, y0, v0, dw, n_record=0, backend=None):
    """Run the feedback hedge on every row of ``dw`` (Brownian increments).

    ``fields`` is ``(v, v_x, v_xx, v_tx, v_xxx)`` sampled on the surface grid;
    ``coef`` is ``(mu, sigma, f, f', gamma_bar)`` tabulated on the x nodes.
    Returns ``(out_f, out_i, rec)``: per-path floats
    ``[X_T, Y_T, V_T, max|Y - v_x|, max wealth residual, min denominator, R_T]``,
    per-path ints ``[exit step (0 = stayed), gamma violations, below -k, status]``
    and the recorded ``(X, Y, V, a, R)`` trajectories of the first paths.
    """
    dw = np.ascontiguousarray(dw, dtype=np.float64)
    n_paths, n_steps = dw.shape
    n_record = min(int(n_record), n_paths)
    rec = np.zeros((n_record, n_steps + 1, 5))
    out_f = np.zeros((n_paths, 7))
    out_i = np.zeros((n_paths, 4), dtype=np.int64)
    fields = [np.ascontiguousarray(a, dtype=np.float64) for a in fields]
    coef = [np.ascontiguousarray(a, dtype=np.float64) for a in coef]
    args = (*fields, float(x_min), float(h_x), float(h_t), float(t0), float(dt), *coef,
            float(k_lower), float(rho), float(den_min), float(x0), float(y0), float(v0),
            dw, rec, out_f, out_i)
    if _pick(backend) == "numba":
        _hedge_nb(*args)
    else:
        _hedge_np(*args)
    return out_f, out_i, rec
