"""Command-line front end: ``impact-hedge <mode> --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name, set_threads
from .config import MODES, ConfigError, load_config
from .dynamics import brownian_increments, convergence_study, rate_controls, simulate_continuous, simulate_resilience
from .hedging import verify_superhedge
from .model import Coefficient, GammaCap, ImpactMarket, face_lift
from .pde import heat_price_oracle, refine_and_estimate, solve_surface

log = logging.getLogger("impact_hedge")

PROXY_IMPACT = 1e-8


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _boundary_warning(cfg, payoff):
    g = cfg.grid
    width = g.x_max - g.x_min
    k = payoff.breakpoints()
    if ((k - g.x_min < 0.2 * width) | (g.x_max - k < 0.2 * width)).any():
        log.warning("payoff knots lie within 20%% of the grid boundary; frozen boundary values may bias the price")


def _setup(cfg):
    market = cfg.market.build()
    grid = cfg.grid.build()
    cap = cfg.cap.build(market, grid.x)
    payoff = cfg.payoff.build()
    return market, grid, cap, payoff


def _solve(market, cap, payoff, grid, cfg):
    fl = face_lift(payoff, cap, grid.x, cfg.grid.margin)
    keep = cfg.grid.keep_every if grid.n_t % cfg.grid.keep_every == 0 else 1
    return solve_surface(market, cap, fl, grid, keep_every=keep)


def run_facelift(cfg, out):
    market, grid, cap, payoff = _setup(cfg)
    fl = face_lift(payoff, cap, grid.x, cfg.grid.margin)
    fl.to_csv(out / "facelift.csv", grid.x)
    return {"closed_form": fl.closed_form or "none", "bridges": len(fl.bridges)}


def run_price(cfg, out):
    market, grid, cap, payoff = _setup(cfg)
    _boundary_warning(cfg, payoff)
    surf = _solve(market, cap, payoff, grid, cfg)
    surf.to_csv(out / "surface.csv")
    checks = surf.check()
    return {"price_at_x0": float(surf(0.0, cfg.simulation.x0)), "n_t": grid.n_t,
            **{f"check_{k}": v for k, v in checks.items()}}


def run_convergence(cfg, out):
    market, grid, cap, payoff = _setup(cfg)
    rep = refine_and_estimate(market, cap, payoff, grid, cfg.grid.levels, cfg.grid.margin)
    rep.to_csv(out / "convergence.csv")
    return {"levels": cfg.grid.levels}


def run_simulate(cfg, out):
    market = cfg.market.build()
    s = cfg.simulation
    T = cfg.grid.T
    dt = T / s.n_steps
    dw = brownian_increments(cfg.seed, s.n_paths, s.n_steps, dt)
    info = {}
    for rho in s.rho:
        if rho > 0:
            path = simulate_resilience(market, rho, 0.0, rate_controls(), 0.0, s.x0, 0.0, dw, dt)
        else:
            path = simulate_continuous(market, rate_controls(), 0.0, s.x0, 0.0, dw, dt)
        tag = f"rho{rho:g}"
        for p in range(min(s.record_paths, s.n_paths)):
            path.to_csv(out / f"path_{tag}_{p:04d}.csv", p)
        info[f"wealth_residual_{tag}"] = path.wealth_residual()
        info[f"mean_X_T_{tag}"] = float(np.mean(path.X[:, -1]))
    return info


def run_verify(cfg, out):
    market, grid, cap, payoff = _setup(cfg)
    _boundary_warning(cfg, payoff)
    surf = _solve(market, cap, payoff, grid, cfg)
    s = cfg.simulation
    v0 = float(surf(0.0, s.x0))
    dt = grid.T / s.n_steps
    reports = []
    for rho in s.rho:
        for e in s.eps:
            rep = verify_superhedge(surf, market, cap, payoff, s.x0, e * v0, s.n_paths, dt, cfg.seed,
                                    rho=rho, delta=s.delta * grid.h_x, n_record=s.record_paths)
            reports.append(rep)
    with open(out / "hedge_report.txt", "w") as fh:
        fh.write("\n".join(r.to_text() for r in reports))
    for k, r in enumerate(reports):
        r.write_csv_row(out / "hedge_report.csv", header=(k == 0))
    main = reports[min(len(reports) - 1, list(s.eps).index(0.02) if 0.02 in s.eps else 0)]
    main.write_terminal(out / "terminal.csv")
    rec = main.terminal["record"]
    times = np.linspace(0.0, grid.T, s.n_steps + 1)
    for p in range(rec.shape[0]):
        _write_rows(out / f"path_{p:04d}.csv", ["t", "X", "Y", "V", "a", "R"],
                    [(t, *row) for t, row in zip(times, rec[p])])
    return {"price_at_x0": v0, "success_rates": " ".join(f"{r.success_rate!r}" for r in reports)}


def _figure(cfg, out, name):
    market, grid, cap, payoff = _setup(cfg)
    x = grid.x
    s_imp = _solve(market, cap, payoff, grid, cfg)
    proxy_market = ImpactMarket(market.mu, market.sigma, Coefficient("constant", (PROXY_IMPACT,)), market.domain)
    gb = cfg.cap.gamma_bar
    if gb.is_constant:
        gb = Coefficient("constant", (min(gb.params[0], 1.0 / PROXY_IMPACT - cap.iota),))
    proxy_cap = GammaCap.paired(proxy_market, gb, cap.iota, x, cfg.cap.k_lower)
    s_prx = _solve(proxy_market, proxy_cap, payoff, grid, cfg)
    sig = float(np.mean(market.sample(x)[1]))
    heat = heat_price_oracle(payoff, sig, 0.0, x, grid.T)
    v1, v0 = s_imp.values[0], s_prx.values[0]
    bind_t = s_imp.binding[-1]
    bind_any = s_imp.binding[:-1].any(axis=0)
    _write_rows(out / f"{name}.csv",
                ["x", "v_impact", "v_proxy", "v_heat", "diff_impact", "diff_proxy", "binding_T", "binding_t"],
                [(x[j], v1[j], v0[j], heat[j], v1[j] - heat[j], v0[j] - heat[j], int(bind_t[j]), int(bind_any[j]))
                 for j in range(x.size)])
    return {"proxy_impact": PROXY_IMPACT, "proxy_gamma_cap": "min(gamma_bar, 1/f - iota)",
            "heat_sigma": sig, "unconstrained_curve": "heat oracle on g"}


def run_figure1(cfg, out):
    return _figure(cfg, out, "figure1")


def run_figure2(cfg, out):
    return _figure(cfg, out, "figure2")


def run_rate(cfg, out):
    market = cfg.market.build()
    r = cfg.rate
    table = convergence_study(market, rate_controls(), r.n_values, r.n_paths, T=r.T, x0=r.x0, seed=cfg.seed)
    table.to_csv(out / "rate.csv")
    return {"slope": table.slope}


RUNNERS = {m: globals()[f"run_{m}"] for m in MODES}


def run(cfg, out_dir):
    """Execute ``cfg`` and write its artifacts plus ``manifest.txt`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    info = RUNNERS[cfg.mode](cfg, out)
    lines = [f"mode={cfg.mode}", f"config_sha256={cfg.digest()}", f"seed={cfg.seed}",
             f"version={__version__}", f"backend={backend_name()}"]
    lines += [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items()]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    (out / "config.ini").write_text(cfg.to_ini())
    return info


def build_parser():
    p = argparse.ArgumentParser(prog="impact-hedge", description=__doc__)
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="INI experiment file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads (IMPACT_HEDGE_THREADS wins)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")
    threads = os.environ.get("IMPACT_HEDGE_THREADS") or args.threads
    if threads:
        set_threads(int(threads))
    try:
        cfg = load_config(args.config, args.mode)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        info = run(cfg, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, RuntimeError) as e:
        print(f"{args.mode} failed: {e}", file=sys.stderr)
        return 1
    for k, v in info.items():
        print(f"{k}={v}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
