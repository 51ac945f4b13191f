"""INI experiment configuration: parsing, validation and canonical serialisation."""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional


from .model import Coefficient, GammaCap, ImpactMarket, Payoff

MODES = ("facelift", "price", "convergence", "simulate", "verify", "figure1", "figure2", "rate")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def _floats(text):
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, Coefficient):
        return v.to_text()
    return str(v)


@dataclass(frozen=True)
class MarketSpec:
    mu: Coefficient = Coefficient("constant", (0.0,))
    sigma: Coefficient = Coefficient("constant", (0.2,))
    f: Coefficient = Coefficient("constant", (0.5,))
    domain: tuple = (-10.0, 10.0)

    def build(self):
        return ImpactMarket(self.mu, self.sigma, self.f, self.domain)


@dataclass(frozen=True)
class CapSpec:
    gamma_bar: Coefficient = Coefficient("constant", (1.75,))
    iota: Optional[float] = None
    k_lower: Optional[float] = None

    def build(self, market, x=None):
        return GammaCap.paired(market, self.gamma_bar, self.iota, x, self.k_lower)


@dataclass(frozen=True)
class PayoffSpec:
    kind: str = "call_spread"
    strikes: tuple = (-1.0, 1.0)
    knots: tuple = ()
    values: tuple = ()
    slope_left: float = 0.0
    slope_right: float = 0.0

    def build(self):
        k = self.kind
        if k == "call_spread":
            return Payoff.call_spread(*self.strikes)
        if k == "butterfly":
            return Payoff.butterfly(*self.strikes)
        if k == "digital":
            return Payoff.digital(*self.strikes)
        if k == "custom_piecewise_linear":
            return Payoff.piecewise_linear(self.knots, self.values, self.slope_left, self.slope_right)
        if k == "custom_sampled":
            return Payoff.sampled(self.knots, self.values)
        raise ConfigError(f"payoff.kind: unknown payoff {k!r}")


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -5.0
    x_max: float = 5.0
    n_x: int = 400
    n_t: Optional[int] = None
    T: float = 2.0
    time_constant: float = 0.125
    levels: int = 3
    keep_every: int = 16
    margin: Optional[float] = None

    def build(self):
        from .pde import Grid
        n_t = self.n_t
        if self.n_x < 2 or self.keep_every < 1 or not self.x_max > self.x_min:
            raise ValueError("need n_x >= 2, keep_every >= 1 and x_max > x_min")
        if n_t is None:
            h_x = (self.x_max - self.x_min) / self.n_x
            n_t = math.ceil(self.T / (self.time_constant * h_x ** 2.5) / self.keep_every) * self.keep_every
        return Grid(self.x_min, self.x_max, self.n_x, int(n_t), self.T)


@dataclass(frozen=True)
class SimSpec:
    n_paths: int = 10000
    n_steps: int = 2000
    x0: float = 0.0
    eps: tuple = (0.0, 0.01, 0.02, 0.05)
    rho: tuple = (0.0,)
    delta: float = 0.0
    record_paths: int = 0


@dataclass(frozen=True)
class RateSpec:
    T: float = 1.0
    n_values: tuple = (16, 32, 64, 128, 256, 512, 1024)
    n_paths: int = 1000
    x0: float = 0.0


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "price"
    seed: int = 0
    market: MarketSpec = field(default_factory=MarketSpec)
    cap: CapSpec = field(default_factory=CapSpec)
    payoff: PayoffSpec = field(default_factory=PayoffSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    simulation: SimSpec = field(default_factory=SimSpec)
    rate: RateSpec = field(default_factory=RateSpec)

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"run.mode: expected one of {', '.join(MODES)}, got {self.mode!r}")
        for sec in ("grid", "simulation", "rate"):
            for fl in fields(getattr(self, sec)):
                v = getattr(getattr(self, sec), fl.name)
                for x in (v if isinstance(v, tuple) else (v,)):
                    if isinstance(x, (int, float)) and not math.isfinite(x):
                        raise ConfigError(f"{sec}.{fl.name}: must be finite")
        try:
            market = self.market.build()
        except ValueError as e:
            raise ConfigError(f"market: {e}") from e
        g = self.grid
        try:
            grid = g.build()
        except ValueError as e:
            raise ConfigError(f"grid: {e}") from e
        try:
            self.cap.build(market, grid.x)
        except ValueError as e:
            raise ConfigError(f"cap: {e}") from e
        try:
            self.payoff.build()
        except (ValueError, TypeError) as e:
            raise ConfigError(f"payoff: {e}") from e
        s = self.simulation
        if s.n_paths < 1 or s.n_steps < 1:
            raise ConfigError("simulation.n_paths and simulation.n_steps must be positive")
        if any(e < 0 for e in s.eps):
            raise ConfigError("simulation.eps: must be nonnegative")
        if any(r < 0 for r in s.rho):
            raise ConfigError("simulation.rho: must be nonnegative")
        if not g.x_min < s.x0 < g.x_max:
            raise ConfigError("simulation.x0: must lie inside the grid")
        if self.rate.n_paths < 100:
            raise ConfigError("rate.n_paths: at least 100 paths are needed")
        return self

    # serialisation ---------------------------------------------------------
    def to_ini(self):
        out = ["[run]", f"mode = {self.mode}", f"seed = {self.seed}", ""]
        for sec in ("market", "cap", "payoff", "grid", "simulation", "rate"):
            spec = getattr(self, sec)
            out.append(f"[{sec}]")
            for fl in fields(spec):
                v = getattr(spec, fl.name)
                if v is None:
                    continue
                out.append(f"{fl.name} = {_fmt(v)}")
            out.append("")
        return "\n".join(out)

    def digest(self):
        return hashlib.sha256(self.to_ini().encode()).hexdigest()


_INT_FIELDS = {"n_x", "n_t", "levels", "keep_every", "n_paths", "n_steps", "record_paths", "seed"}
_TUPLE_FIELDS = {"domain", "strikes", "knots", "values", "eps", "rho", "n_values"}
_COEF_FIELDS = {"mu", "sigma", "f", "gamma_bar"}


def _convert(section, name, text):
    try:
        if name in _COEF_FIELDS:
            return Coefficient.parse(text)
        if name in _TUPLE_FIELDS:
            vals = _floats(text)
            return tuple(int(v) for v in vals) if name == "n_values" else vals
        if name in _INT_FIELDS:
            return int(text)
        if name == "kind":
            return text.strip()
        return float(text)
    except ValueError as e:
        raise ConfigError(f"{section}.{name}: {e}") from e


def parse_config(text, defaults_for=None):
    """Parse INI ``text`` into an :class:`ExperimentConfig` and validate it.

    Missing sections and keys fall back to the benchmark defaults; for the
    figure modes an absent ``[payoff]`` section selects the figure's payoff.
    """
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unreadable config: {e}") from e
    cfg = ExperimentConfig()
    run = cp["run"] if cp.has_section("run") else {}
    mode = run.get("mode", cfg.mode).strip() if run else cfg.mode
    if defaults_for:
        mode = defaults_for
    seed = int(run.get("seed", 0)) if run else 0
    cfg = replace(cfg, mode=mode, seed=seed)
    if not cp.has_section("payoff") and mode == "figure1":
        cfg = replace(cfg, payoff=PayoffSpec("butterfly", (-1.0, 0.0, 1.0)),
                      grid=replace(cfg.grid, x_min=-3.0, x_max=3.0, n_x=240, time_constant=3.0, keep_every=1))
    if not cp.has_section("payoff") and mode == "figure2":
        cfg = replace(cfg, payoff=PayoffSpec("call_spread", (-1.0, 1.0)),
                      grid=replace(cfg.grid, x_min=-3.0, x_max=3.0, n_x=240, time_constant=3.0, keep_every=1))
    for sec in ("market", "cap", "payoff", "grid", "simulation", "rate"):
        if not cp.has_section(sec):
            continue
        spec = getattr(cfg, sec)
        names = {fl.name for fl in fields(spec)}
        updates = {}
        for key, raw in cp[sec].items():
            if key not in names:
                raise ConfigError(f"{sec}.{key}: unknown field")
            updates[key] = _convert(sec, key, raw)
        cfg = replace(cfg, **{sec: replace(spec, **updates)})
    for sec in cp.sections():
        if sec not in ("run", "market", "cap", "payoff", "grid", "simulation", "rate"):
            raise ConfigError(f"[{sec}]: unknown section")
    return cfg.validate()


def load_config(path, mode=None):
    with open(path) as fh:
        text = fh.read()
    cfg = parse_config(text)
    if mode is not None and mode != cfg.mode:
        cfg = parse_config(text, defaults_for=mode)
    return cfg
