import csv
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from impact_hedge import cli
from impact_hedge.config import ConfigError, ExperimentConfig, GridSpec, SimSpec, parse_config
from impact_hedge.model import Coefficient

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


# config ------------------------------------------------------------------

def test_defaults_validate():
    cfg = parse_config("[run]\nmode = verify\n")
    assert cfg.simulation.n_paths == 10000 and cfg.grid.n_x == 400
    assert cfg.grid.build().n_t % cfg.grid.keep_every == 0


def test_case_sensitive_keys():
    cfg = parse_config("[run]\nmode = price\n[grid]\nT = 3.0\nn_t = 10\nkeep_every = 1\n")
    assert cfg.grid.T == 3.0


@given(st.floats(0.05, 0.5), st.floats(0.1, 0.6), st.floats(0.2, 1.5), st.integers(0, 2 ** 31),
       st.sampled_from(["call_spread", "butterfly", "digital"]), st.integers(10, 200))
def test_round_trip(sigma, f, gb, seed, kind, n_x):
    strikes = {"call_spread": (-1.0, 1.0), "butterfly": (-1.0, 0.0, 1.0), "digital": (0.0,)}[kind]
    from impact_hedge.config import CapSpec, MarketSpec, PayoffSpec
    cfg = ExperimentConfig(
        mode="price", seed=seed,
        market=MarketSpec(sigma=Coefficient("constant", (sigma,)), f=Coefficient("constant", (f,))),
        cap=CapSpec(gamma_bar=Coefficient("constant", (min(gb, 0.9 / f),))),
        payoff=PayoffSpec(kind, strikes), grid=GridSpec(n_x=n_x, n_t=20, keep_every=1))
    back = parse_config(cfg.to_ini())
    assert back == cfg
    assert back.to_ini() == cfg.to_ini() and back.digest() == cfg.digest()


@pytest.mark.parametrize("text, field", [
    ("[run]\nmode = dance\n", "run.mode"),
    ("[run]\nmode = price\n[grid]\nn_x = many\n", "grid.n_x"),
    ("[run]\nmode = price\n[grid]\nwidth = 3\n", "grid.width"),
    ("[run]\nmode = price\n[market]\nf = constant:-1\n", "market"),
    ("[run]\nmode = price\n[cap]\ngamma_bar = constant:5\n", "cap"),
    ("[run]\nmode = price\n[simulation]\neps = -0.1\n", "simulation.eps"),
    ("[run]\nmode = price\n[simulation]\nx0 = 50\n", "simulation.x0"),
    ("[run]\nmode = price\n[rate]\nn_paths = 10\n", "rate.n_paths"),
    ("[run]\nmode = price\n[payoff]\nkind = swaption\n", "payoff"),
    ("[run]\nmode = price\n[extra]\na = 1\n", "[extra]"),
    ("[run]\nmode = price\n[grid]\nT = nan\n", "grid.T"),
])
def test_field_level_errors(text, field):
    with pytest.raises(ConfigError, match=field.replace("[", r"\[").replace("]", r"\]")):
        parse_config(text)


def test_figure_defaults():
    cfg = parse_config("[run]\nmode = figure1\n")
    assert cfg.payoff.kind == "butterfly" and cfg.grid.n_x == 240


# cli ---------------------------------------------------------------------

def test_facelift_cli(tmp_path):
    assert cli.main(["facelift", "--config", str(CONFIGS / "facelift_digital.ini"), "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "facelift.csv")
    x = np.array([float(r["x"]) for r in rows])
    gh = np.array([float(r["g_hat"]) for r in rows])
    exact = np.where(x >= -1, np.minimum(1.0, (x + 1) ** 2), 0.0)
    assert np.max(np.abs(gh - exact)) < 1e-12
    man = (tmp_path / "manifest.txt").read_text()
    assert "mode=facelift" in man and "config_sha256=" in man


def test_price_affine_constant_in_time(tmp_path):
    assert cli.main(["price", "--config", str(CONFIGS / "price_affine.ini"), "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "surface.csv")
    by_x = {}
    for r in rows:
        by_x.setdefault(r["x"], []).append(float(r["v"]))
    for xs, vs in by_x.items():
        assert max(vs) - min(vs) < 1e-9
        assert vs[0] == pytest.approx(1 + 2 * float(xs), abs=1e-9)


def test_outputs_byte_identical(tmp_path):
    args = ["simulate", "--config", str(CONFIGS / "simulate.ini")]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_seed_override_changes_digest(tmp_path):
    args = ["simulate", "--config", str(CONFIGS / "simulate.ini")]
    cli.main(args + ["--out", str(tmp_path / "a")])
    cli.main(args + ["--out", str(tmp_path / "b"), "--seed", "99"])
    a = (tmp_path / "a" / "manifest.txt").read_text()
    b = (tmp_path / "b" / "manifest.txt").read_text()
    assert "seed=99" in b and a != b


def test_bad_config_exit_code(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nmode = price\n[grid]\nn_x = 0\n")
    assert cli.main(["price", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_threads_env_override(tmp_path, monkeypatch):
    seen = []
    monkeypatch.setattr(cli, "set_threads", seen.append)
    monkeypatch.setenv("IMPACT_HEDGE_THREADS", "1")
    cli.main(["facelift", "--config", str(CONFIGS / "facelift_digital.ini"), "--out", str(tmp_path),
              "--threads", "4"])
    assert seen == [1]


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "impact_hedge.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "facelift" in out.stdout
