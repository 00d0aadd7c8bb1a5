import csv
import json
from pathlib import Path

import pytest

from storage_withholding import PriceBounds
from storage_withholding.cli import main
from storage_withholding.config import ConfigError, load_config, parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
PROVENANCE = ["config_hash", "seed", "version"]

SMALL = {
    "storage": {"power": 10, "energy": 40, "efficiency": 0.9, "discharge_cost": 25},
    "bounds": {"floor": 5, "cap": 150},
    "forecasts": {"kind": "gaussian", "mu": 26.2, "sigma": 50, "horizon": 6},
    "grid_points": 101,
    "soc": 20,
    "seed": 3,
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour"):
            parse_config({**SMALL, "colour": "red"})

    def test_bounds_forms(self):
        assert parse_config({**SMALL, "bounds": [5, 150]}).bounds() == PriceBounds(5.0, 150.0)
        assert parse_config(SMALL).bounds() == PriceBounds(5.0, 150.0)

    def test_forecast_family_is_truncated(self):
        cfg = parse_config(SMALL)
        fc = cfg.forecasts()
        assert len(fc) == 6 and all(d.bounds == PriceBounds(5.0, 150.0) for d in fc)
        assert all(m > 26.2 for m in cfg.forecast_means())

    def test_digest_ignores_key_order(self):
        a = parse_config(SMALL)
        b = parse_config(dict(reversed(list(SMALL.items()))))
        assert a.digest == b.digest and len(a.digest) == 12

    def test_bad_json(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")


@pytest.mark.parametrize("command, files", [
    ("value-fn", ["value_function.csv", "marginal_value_plot.csv"]),
    ("bids", ["bids.csv", "bids_plot.csv"]),
    ("bounds", ["bounds.csv", "bounds.json", "bounds_plot.csv"]),
    ("audit", ["audit.csv", "audit.json", "audit_reports.json", "audit_plot.csv"]),
])
def test_commands_write_stamped_outputs(tmp_path, command, files):
    out = tmp_path / "out"
    assert main([command, "--config", write(tmp_path, SMALL), "--out", str(out), "--emit-plot-data"]) == 0
    for f in files:
        path = out / f
        assert path.exists(), f
        if f.endswith(".csv"):
            assert header(path)[-3:] == PROVENANCE
        else:
            prov = json.loads(path.read_text()).get("provenance") if f != "audit_reports.json" else None
            assert prov is None or prov["seed"] == 3


def test_plot_data_is_opt_in(tmp_path):
    out = tmp_path / "out"
    assert main(["bids", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 0
    assert not (out / "bids_plot.csv").exists()


def test_clear_prices(tmp_path):
    out = tmp_path / "out"
    assert main(["clear", "--config", str(CONFIGS / "ideal_clear.json"), "--out", str(out)]) == 0
    with open(out / "clearing.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["price"]) for r in rows] == pytest.approx([10, 50, 90, 130, 170])


def test_bounds_summary(tmp_path):
    out = tmp_path / "out"
    assert main(["bounds", "--config", str(CONFIGS / "bounded_day.json"), "--out", str(out)]) == 0
    summary = json.loads((out / "bounds.json").read_text())
    assert summary["covers_all_laws"] is True
    capped = summary["capped_mean_bound"]
    assert capped["limit"] == pytest.approx(150.0)
    assert capped["bound"] == pytest.approx(146.70, abs=0.01)


def test_deterministic_outputs(tmp_path):
    cfg = write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert main(["audit", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for f in ("audit.csv", "audit.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_override_is_recorded(tmp_path):
    out = tmp_path / "out"
    assert main(["bids", "--config", write(tmp_path, SMALL), "--out", str(out), "--seed", "42"]) == 0
    with open(out / "bids.csv", newline="") as fh:
        assert {r["seed"] for r in csv.DictReader(fh)} == {"42"}


class TestExitCodes:
    def test_config_error(self, tmp_path):
        assert main(["bids", "--config", write(tmp_path, {**SMALL, "bogus": 1}), "--out", str(tmp_path)]) == 1

    def test_invalid_model(self, tmp_path):
        bad = {**SMALL, "storage": {**SMALL["storage"], "efficiency": 1.5}}
        assert main(["bids", "--config", write(tmp_path, bad), "--out", str(tmp_path)]) == 1

    def test_infeasible(self, tmp_path):
        cfg = {"scenario": {"load": [50, 150], "generators": [{"gmin": 0, "gmax": 100, "b": 10}]},
               "storage": SMALL["storage"], "seed": 0}
        assert main(["simulate", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == 2

    def test_numerical(self, tmp_path):
        cfg = {**SMALL, "forecasts": [{"kind": "gaussian", "mu": 2000, "sigma": 0.001,
                                       "bounds": {"floor": 5, "cap": 150}}]}
        assert main(["value-fn", "--config", write(tmp_path, cfg), "--out", str(tmp_path)]) == 3


def test_welfare_sweep_is_worker_invariant(tmp_path, monkeypatch):
    cfg = {"scenario": {"preset": "ideal", "units": 1},
           "storage": {"power": 10, "energy": 40, "efficiency": 0.9, "discharge_cost": 25},
           "sweep": {"kind": "welfare", "demand_sigmas": [0, 100], "forecast_sigmas": [1, 10], "draws": 2},
           "seed": 9}
    path = write(tmp_path, cfg)
    outs = []
    for w in ("1", "2"):
        monkeypatch.setenv("STORAGE_WITHHOLDING_WORKERS", w)
        out = tmp_path / f"w{w}"
        assert main(["sweep", "--config", path, "--out", str(out)]) == 0
        outs.append((out / "sweep.csv").read_bytes())
    assert outs[0] == outs[1]
