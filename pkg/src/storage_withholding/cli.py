"""Command-line front end.

Every subcommand reads a JSON config, writes CSV/JSON into ``--out`` and
stamps each table with provenance columns (config hash, seed, version).

Exit codes: 0 success, 1 configuration error, 2 infeasible problem,
3 numerical tolerance failure.
"""
from __future__ import annotations

import argparse
import csv
import functools
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bids import bids_from_csv, bids_to_csv, charge_bids, discharge_bids
from .config import ConfigError, RunConfig, load_config
from .core import InfeasibleError, ModelError, NumericalError, PriceDistribution, Side
from .experiments import bounded_sweep, ideal_axes, sigma_sweep, slope_check, welfare_sweep
from .market import clear_rtm, simulate_day
from .value import backward_induction
from .withholding import (
    audit_bids,
    bounds_to_csv,
    corollary4_bound,
    reports_to_csv,
    reports_to_json,
    theorem2_bound,
)

log = logging.getLogger("storage_withholding")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3


@functools.lru_cache(maxsize=1)
def version_string() -> str:
    """Package version with the short commit hash when run from a git checkout."""
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return __version__
    h = rev.stdout.strip()
    return f"{__version__}+g{h}" if rev.returncode == 0 and h else __version__


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v) + 0.0:.10g}"  # no "-0" in tables
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v


class Run:
    """Output directory plus the provenance stamped on every table."""

    def __init__(self, cfg: RunConfig, out: Path, seed: int, plot: bool):
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.plot = plot
        self.prov = {"config_hash": cfg.digest, "seed": seed, "version": version_string()}
        out.mkdir(parents=True, exist_ok=True)
        self.written = []

    def rows(self, name: str, rows: list):
        path = self.out / name
        if not rows:
            rows = [{}]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) + list(self.prov), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({**{k: _fmt(v) for k, v in r.items()}, **self.prov})
        self.written.append(path)

    def stamp(self, name: str):
        """Append provenance columns to a CSV produced elsewhere."""
        path = self.out / name
        with open(path, newline="") as fh:
            table = list(csv.reader(fh))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table[0] + list(self.prov))
            for r in table[1:]:
                w.writerow(r + [str(v) for v in self.prov.values()])
        self.written.append(path)

    def json(self, name: str, payload):
        path = self.out / name
        with open(path, "w") as fh:
            json.dump({**payload, "provenance": self.prov}, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        self.written.append(path)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _series(cfg: RunConfig):
    spec = cfg.storage()
    forecasts = cfg.forecasts()
    return spec, backward_induction(cfg.end_value(spec), forecasts, spec)


# ---------------------------------------------------------------- subcommands

def cmd_value_fn(run: Run):
    spec, series = _series(run.cfg)
    stride = int(run.cfg.section("value_fn").get("stride", 1))
    series.to_csv(run.out / "value_function.csv", stride=stride)
    run.stamp("value_function.csv")
    if run.plot:
        g = series[0].breakpoints
        surf = series.marginal_surface()
        rows = [{"period": t, "soc": g[i], "marginal_value": surf[t, i]}
                for t in range(1, series.horizon + 1) for i in range(0, g.size, stride)]
        run.rows("marginal_value_plot.csv", rows)


def _sdp_curves(cfg: RunConfig, spec, series):
    soc, K = cfg.soc, cfg.segments
    if not 0 <= soc <= spec.energy:
        raise ConfigError(f"soc {soc} outside [0, {spec.energy}]")
    dis = [discharge_bids(series[t], soc, spec, K, t) for t in range(1, series.horizon + 1)]
    chg = [charge_bids(series[t], soc, spec, K, t) for t in range(1, series.horizon + 1)]
    return dis, chg


def _curve_plot_rows(curves):
    rows = []
    for cv in curves:
        cum = np.cumsum(cv.quantities)
        for k, (q, p) in enumerate(zip(cum, cv.prices), start=1):
            rows.append({"period": cv.period, "side": cv.side.value, "segment": k,
                         "cumulative_mw": q, "price": p})
    return rows


def cmd_bids(run: Run):
    spec, series = _series(run.cfg)
    dis, chg = _sdp_curves(run.cfg, spec, series)
    curves = [c for pair in zip(dis, chg) for c in pair]
    bids_to_csv(run.out / "bids.csv", curves)
    run.stamp("bids.csv")
    if run.plot:
        run.rows("bids_plot.csv", _curve_plot_rows(curves))


def cmd_bounds(run: Run):
    cfg = run.cfg
    spec = cfg.storage()
    bounds = cfg.bounds()
    if bounds is None:
        raise ConfigError("bounds command needs a 'bounds' section")
    mu = cfg.forecast_means()
    T = mu.size
    lim = cfg.section("limits")
    v_T0 = float(lim.get("v_T0", cfg.end_slope_at_zero(spec)))
    breakdowns = [theorem2_bound(t, T, mu, bounds, spec, v_T0) for t in range(1, T + 1)]
    bounds_to_csv(run.out / "bounds.csv", breakdowns)
    run.stamp("bounds.csv")
    summary = {"horizon": T, "v_T0": v_T0,
               "covers_all_laws": all(b.covers_all_laws for b in breakdowns),
               "bounds": [b.bound for b in breakdowns]}
    if "mu_cap" in lim:
        rho = float(lim.get("rho", 1.0))
        horizon = float(lim.get("T", T))
        summary["capped_mean_bound"] = {
            "mu_cap": float(lim["mu_cap"]), "rho": rho, "T": horizon,
            "bound": corollary4_bound(horizon, float(lim["mu_cap"]), bounds, spec, rho, v_T0),
            "limit": corollary4_bound(float("inf"), float(lim["mu_cap"]), bounds, spec, rho, v_T0),
        }
    run.json("bounds.json", summary)
    if run.plot:
        _, series = _series(cfg)
        run.rows("bounds_plot.csv", [{"period": b.t, "bound": b.bound, "sdp_bid": series.zero_soc_bid(b.t)}
                                     for b in breakdowns])


def cmd_clear(run: Run):
    cfg = run.cfg
    scen = cfg.scenario()
    sec = cfg.section("clear")
    demand = np.atleast_1d(np.asarray(sec.get("net_demand", scen.net_load), float))
    T = demand.size
    offers, bids = [], []
    if scen.storage_units:
        if "bids_csv" in sec:
            curves = bids_from_csv(sec["bids_csv"])
        else:
            spec, series = _series(cfg)
            dis, chg = _sdp_curves(cfg, spec, series)
            curves = dis + chg
        offers = {c.period: c for c in curves if c.side == Side.DISCHARGE}
        bids = {c.period: c for c in curves if c.side == Side.CHARGE}
    gens = list(scen.generators)
    rows = []
    for t in range(1, T + 1):
        o = [offers[t]] if t in offers else []
        b = [bids[t]] if t in bids else []
        res = clear_rtm(gens, o, b, float(demand[t - 1]), scen.bounds, units=max(scen.storage_units, 1),
                        generators=gens, period=t)
        row = res.to_row()
        row.pop("soc")
        row["balance_residual"] = res.balance_residual
        rows.append(row)
    run.rows("clearing.csv", rows)
    if run.plot:
        run.rows("clearing_plot.csv", [{"net_demand": r["demand"], "price": r["price"]} for r in rows])


def cmd_simulate(run: Run):
    cfg = run.cfg
    scen = cfg.scenario()
    spec = cfg.storage()
    sec = cfg.section("simulate")
    forecasts = cfg.forecasts() if "forecasts" in cfg.raw else None
    end_value = cfg.end_value(spec) if "end_value" in cfg.raw else None
    day = simulate_day(scen, forecasts, spec, run.seed,
                       demand_sigma=float(sec.get("demand_sigma", 0.0)),
                       wind_sigma=float(sec.get("wind_sigma", 0.0)),
                       forecast_sigma=float(sec.get("forecast_sigma", 0.0)),
                       K=cfg.segments, end_value=end_value, e0=float(sec.get("e0", 0.0)))
    run.rows("periods.csv", [r.to_row() for r in day.periods])
    totals = day.totals()
    totals["violations"] = day.schedule.violations(scen.generators, scen.wind_forecast)
    run.json("totals.json", totals)
    run.json("commitment.json", day.schedule.to_dict())
    if run.plot:
        run.rows("simulate_plot.csv", [{"period": r.period, "price": r.price, "da_price": day.schedule.da_price[i],
                                        "soc": r.soc} for i, r in enumerate(day.periods)])


def cmd_sweep(run: Run):
    cfg = run.cfg
    sec = cfg.section("sweep")
    kind = sec.get("kind", "sigma")
    if kind == "sigma":
        spec = cfg.storage()
        rows = sigma_sweep(float(sec.get("mu", 26.2)), [float(s) for s in sec["sigmas"]], spec,
                           int(sec.get("T", 24)), cfg.points)
        run.rows("sweep.csv", [{"sigma": s, "bid": b} for s, b in rows])
    elif kind == "bounded":
        spec = cfg.storage()
        bounds = cfg.bounds()
        if bounds is None:
            raise ConfigError("bounded sweep needs a 'bounds' section")
        rows = bounded_sweep(cfg.mu_path(), bounds, [float(s) for s in sec["sigmas"]], spec, cfg.points)
        run.rows("sweep.csv", [{"sigma": s, "bid": b, "bound": bd} for s, b, bd in rows])
    elif kind == "welfare":
        spec = cfg.storage()
        scen = cfg.scenario()
        dsig, fsig = ideal_axes(int(sec.get("levels", 5)))
        dsig = np.asarray(sec.get("demand_sigmas", dsig), float)
        fsig = np.asarray(sec.get("forecast_sigmas", fsig), float)
        res = welfare_sweep(scen, dsig, fsig, int(sec.get("draws", 20)), run.seed, spec,
                            float(sec.get("wind_sigma", 0.0)), sec.get("workers"))
        res.to_csv(run.out / "sweep.csv")
        run.stamp("sweep.csv")
        run.json("sweep_summary.json", {
            "cost_argmin_rows": res.cost_argmin_rows().tolist(),
            "profit_argmax_rows": res.profit_argmax_rows().tolist(),
            "rank_correlation": res.diagonal_correlation(),
            "draws": res.draws,
        })
        if run.plot:
            run.rows("sweep_heatmap.csv", res.to_long_rows())
        return
    elif kind == "slope":
        scen = cfg.scenario()
        spec = cfg.storage() if "storage" in cfg.raw else None
        fit = slope_check(scen, int(sec.get("n", 500)), run.seed, sec.get("shape", "uniform"), spec=spec)
        run.json("slope.json", fit)
        return
    else:
        raise ConfigError(f"unknown sweep kind {kind!r}")
    if run.plot:
        run.rows("sweep_plot.csv", [{"sigma": r[0], "bid": r[1]} for r in rows])


def cmd_audit(run: Run):
    cfg = run.cfg
    sec = cfg.section("audit")
    spec = cfg.storage()
    bounds = cfg.bounds()
    if bounds is None:
        raise ConfigError("audit needs a 'bounds' section for the price-limit bound")
    mu = cfg.forecast_means()
    T = mu.size
    v_T0 = cfg.end_slope_at_zero(spec)
    if "bids_csv" in sec:
        submitted = [c for c in bids_from_csv(sec["bids_csv"]) if c.side == Side.DISCHARGE]
    else:
        _, series = _series(cfg)
        submitted = _sdp_curves(cfg, spec, series)[0]
    # baseline at the same anchor SoC: deterministic forecasts on the same means
    det = backward_induction(cfg.end_value(spec), [PriceDistribution.point_mass(float(m)) for m in mu], spec)
    reports = []
    for cv in submitted:
        if not 1 <= cv.period <= T:
            raise ConfigError(f"bid period {cv.period} outside 1..{T}")
        base = discharge_bids(det[cv.period], cfg.soc, spec, max(cv.prices.size, 1), cv.period)
        bd = theorem2_bound(cv.period, T, mu, bounds, spec, v_T0)
        reports.append(audit_bids(cv, base, bd))
    reports_to_csv(run.out / "audit.csv", reports)
    run.stamp("audit.csv")
    reports_to_json(run.out / "audit_reports.json", reports)
    run.json("audit.json", {"periods": len(reports),
                            "withholding_periods": [r.period for r in reports if r.withholding],
                            "bound_violating_periods": [r.period for r in reports if r.bound_violating]})
    if run.plot:
        run.rows("audit_plot.csv", [{"period": r.period, "max_submitted": float(r.submitted.max(initial=0)),
                                     "max_baseline": float(r.baseline.max(initial=0)), "bound": r.bound}
                                    for r in reports])


COMMANDS = {
    "value-fn": (cmd_value_fn, "backward induction; value and marginal value per period and SoC"),
    "bids": (cmd_bids, "discharge/charge bid curves at the configured SoC"),
    "bounds": (cmd_bounds, "price-limit bounds on the empty-storage bid"),
    "clear": (cmd_clear, "clear real-time periods for a scenario"),
    "simulate": (cmd_simulate, "commit and clear one simulated day"),
    "sweep": (cmd_sweep, "sigma, bounded, welfare or slope sweeps"),
    "audit": (cmd_audit, "compare bids against the deterministic baseline and the bound"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="storage-withholding",
                                description="Storage bidding, withholding bounds and market simulation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", required=True, help="JSON configuration file")
        s.add_argument("--out", default="out", help="output directory (default: out)")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--emit-plot-data", action="store_true", help="also write long-format plot tables")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        seed = cfg.seed if args.seed is None else args.seed
        run = Run(cfg, Path(args.out), seed, args.emit_plot_data)
        COMMANDS[args.command][0](run)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in run.written:
        log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
