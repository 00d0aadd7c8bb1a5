"""Desk-scale experiment drivers and preset scenarios."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .core import (
    BidCurve,
    ModelError,
    PriceBounds,
    PriceDistribution,
    Side,
    StorageSpec,
    ValueFunction,
    mean_of,
)
from .market import (
    GeneratorSpec,
    Scenario,
    clear_rtm,
    commit_dam,
    forecasts_from_prices,
    realize,
    simulate_day,
)
from .value import backward_induction, default_end_value
from .withholding import theorem2_bound

WORKERS_ENV = "STORAGE_WITHHOLDING_WORKERS"

IDEAL_GENERATOR = GeneratorSpec(0.0, 1e7, a=0.04, b=10.0, name="aggregate")
IDEAL_STORAGE = StorageSpec(power=10.0, energy=40.0, efficiency=0.9, discharge_cost=25.0)
# price spread of a single quadratic generator per MW of net-demand spread
IDEAL_PRICE_SLOPE = 2 * IDEAL_GENERATOR.a


def worker_count(default: Optional[int] = None) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError as exc:
            raise ModelError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return default if default is not None else max(1, min(8, os.cpu_count() or 1))


# ---------------------------------------------------------------- bid sweeps

def sigma_sweep(mu: float, sigmas: Sequence[float], spec: StorageSpec, T: int = 24,
                points: int = 401, method: str = "exact", nodes: int = 257):
    """Empty-storage discharge bid under ``T`` Gaussian forecasts with fixed mean.

    Returns rows ``(sigma, bid)``; ``sigma = 0`` gives the deterministic bid.
    """
    if list(sigmas) != sorted(sigmas):
        raise ModelError("sigma levels must be ascending")
    end = ValueFunction.linear(0.0, spec.energy, points)
    rows = []
    for s in sigmas:
        d = PriceDistribution.point_mass(mu) if s == 0 else PriceDistribution.gaussian(mu, s)
        series = backward_induction(end, [d] * T, spec, method, nodes)
        rows.append((float(s), series.zero_soc_bid(0)))
    return rows


def bounded_sweep(mu_path: Sequence[float], bounds: PriceBounds, sigmas: Sequence[float],
                  spec: StorageSpec, points: int = 401, period: int = 0):
    """Bids under bounded-uniform forecasts (renormalized inside ``bounds``) and their bound.

    Returns rows ``(sigma, bid, bound)`` for the empty-storage bid of ``period``.
    The bound uses the post-truncation means.
    """
    end = ValueFunction.linear(0.0, spec.energy, points)
    T = len(mu_path)
    rows = []
    for s in sigmas:
        fc = [PriceDistribution.bounded_uniform(m, s, bounds) if s > 0 else PriceDistribution.point_mass(m)
              for m in mu_path]
        series = backward_induction(end, fc, spec)
        means = [mean_of(d) for d in fc]
        bd = theorem2_bound(period, T, means, bounds, spec, v_T0=0.0)
        rows.append((float(s), series.zero_soc_bid(period), bd.bound))
    return rows


# ---------------------------------------------------------------- price / net-demand linearity

def slope_check(scenario: Scenario, n: int = 500, seed: int = 0, shape: str = "uniform",
                spread: Optional[float] = None, spec: Optional[StorageSpec] = None,
                storage_price: Optional[float] = None):
    """Least-squares fit of clearing price on net demand over ``n`` noiseless clearings.

    Net demands are drawn around the mean day-ahead net load with the given
    ``shape`` (``uniform`` or ``gaussian``).  With a storage fleet and ``spec``
    every clearing also sees a flat discharge offer and charge bid around
    ``storage_price``, which bends the price response.  Returns a dict with
    ``slope``, ``intercept``, ``r2`` and ``flagged`` (fit not exact).
    """
    gens = list(scenario.generators)
    base = float(scenario.net_load.mean())
    spread = spread if spread is not None else max(0.25 * base, 1.0)
    rng = np.random.default_rng(seed)
    if shape == "uniform":
        d = base + spread * rng.uniform(-1.0, 1.0, n)
    elif shape == "gaussian":
        d = base + 0.5 * spread * rng.standard_normal(n)
    else:
        raise ModelError(f"unknown demand shape {shape!r}")
    d = np.maximum(d, 0.0)
    if np.ptp(d) == 0:
        raise ModelError("net demand is constant; slope undefined")
    offers, bids = [], []
    units = scenario.storage_units
    if units and spec is not None:
        mid = storage_price if storage_price is not None else float(
            np.mean([g.marginal_cost(base / max(len(gens), 1)) for g in gens]))
        offers = [BidCurve(Side.DISCHARGE, np.array([spec.power]), np.array([mid + spec.discharge_cost]))]
        bids = [BidCurve(Side.CHARGE, np.array([spec.power]), np.array([mid - spec.discharge_cost]))]
    prices = np.empty(n)
    for k in range(n):
        res = clear_rtm(gens, offers, bids, float(d[k]), scenario.bounds, units=max(units, 1),
                        generators=gens)
        prices[k] = res.price
    fit = stats.linregress(d, prices)
    r2 = float(fit.rvalue ** 2)
    return {"slope": float(fit.slope), "intercept": float(fit.intercept), "r2": r2,
            "flagged": r2 < 1 - 1e-9, "n": n}


# ---------------------------------------------------------------- welfare sweep

@dataclass
class SweepResult:
    """Mean system cost and storage profit over a (forecast sigma x demand sigma) grid.

    Rows follow ``forecast_sigmas`` and columns ``demand_sigmas``.
    """

    demand_sigmas: np.ndarray
    forecast_sigmas: np.ndarray
    cost: np.ndarray
    profit: np.ndarray
    draws: int
    seed: int
    cost_var: np.ndarray = field(default=None)

    def __post_init__(self):
        shape = (len(self.forecast_sigmas), len(self.demand_sigmas))
        if self.cost.shape != shape or self.profit.shape != shape:
            raise ModelError(f"matrices {self.cost.shape}/{self.profit.shape} do not match axes {shape}")

    def cost_argmin_rows(self) -> np.ndarray:
        return np.argmin(self.cost, axis=0)

    def profit_argmax_rows(self) -> np.ndarray:
        return np.argmax(self.profit, axis=0)

    def diagonal_correlation(self) -> float:
        """Rank correlation between column index and its cost-minimizing row."""
        rows = self.cost_argmin_rows()
        if np.ptp(rows) == 0:
            return 0.0
        return float(stats.spearmanr(np.arange(rows.size), rows).correlation)

    def to_long_rows(self):
        out = []
        for i, fs in enumerate(self.forecast_sigmas):
            for j, ds in enumerate(self.demand_sigmas):
                out.append({"demand_sigma": float(ds), "forecast_sigma": float(fs),
                            "cost": float(self.cost[i, j]), "profit": float(self.profit[i, j])})
        return out

    def to_csv(self, path, extra: Optional[dict] = None):
        rows = self.to_long_rows()
        extra = extra or {}
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) + list(extra))
            w.writeheader()
            for r in rows:
                w.writerow({**r, **extra})


def draw_seed(master: int, column: int, draw: int) -> int:
    """Seed shared by every forecast row of one (column, draw) pair."""
    return int(np.random.SeedSequence([master, column, draw]).generate_state(1)[0])


def _sweep_cell(args):
    scenario, spec, schedule, fsig, dsig, col, draws, seed, wind_sigma, end_value = args
    series = None
    if scenario.storage_units:
        fc = forecasts_from_prices(schedule.da_price, fsig)
        series = backward_induction(end_value or default_end_value(spec), fc, spec)
    costs, profits = np.empty(draws), np.empty(draws)
    for k in range(draws):
        s = draw_seed(seed, col, k)
        realized = realize(scenario, s, dsig, wind_sigma)
        day = simulate_day(scenario, None, spec, s, schedule=schedule, series=series, realized=realized)
        costs[k] = day.system_cost
        profits[k] = day.storage_profit
    return costs.mean(), profits.mean(), costs.var()


def welfare_sweep(scenario: Scenario, demand_sigmas: Sequence[float], forecast_sigmas: Sequence[float],
                  draws: int, seed: int, spec: StorageSpec = IDEAL_STORAGE, wind_sigma: float = 0.0,
                  workers: Optional[int] = None, end_value: Optional[ValueFunction] = None) -> SweepResult:
    """Mean day cost and storage profit on every (forecast sigma, demand sigma) cell.

    All rows of a column replay the same realized days (common random
    numbers), so differences between rows come from the bids alone.
    """
    if draws < 1:
        raise ModelError("need at least one draw per cell")
    schedule = commit_dam(scenario, spec, end_value)
    tasks, where = [], []
    for i, fs in enumerate(forecast_sigmas):
        for j, ds in enumerate(demand_sigmas):
            tasks.append((scenario, spec, schedule, float(fs), float(ds), j, draws, seed, wind_sigma, end_value))
            where.append((i, j))
    n_workers = worker_count() if workers is None else workers
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_sweep_cell, tasks))
    else:
        results = [_sweep_cell(t) for t in tasks]
    shape = (len(forecast_sigmas), len(demand_sigmas))
    cost, profit, var = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    for (i, j), (c, p, v) in zip(where, results):
        cost[i, j], profit[i, j], var[i, j] = c, p, v
    return SweepResult(np.asarray(demand_sigmas, float), np.asarray(forecast_sigmas, float),
                       cost, profit, draws, seed, var)


# ---------------------------------------------------------------- presets

def daily_shape(low: float, high: float, trough_hour: float = 4.0) -> np.ndarray:
    """Smooth 24-hour profile with its minimum at ``trough_hour`` and maximum twelve hours later."""
    h = np.arange(24)
    return low + (high - low) * 0.5 * (1 - np.cos((h - trough_hour) / 24 * 2 * np.pi))


def ideal_scenario(units: int = 1) -> Scenario:
    """One quadratic generator with ample capacity, 1.3-2.3 GW load, no wind."""
    return Scenario(daily_shape(1300.0, 2300.0), (IDEAL_GENERATOR,), storage_units=units,
                    bounds=PriceBounds(-1000.0, 10000.0), name="ideal")


def ideal_axes(n: int = 5):
    """Forecast spreads from 1 to 30 $/MWh and the demand spreads that produce them."""
    fs = np.linspace(1.0, 30.0, n)
    return fs / IDEAL_PRICE_SLOPE, fs


# cost-curve spread of a mixed thermal fleet, scaled to about 1.3 GW of capacity headroom
DESK_FLEET = (
    GeneratorSpec(150, 400, a=0.002, b=8.0, ramp=100, min_up=8, min_down=8, no_load=400, startup=4000, name="nuclear"),
    GeneratorSpec(80, 250, a=0.004, b=18.0, ramp=80, min_up=6, min_down=6, no_load=300, startup=2500, name="coal"),
    GeneratorSpec(60, 200, a=0.006, b=24.0, ramp=120, min_up=4, min_down=4, no_load=200, startup=1500, name="ccgt-1"),
    GeneratorSpec(60, 200, a=0.006, b=26.0, ramp=120, min_up=4, min_down=4, no_load=200, startup=1500, name="ccgt-2"),
    GeneratorSpec(30, 120, a=0.010, b=35.0, ramp=100, min_up=2, min_down=2, no_load=120, startup=600, name="steam"),
    GeneratorSpec(20, 80, a=0.020, b=55.0, ramp=80, min_up=1, min_down=1, no_load=80, startup=300, name="ct-1"),
    GeneratorSpec(20, 80, a=0.025, b=70.0, ramp=80, min_up=1, min_down=1, no_load=80, startup=300, name="ct-2"),
    GeneratorSpec(10, 60, a=0.040, b=110.0, ramp=60, min_up=1, min_down=1, no_load=60, startup=200, name="peaker"),
)

# five representative days: (load low, load high, wind mean, wind swing, weight)
DAY_TYPES = {
    "winter-calm": (750.0, 1150.0, 60.0, 20.0, 0.2),
    "winter-windy": (760.0, 1170.0, 220.0, 80.0, 0.15),
    "shoulder": (650.0, 980.0, 140.0, 60.0, 0.3),
    "summer-peak": (800.0, 1250.0, 70.0, 30.0, 0.2),
    "summer-windy": (780.0, 1200.0, 200.0, 90.0, 0.15),
}


def practical_scenario(day: str = "shoulder", units: int = 10, storage_in_dam: bool = False) -> Scenario:
    """Eight-generator desk-scale system with one of the representative day shapes."""
    if day not in DAY_TYPES:
        raise ModelError(f"unknown day type {day!r}; choose from {sorted(DAY_TYPES)}")
    lo, hi, wmean, wswing, _ = DAY_TYPES[day]
    load = daily_shape(lo, hi, trough_hour=4.0)
    h = np.arange(24)
    wind = np.maximum(wmean + wswing * np.cos((h - 2.0) / 24 * 2 * np.pi), 0.0)
    return Scenario(load, DESK_FLEET, wind, wind.copy(), units, storage_in_dam,
                    PriceBounds(-100.0, 2000.0), name=day)


def day_weights() -> dict:
    return {k: v[-1] for k, v in DAY_TYPES.items()}


# hourly day-ahead prices ($/MWh) for periods 1..24: night trough, morning shoulder, early-evening peak
SYNTHETIC_DA_PRICES = np.array([24.0, 22.0, 21.0, 20.0, 21.0, 24.0, 30.0, 38.0, 42.0, 40.0, 36.0, 33.0,
                                31.0, 30.0, 31.0, 35.0, 58.0, 75.6, 48.0, 38.1, 32.0, 28.0, 25.0, 23.0])


def synthetic_da_prices() -> np.ndarray:
    """24-hour day-ahead price path used for the marginal-value surface demo."""
    return SYNTHETIC_DA_PRICES.copy()


def marginal_value_surface(prices: Sequence[float], spec: StorageSpec, points: int = 401) -> np.ndarray:
    """Deterministic marginal values ``v_t(e)``, shape ``(T+1, points)``."""
    fc = [PriceDistribution.point_mass(p) for p in prices]
    return backward_induction(ValueFunction.linear(0.0, spec.energy, points), fc, spec).marginal_surface()
