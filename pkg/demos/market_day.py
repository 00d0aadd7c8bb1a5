"""One simulated day in the single-generator system, with and without a storage fleet.

Run with ``python3 demos/market_day.py``.
"""
import numpy as np

from storage_withholding import simulate_day
from storage_withholding.experiments import IDEAL_STORAGE, ideal_scenario, practical_scenario

seed = 7
base = simulate_day(ideal_scenario(units=0), None, IDEAL_STORAGE, seed=seed, demand_sigma=150.0)
print(f"no storage: day cost {base.system_cost:,.0f} $")

# one unit is a price taker; twenty identical units bidding the same curve move the price
# by up to 20 * 10 MW * 0.08 $/MWh per MW and end up trading against themselves
for units in (1, 20):
    for sigma in (0.0, 5.0, 30.0):
        day = simulate_day(ideal_scenario(units=units), None, IDEAL_STORAGE, seed=seed,
                           demand_sigma=150.0, forecast_sigma=sigma)
        moved = np.abs(day.prices - base.prices).max()
        print(f"{units:2d} units, forecast sigma {sigma:4.1f}: cost change {day.system_cost - base.system_cost:8.0f} $, "
              f"storage profit {day.storage_profit:8.0f} $, max price change {moved:5.2f} $/MWh")

# the eight-unit system exercises commitment, ramping and wind
day = simulate_day(practical_scenario("summer-peak", units=10), None, IDEAL_STORAGE, seed=seed,
                   demand_sigma=30.0, wind_sigma=0.15, forecast_sigma=10.0)
print(f"\nsummer-peak day: commitment gap {day.schedule.gap:,.0f} $, "
      f"prices {day.prices.min():.1f}..{day.prices.max():.1f} $/MWh, "
      f"SoC path max {day.soc_path.max():.1f} MWh")
