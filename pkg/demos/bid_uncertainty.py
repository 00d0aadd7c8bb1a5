"""How forecast spread raises the empty-storage discharge bid, and where it stops.

Run with ``python3 demos/bid_uncertainty.py``.  Takes a few seconds.
"""
import numpy as np

from storage_withholding import (
    PriceBounds,
    StorageSpec,
    bounded_sweep,
    construct_spike_distribution,
    corollary4_bound,
    sigma_sweep,
)
from storage_withholding.withholding import spike_value_at_zero

spec = StorageSpec(power=10.0, energy=40.0, efficiency=0.9, discharge_cost=25.0)
mu = 26.2  # flat mean price, just above the discharge cost

print("Unbounded Gaussian forecasts, 24 periods ahead")
for sigma, bid in sigma_sweep(mu, [0, 5, 50, 150, 500, 1000], spec, T=24, points=401):
    print(f"  sigma {sigma:7.1f} $/MWh -> bid {bid:9.2f} $/MWh")

# with price limits the same spread can only push the bid up to a ceiling
bounds = PriceBounds(5.0, 150.0)
print(f"\nBounded-uniform forecasts inside [{bounds.floor:g}, {bounds.cap:g}]")
for sigma, bid, bound in bounded_sweep([mu] * 24, bounds, [3, 10, 30, 60, 90, 120], spec, points=401):
    print(f"  sigma {sigma:6.1f} -> bid {bid:7.2f}, bound {bound:7.2f}")
print(f"  capped-mean bound over the day: {corollary4_bound(24, mu, bounds, spec):.2f}")
print(f"  long-horizon limit:             {corollary4_bound(np.inf, mu, bounds, spec):.2f}")

# without limits a single two-point law with the same mean reaches any target
print("\nMean-preserving spikes (next-period value 20 $/MWh at full charge increment)")
for target in (100.0, 1000.0, 1e4):
    d = construct_spike_distribution(target, mu, 0.5, spec, v_next_Ec=20.0)
    pts, _ = d.atoms()
    v0 = spike_value_at_zero(d, spec, 20.0)
    print(f"  target {target:8.0f}: prices {pts[1]:10.1f} / {pts[0]:10.1f}, marginal value {v0:9.2f}")
