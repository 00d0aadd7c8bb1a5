"""Discharge/charge bid staircases from a period value function."""
from __future__ import annotations

import csv
from typing import Iterable, List, Sequence

import numpy as np

from .core import (
    BidCurve,
    ModelError,
    PriceDistribution,
    Side,
    StorageSpec,
    ValueFunction,
)
from .value import backward_induction, marginal_value, optimal_action, right_marginal_value

DEFAULT_SEGMENTS = 10


def _check(vf: ValueFunction, e_prev: float, spec: StorageSpec, K: int):
    if K < 1:
        raise ModelError(f"segment count must be >= 1, got {K}")
    if not -1e-9 <= e_prev <= spec.energy + 1e-9:
        raise ModelError(f"SoC {e_prev} outside [0, {spec.energy}]")


def max_discharge(e_prev: float, spec: StorageSpec) -> float:
    return max(0.0, min(spec.power, e_prev * spec.efficiency / spec.step))


def max_charge(e_prev: float, spec: StorageSpec) -> float:
    return max(0.0, min(spec.power, (spec.energy - e_prev) / (spec.efficiency * spec.step)))


def discharge_bids(vf: ValueFunction, e_prev: float, spec: StorageSpec,
                   K: int = DEFAULT_SEGMENTS, period: int = 0) -> BidCurve:
    """Offer curve ``o(p) = [c + tau/eta * v(e_prev - tau p / eta)]^+``.

    Each of the ``K`` equal-width segments is priced at its right endpoint,
    taking the marginal value from inside the segment.
    """
    _check(vf, e_prev, spec, K)
    p_max = max_discharge(e_prev, spec)
    if p_max <= 0:
        return BidCurve.empty(Side.DISCHARGE, e_prev, period)
    p_right = p_max * np.arange(1, K + 1) / K
    soc = np.clip(e_prev - spec.step * p_right / spec.efficiency, 0.0, spec.energy)
    v = right_marginal_value(vf, soc)
    prices = np.maximum(spec.discharge_cost + spec.step / spec.efficiency * v, 0.0)
    return BidCurve(Side.DISCHARGE, np.full(K, p_max / K), prices, e_prev, period)


def charge_bids(vf: ValueFunction, e_prev: float, spec: StorageSpec,
                K: int = DEFAULT_SEGMENTS, period: int = 0) -> BidCurve:
    """Bid curve ``d(b) = tau * eta * v(e_prev + b tau eta)``, right-endpoint priced."""
    _check(vf, e_prev, spec, K)
    b_max = max_charge(e_prev, spec)
    if b_max <= 0:
        return BidCurve.empty(Side.CHARGE, e_prev, period)
    b_right = b_max * np.arange(1, K + 1) / K
    soc = np.clip(e_prev + spec.step * spec.efficiency * b_right, 0.0, spec.energy)
    v = marginal_value(vf, soc)
    prices = spec.step * spec.efficiency * v
    return BidCurve(Side.CHARGE, np.full(K, b_max / K), prices, e_prev, period)


def baseline_bids(mu_path: Sequence[float], spec: StorageSpec, end_slope: float = 0.0,
                  e0: float = 0.0, K: int = DEFAULT_SEGMENTS, points: int = 1001,
                  sigmas: Sequence[float] | None = None):
    """Non-withholding baseline: deterministic forecasts, linear end value.

    Returns ``(discharge_curves, charge_curves, soc_path)`` where curves for
    period ``t`` are built at the SoC reached by following the deterministic
    optimum from ``e0``.
    """
    if sigmas is not None and any(s != 0 for s in sigmas):
        raise ModelError("baseline bids are defined only for deterministic forecasts (sigma = 0)")
    forecasts = [PriceDistribution.point_mass(m) for m in mu_path]
    series = backward_induction(ValueFunction.linear(end_slope, spec.energy, points), forecasts, spec)
    soc = e0
    dis, chg, path = [], [], [e0]
    for t, mu in enumerate(mu_path, start=1):
        vf = series[t]
        dis.append(discharge_bids(vf, soc, spec, K, t))
        chg.append(charge_bids(vf, soc, spec, K, t))
        soc = follow_deterministic(vf, soc, mu, spec)
        path.append(soc)
    return dis, chg, path


def follow_deterministic(vf: ValueFunction, soc: float, price: float, spec: StorageSpec) -> float:
    """SoC after acting optimally against a known price, given next value ``vf``."""
    return optimal_action(vf, soc, price, spec)[0]


def bids_to_csv(path, curves: Iterable[BidCurve]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "side", "segment", "quantity_mw", "price"])
        for cv in curves:
            for k, (q, pr) in enumerate(zip(cv.quantities, cv.prices), start=1):
                w.writerow([cv.period, cv.side.value, k, f"{q:.10g}", f"{pr:.10g}"])


def bids_from_csv(path) -> List[BidCurve]:
    rows = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            key = (int(r["period"]), r["side"])
            rows.setdefault(key, []).append((int(r["segment"]), float(r["quantity_mw"]), float(r["price"])))
    out = []
    for (period, side), segs in sorted(rows.items()):
        segs.sort()
        out.append(BidCurve(Side(side), np.array([s[1] for s in segs]),
                            np.array([s[2] for s in segs]), period=period))
    return out
