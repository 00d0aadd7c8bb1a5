"""Backward stochastic dynamic programming over state of charge.

For a price realization ``lam`` and SoC ``e`` the per-period problem is

    Q(e | lam) = max_{p, b}  lam * (p - b) - c * p + V_next(e')
    e' = e + (-p / eta + b * eta) * tau,   0 <= e' <= E,
    0 <= p <= P * 1[lam >= 0],  0 <= b <= P.

Because ``V_next`` is concave and piecewise linear, the optimal post-decision
SoC has a base-stock form: charge up to the SoC where the slope of ``V_next``
drops below ``lam / (tau * eta)``, discharge down to the SoC where it drops
below ``(lam - c) * eta / tau``, otherwise idle.  Between consecutive price
thresholds the optimal action is fixed, so ``Q(e | .)`` is linear in price and
its expectation is a finite sum of partial moments of the price law.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    ModelError,
    NumericalError,
    PriceBounds,
    PriceDistribution,
    StorageSpec,
    ValueFunction,
)


def q_zero_soc(lam: float, v_next_ec: float, v_next_0: float, spec: StorageSpec) -> float:
    """Marginal value at empty storage after seeing price ``lam``.

    Four regimes in increasing price: charge at full power (marginal value
    passes through from ``E_c``), partial charge, idle, discharge.
    """
    if v_next_0 < v_next_ec:
        raise ModelError(f"v_next(0)={v_next_0} < v_next(E_c)={v_next_ec}: not concave")
    eta, tau, c = spec.efficiency, spec.step, spec.discharge_cost
    if lam <= tau * eta * v_next_ec:
        return v_next_ec
    if lam <= tau * eta * v_next_0:
        return lam / (tau * eta)
    if lam <= max(tau * v_next_0 / eta + c, 0.0):
        return v_next_0
    return (lam - c) * eta / tau


def _soc_windows(grid: np.ndarray, spec: StorageSpec):
    lo = np.maximum(0.0, grid - spec.discharge_decrement)
    hi = np.minimum(spec.energy, grid + spec.charge_increment)
    return lo, hi


def _targets(slopes: np.ndarray, grid: np.ndarray, lam: np.ndarray, spec: StorageSpec):
    """Charge-up-to and discharge-down-to SoC levels for each price in ``lam``."""
    eta, tau, c = spec.efficiency, spec.step, spec.discharge_cost
    neg = -slopes
    # number of segments whose slope strictly exceeds the threshold
    k_c = np.searchsorted(neg, -(lam / (tau * eta)), side="left")
    k_d = np.searchsorted(neg, -((lam - c) * eta / tau), side="left")
    x_c = grid[k_c]
    x_d = np.where(lam >= 0, grid[k_d], np.inf)
    return x_c, x_d


def _optimal_q(vf_next: ValueFunction, lam: np.ndarray, spec: StorageSpec):
    """Post-decision SoC, discharge and charge for every (price, grid SoC) pair.

    Returns arrays of shape ``(len(lam), len(grid))``.
    """
    grid = vf_next.breakpoints
    x_c, x_d = _targets(vf_next.slopes, grid, lam, spec)
    lo, hi = _soc_windows(grid, spec)
    e = grid[None, :]
    xc = x_c[:, None]
    xd = x_d[:, None]
    e_next = np.where(e < xc, np.minimum(xc, hi[None, :]),
                      np.where(e > xd, np.maximum(xd, lo[None, :]), e))
    e_next = np.clip(e_next, 0.0, spec.energy)
    delta = e_next - e
    p = np.where(delta < 0, -delta * spec.efficiency / spec.step, 0.0)
    b = np.where(delta > 0, delta / (spec.efficiency * spec.step), 0.0)
    return e_next, p, b


def optimal_action(vf_next: ValueFunction, soc: float, price: float, spec: StorageSpec):
    """``(e_next, p, b)`` maximizing ``Q(soc | price)`` for a single SoC."""
    x_c, x_d = _targets(vf_next.slopes, vf_next.breakpoints, np.array([price]), spec)
    x_c, x_d = float(x_c[0]), float(x_d[0])
    lo = max(0.0, soc - spec.discharge_decrement)
    hi = min(spec.energy, soc + spec.charge_increment)
    if soc < x_c:
        e_next = min(x_c, hi)
    elif soc > x_d:
        e_next = max(x_d, lo)
    else:
        e_next = soc
    delta = e_next - soc
    p = -delta * spec.efficiency / spec.step if delta < 0 else 0.0
    b = delta / (spec.efficiency * spec.step) if delta > 0 else 0.0
    return e_next, p, b


def price_thresholds(vf_next: ValueFunction, spec: StorageSpec) -> np.ndarray:
    """Prices at which the optimal action at some SoC changes."""
    s = np.unique(vf_next.slopes)
    eta, tau, c = spec.efficiency, spec.step, spec.discharge_cost
    return np.unique(np.concatenate([tau * eta * s, c + tau * s / eta, [0.0]]))


def bellman_step(vf_next: ValueFunction, dist: PriceDistribution, spec: StorageSpec,
                 method: str = "exact", nodes: int = 257) -> ValueFunction:
    """One backward step: ``V(e) = E_lam[Q(e | lam)]`` on the breakpoints of ``vf_next``.

    ``method="exact"`` integrates the piecewise-linear ``Q`` in closed form
    against the price law; ``method="quadrature"`` uses Gauss-Legendre panels
    split at the action thresholds (atoms for discrete laws) and exists as
    an independent check.
    """
    if abs(vf_next.energy - spec.energy) > 1e-9 * spec.energy:
        raise ModelError(f"value function domain [0, {vf_next.energy}] != [0, {spec.energy}]")
    c = spec.discharge_cost
    if method == "exact":
        edges = price_thresholds(vf_next, spec)
        F, G = dist.partial_moments(edges)
        mass = np.diff(np.concatenate([[0.0], F, [1.0]]))
        moment = np.diff(np.concatenate([[0.0], G, [_total_moment(dist)]]))
        mids = 0.5 * (edges[:-1] + edges[1:])
        reps = np.concatenate([[edges[0] - 1.0], mids, [edges[-1] + 1.0]])
    elif method == "quadrature":
        reps, mass = dist.quadrature(nodes, breaks=price_thresholds(vf_next, spec))
        total = mass.sum()
        if abs(total - 1.0) > 1e-6:
            raise NumericalError(
                f"quadrature mass {total:.9f} != 1 for {dist.kind.value}"
                f"(mu={dist.mu}, sigma={dist.sigma}); widen the window or add nodes")
        mass = mass / total
        moment = mass * reps
    else:
        raise ModelError(f"unknown expectation method {method!r}")
    if abs(mass.sum() - 1.0) > 1e-9:
        raise NumericalError(f"price law mass sums to {mass.sum()} over the action intervals")
    e_next, p, b = _optimal_q(vf_next, reps, spec)
    base = vf_next(e_next) - c * p
    values = mass @ base + moment @ (p - b)
    return ValueFunction(vf_next.breakpoints, values, check=False)


def _total_moment(dist: PriceDistribution) -> float:
    _, G = dist.partial_moments(np.array([np.inf]))
    return float(G[0])


def marginal_value(vf: ValueFunction, e) -> np.ndarray | float:
    """Largest supergradient of ``vf`` at ``e``: the segment slope inside a
    segment, the left slope at a breakpoint, the first slope at 0."""
    e_arr = np.asarray(e, dtype=float)
    tol = 1e-12 * vf.energy
    if np.any(e_arr < -tol) or np.any(e_arr > vf.energy + tol):
        raise ModelError(f"SoC {e} outside [0, {vf.energy}]")
    g = vf.breakpoints
    idx = np.clip(np.searchsorted(g, e_arr, side="left") - 1, 0, g.size - 2)
    out = vf.slopes[idx]
    return float(out) if out.ndim == 0 else out


def right_marginal_value(vf: ValueFunction, e) -> np.ndarray | float:
    """Slope of the segment to the right of ``e`` (left slope at ``e = E``)."""
    e_arr = np.asarray(e, dtype=float)
    g = vf.breakpoints
    idx = np.clip(np.searchsorted(g, e_arr, side="right") - 1, 0, g.size - 2)
    out = vf.slopes[idx]
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class ValueSeries:
    """Value-to-go functions ``V_0 .. V_T``.

    ``V_t`` is the value of SoC held at the end of period ``t``; it accounts
    for forecasts of periods ``t+1 .. T``.  Bids for period ``t`` use ``V_t``.
    """

    functions: tuple
    forecasts: tuple
    spec: StorageSpec

    @property
    def horizon(self) -> int:
        return len(self.functions) - 1

    def __getitem__(self, t: int) -> ValueFunction:
        return self.functions[t]

    @property
    def end_value(self) -> ValueFunction:
        return self.functions[-1]

    def marginal_surface(self) -> np.ndarray:
        """Array ``(T+1, points)`` of marginal values on the grid."""
        g = self.functions[0].breakpoints
        return np.array([marginal_value(vf, g) for vf in self.functions])

    def zero_soc_bid(self, t: int) -> float:
        """Discharge price of the last stored MWh in period ``t``."""
        s = self.spec
        return max(s.discharge_cost + s.step / s.efficiency * self.functions[t].slopes[0], 0.0)

    def to_csv(self, path, periods: Optional[Sequence[int]] = None, stride: int = 1):
        g = self.functions[0].breakpoints
        periods = range(self.horizon + 1) if periods is None else periods
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["period", "soc", "value", "marginal_value"])
            for t in periods:
                vf = self.functions[t]
                mv = marginal_value(vf, g)
                for i in range(0, g.size, stride):
                    w.writerow([t, f"{g[i]:.10g}", f"{vf.values[i]:.10g}", f"{mv[i]:.10g}"])


def default_end_value(spec: StorageSpec, bounds: Optional[PriceBounds] = None,
                      points: int = 1001) -> ValueFunction:
    """Linear end value: remaining energy sold at the price floor, else worthless."""
    slope = 0.0
    if bounds is not None:
        slope = max(0.0, bounds.floor - spec.discharge_cost) * spec.efficiency
    return ValueFunction.linear(slope, spec.energy, points)


def backward_induction(end_value: ValueFunction, forecasts: Sequence[PriceDistribution],
                       spec: StorageSpec, method: str = "exact", nodes: int = 257) -> ValueSeries:
    """Propagate ``end_value`` backwards through ``forecasts`` (periods 1..T)."""
    T = len(forecasts)
    if T == 0:
        raise ModelError("forecast horizon must contain at least one period")
    fns = [None] * (T + 1)
    fns[T] = end_value
    for t in range(T - 1, -1, -1):
        try:
            fns[t] = bellman_step(fns[t + 1], forecasts[t], spec, method, nodes)
        except (ModelError, NumericalError) as exc:
            raise type(exc)(f"period {t + 1}: {exc}") from exc
    return ValueSeries(tuple(fns), tuple(forecasts), spec)
